#!/usr/bin/env python3
"""Generate data/thyroid_synthetic.csv.

Synthetic stand-in for the differentiated thyroid cancer recurrence table
(16 clinical features + Recurred label). Column names and category sets follow
the public dataset; values come from a latent-risk generative model so the file
can be shipped and regenerated offline. Deterministic for a fixed seed.
"""
import argparse
import csv
import math
import random

COLUMNS = [
    "Age", "Gender", "Smoking", "Hx Smoking", "Hx Radiothreapy",
    "Thyroid Function", "Physical Examination", "Adenopathy", "Pathology",
    "Focality", "Risk", "T", "N", "M", "Stage", "Response", "Recurred",
]


def pick(rng, options, weights):
    return rng.choices(options, weights=weights, k=1)[0]


def make_row(rng):
    risk_latent = rng.gauss(0.0, 1.0)
    age = int(min(82, max(15, round(rng.gauss(41 + 6 * max(risk_latent, 0), 14)))))
    male = rng.random() < (0.15 + 0.15 * (risk_latent > 0.8))
    gender = "M" if male else "F"
    smoking = "Yes" if rng.random() < (0.35 if male else 0.05) else "No"
    hx_smoking = "Yes" if rng.random() < 0.07 else "No"
    hx_radio = "Yes" if rng.random() < 0.02 + 0.03 * (risk_latent > 1.0) else "No"
    thyroid_fn = pick(rng, ["Euthyroid", "Clinical Hyperthyroidism", "Subclinical Hypothyroidism",
                            "Clinical Hypothyroidism", "Subclinical Hyperthyroidism"], [86, 5, 4, 3, 2])
    exam = pick(rng, ["Single nodular goiter-left", "Multinodular goiter", "Single nodular goiter-right",
                      "Normal", "Diffuse goiter"], [27, 37, 36, 2, 2])
    if risk_latent > 1.0:
        adeno = pick(rng, ["Right", "Extensive", "Left", "Bilateral", "Posterior"], [30, 10, 20, 35, 5])
    elif risk_latent > 0.3:
        adeno = pick(rng, ["No", "Right", "Left", "Bilateral"], [50, 20, 15, 15])
    else:
        adeno = pick(rng, ["No", "Right", "Left"], [92, 5, 3])
    pathology = pick(rng, ["Micropapillary", "Papillary", "Follicular", "Hurthel cell"], [12, 76, 7, 5])
    focality = "Multi-Focal" if rng.random() < 1 / (1 + math.exp(-(risk_latent - 0.2) * 2)) else "Uni-Focal"
    if risk_latent > 1.2:
        risk = "High"
    elif risk_latent > 0.2:
        risk = "Intermediate"
    else:
        risk = "Low"
    t_idx = min(6, max(0, int(round(2 + 1.3 * risk_latent + rng.gauss(0, 0.8)))))
    t_stage = ["T1a", "T1b", "T2", "T3a", "T3b", "T4a", "T4b"][t_idx]
    if adeno == "No":
        n_stage = "N0" if rng.random() < 0.9 else "N1a"
    else:
        n_stage = "N1b" if rng.random() < 0.75 else "N1a"
    m_stage = "M1" if risk_latent > 1.6 and rng.random() < 0.5 else "M0"
    if m_stage == "M1":
        stage = "IVB" if age >= 55 else "II"
    elif age < 55:
        stage = "I"
    elif t_idx >= 5:
        stage = "IVA"
    elif n_stage != "N0" or t_idx >= 3:
        stage = "III" if rng.random() < 0.4 else "II"
    else:
        stage = "I"
    outcome = risk_latent + rng.gauss(0, 0.55)
    if outcome > 1.1:
        response = "Structural Incomplete"
    elif outcome > 0.5:
        response = pick(rng, ["Biochemical Incomplete", "Indeterminate"], [55, 45])
    elif outcome > 0.0:
        response = pick(rng, ["Indeterminate", "Excellent"], [45, 55])
    else:
        response = "Excellent"
    p_recur = {"Structural Incomplete": 0.93, "Biochemical Incomplete": 0.45,
               "Indeterminate": 0.12, "Excellent": 0.01}[response]
    if risk == "High":
        p_recur = min(0.99, p_recur + 0.25)
    recurred = "Yes" if rng.random() < p_recur else "No"
    return [age, gender, smoking, hx_smoking, hx_radio, thyroid_fn, exam, adeno, pathology,
            focality, risk, t_stage, n_stage, m_stage, stage, response, recurred]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=383)
    ap.add_argument("--seed", type=int, default=915)
    ap.add_argument("--out", default="data/thyroid_synthetic.csv")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for _ in range(args.rows):
            w.writerow(make_row(rng))


if __name__ == "__main__":
    main()
