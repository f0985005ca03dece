#include <atomic>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "pxai/rag.hpp"
#include "pxai/seeding.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using namespace pxai;
using testing::error_kind;

namespace {

const std::string kThreeParagraphs =
    "Exercise-induced angina is chest pain that appears during physical effort.\n\n"
    "ST depression measured after exercise compares the ECG segment at peak effort with rest.\n\n"
    "Thallium scans classify perfusion as normal, fixed, or reversible defects.\n";

std::string reconstruct(std::string_view text, const std::vector<Span>& spans) {
  std::string out;
  std::size_t covered = 0;
  for (const auto& s : spans) {
    REQUIRE(s.begin <= covered);
    REQUIRE(s.end > covered);
    out += text.substr(covered, s.end - covered);
    covered = s.end;
  }
  return out;
}

SourceDocument text_doc(std::string id, std::string body) {
  SourceDocument d;
  d.id = std::move(id);
  d.title = d.id;
  d.body = std::move(body);
  return d;
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pxai_rag_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("chunking") {
  TEST_CASE("three paragraphs give at least three chunks that rebuild the text") {
    const auto spans = chunk_spans(kThreeParagraphs, {500, 50});
    CHECK(spans.size() >= 3);
    CHECK(reconstruct(kThreeParagraphs, spans) == kThreeParagraphs);
  }

  TEST_CASE("long paragraphs are wrapped with the configured overlap") {
    std::string para;
    for (int i = 0; i < 120; ++i) para += "word" + std::to_string(i) + " ";
    const auto spans = chunk_spans(para, {100, 20});
    CHECK(spans.size() > 5);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      CHECK(spans[i].end - spans[i].begin <= 100);
      if (i > 0) CHECK(spans[i - 1].end - spans[i].begin == 20);
    }
    CHECK(reconstruct(para, spans) == para);
  }

  TEST_CASE("random texts always rebuild and respect the size cap") {
    std::mt19937_64 rng(4);
    const std::string alphabet = "abc de\n\n\nf gh\xc3\xa9 ";
    for (int trial = 0; trial < 300; ++trial) {
      std::string text = "x";
      const auto len = rng() % 3000;
      for (std::size_t i = 0; i < len; ++i) text += alphabet[rng() % alphabet.size()];
      const std::size_t max = 8 + rng() % 300;
      const std::size_t overlap = rng() % max;
      const auto spans = chunk_spans(text, {max, overlap});
      for (const auto& s : spans) CHECK(s.end - s.begin <= max);
      CHECK(reconstruct(text, spans) == text);
    }
  }

  TEST_CASE("invalid inputs") {
    CHECK(error_kind([] { chunk_spans("", {}); }) == ErrorKind::kValidation);
    CHECK(error_kind([] { chunk_spans(" \n\n ", {}); }) == ErrorKind::kValidation);
    CHECK(error_kind([] { chunk_spans("text", {50, 50}); }) == ErrorKind::kValidation);
  }
}

TEST_SUITE("embedder") {
  TEST_CASE("deterministic and scale-free in term frequency") {
    const BuiltinEmbedder e(64);
    const std::string s = "Fixed thallium defects suggest prior infarction. ";
    const auto v = e.embed({s, s, s + s});
    CHECK(v[0] == v[1]);
    CHECK(v[0].dot(v[2]) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(v[0].norm() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("vector matches a direct term-frequency computation") {
    const BuiltinEmbedder e(32);
    Vector expect = Vector::Zero(32);
    for (const auto& [tok, count] : std::vector<std::pair<std::string, double>>{{"chest", 2}, {"pain", 1}}) {
      const auto h = mix64(BuiltinEmbedder::bucket(tok));
      expect[static_cast<Eigen::Index>(h % 32)] += (h >> 63) ? -count : count;
    }
    expect.normalize();
    CHECK((e.embed({"Chest pain, CHEST!"})[0] - expect).norm() < 1e-12);
  }

  TEST_CASE("idf lowers the weight of ubiquitous terms and changes the id") {
    const auto fitted = BuiltinEmbedder::fit(64, {"the heart", "the thyroid", "the nodule"});
    const BuiltinEmbedder plain(64);
    CHECK(fitted->id() != plain.id());
    const auto v = fitted->embed({"the heart"})[0];
    const auto the = fitted->embed({"the"})[0];
    const auto heart = fitted->embed({"heart"})[0];
    CHECK(v.dot(heart) > v.dot(the));
    const auto again = BuiltinEmbedder::from_idf_json(64, fitted->idf_json());
    CHECK(again->id() == fitted->id());
  }

  TEST_CASE("empty and token-free strings are rejected") {
    const BuiltinEmbedder e(16);
    CHECK(error_kind([&] { e.embed({""}); }) == ErrorKind::kValidation);
    CHECK(error_kind([&] { e.embed({"?!"}); }) == ErrorKind::kValidation);
    CHECK(error_kind([&] { e.embed({}); }) == ErrorKind::kValidation);
  }
}

TEST_SUITE("vector store") {
  TEST_CASE("self query ranks first with score 1 and k is clamped") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(128));
    CHECK(store.query("anything").empty());
    CHECK(store.ingest(text_doc("angina", kThreeParagraphs), {500, 50}) == 3);
    const auto records = store.records();
    for (const auto& r : records) {
      const auto hits = store.query(r.text, 10);
      CHECK(hits.size() == 3);
      CHECK(hits.front().id == r.id);
      CHECK(hits.front().score == doctest::Approx(1.0).epsilon(1e-6));
      for (const auto& h : hits) {
        CHECK(h.score <= 1.0);
        CHECK(h.score >= -1.0);
      }
    }
  }

  TEST_CASE("identical vectors tie-break by chunk id") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(32));
    store.ingest(text_doc("zeta", "same words here"));
    store.ingest(text_doc("alpha", "same words here"));
    const auto hits = store.query("same words here", 2);
    CHECK(hits[0].id == "alpha:0000");
    CHECK(hits[1].id == "zeta:0000");
    CHECK(hits[0].score == hits[1].score);
  }

  TEST_CASE("re-ingesting replaces and size tracks per-document counts") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(32));
    store.ingest(text_doc("a", kThreeParagraphs), {500, 50});
    const auto before = store.size();
    store.ingest(text_doc("a", kThreeParagraphs), {500, 50});
    CHECK(store.size() == before);

    std::mt19937_64 rng(2);
    std::map<std::string, std::size_t> expect;
    for (int step = 0; step < 40; ++step) {
      const std::string id = "doc" + std::to_string(rng() % 5);
      std::string body;
      const auto paras = 1 + rng() % 4;
      for (std::size_t p = 0; p < paras; ++p) body += "paragraph " + std::to_string(p) + " of " + id + "\n\n";
      expect[id] = store.ingest(text_doc(id, body), {200, 10});
    }
    expect["a"] = before;
    std::size_t total = 0;
    for (const auto& [id, n] : expect) total += n;
    CHECK(store.size() == total);
    CHECK(store.documents() == expect);
  }

  TEST_CASE("empty documents are rejected") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(32));
    CHECK(error_kind([&] { store.ingest(text_doc("e", "")); }) == ErrorKind::kValidation);
  }

  TEST_CASE("persist and restore give identical rankings") {
    const auto emb = BuiltinEmbedder::fit(96, {kThreeParagraphs, "thyroid nodules and recurrence"});
    VectorStore store(emb);
    store.ingest(text_doc("heart", kThreeParagraphs), {120, 20});
    SourceDocument fig;
    fig.id = "fig1";
    fig.media = Media::kImageReference;
    fig.body = "Thallium perfusion scan showing a reversible defect";
    fig.image_path = "images/thallium.png";
    store.ingest(fig);
    const auto path = temp_file("store.jsonl");
    store.persist(path);

    const auto restored = VectorStore::restore(path);
    CHECK(restored->embedder_id() == store.embedder_id());
    const auto again = VectorStore::restore(path, emb);
    for (const std::string q : {"reversible defect", "exercise pain", "segment at rest"}) {
      const auto a = store.query(q, 5);
      const auto b = restored->query(q, 5);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].score == b[i].score);
      }
      CHECK(again->query(q, 5).front().id == a.front().id);
    }
    const auto hit = restored->query("thallium perfusion scan", 1).front();
    CHECK(hit.media == Media::kImageReference);
    CHECK(hit.image_path == "images/thallium.png");
  }

  TEST_CASE("truncated or mismatched files") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(32));
    store.ingest(text_doc("heart", kThreeParagraphs), {100, 10});
    const auto path = temp_file("full.jsonl");
    store.persist(path);
    std::string data;
    {
      std::ifstream in(path, std::ios::binary);
      data.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto cut = temp_file("cut.jsonl");
    {
      std::ofstream out(cut, std::ios::binary);
      out << data.substr(0, data.size() - 40);
    }
    try {
      VectorStore::restore(cut);
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    const auto other = std::make_shared<BuiltinEmbedder>(64);
    CHECK(error_kind([&] { VectorStore::restore(path, other); }) == ErrorKind::kCompatibility);
  }

  TEST_CASE("concurrent readers during ingestion") {
    VectorStore store(std::make_shared<BuiltinEmbedder>(64));
    store.ingest(text_doc("base", kThreeParagraphs));
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::vector<std::thread> readers;
    for (int r = 0; r < 3; ++r)
      readers.emplace_back([&] {
        while (!done) {
          const auto hits = store.query("thallium", 4);
          if (hits.empty()) ++bad;
        }
      });
    for (int i = 0; i < 50; ++i) store.ingest(text_doc("d" + std::to_string(i % 7), "thallium scan " + std::to_string(i)));
    done = true;
    for (auto& t : readers) t.join();
    CHECK(bad == 0);
    CHECK(store.size() == 3 + 7);
  }
}

TEST_CASE("remote embedder: success, retries, and atomic ingest") {
  testing::StubServer stub;
  std::atomic<int> calls{0};
  std::atomic<bool> healthy{true};
  stub.server().Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    if (!healthy) {
      res.status = 503;
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& t : body["texts"]) {
      const auto s = t.get<std::string>();
      vectors.push_back({static_cast<double>(s.size()), 1.0, static_cast<double>(s.front())});
    }
    res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
  });
  stub.start();

  const auto emb = std::make_shared<RemoteEmbedder>(stub.url(), "test-model", 3, std::chrono::milliseconds(2000), 3);
  CHECK(emb->id() == "remote:test-model");
  const auto v = emb->embed({"abc", "abc"});
  CHECK(v[0] == v[1]);
  CHECK(v[0].norm() == doctest::Approx(1.0));

  VectorStore store(emb);
  store.ingest(text_doc("a", kThreeParagraphs), {500, 50});
  const auto before = store.records();
  CHECK(store.query("Exercise", 1).size() == 1);

  healthy = false;
  calls = 0;
  try {
    store.ingest(text_doc("a", "replacement text"));
    FAIL("expected retriable error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kRetriable);
    CHECK(std::string(e.what()).find("3 attempt") != std::string::npos);
  }
  CHECK(calls == 3);
  CHECK(store.records().size() == before.size());
  CHECK(store.records()[0].text == before[0].text);

  // Restoring a remote-built store needs the embedder configured.
  healthy = true;
  const auto path = temp_file("remote.jsonl");
  store.persist(path);
  CHECK(error_kind([&] { VectorStore::restore(path); }) == ErrorKind::kCompatibility);
  CHECK(VectorStore::restore(path, emb)->size() == store.size());
}
