#include <fstream>
#include <sstream>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/predictors.hpp"

namespace pxai {

void save_predictor(const Predictor& p, const std::filesystem::path& path) {
  nlohmann::json body;
  if (const auto* mlp = dynamic_cast<const MlpPredictor*>(&p)) {
    body = {{"kind", "mlp"}, {"model", mlp->to_json()}};
  } else if (const auto* rf = dynamic_cast<const RandomForestPredictor*>(&p)) {
    body = {{"kind", "random_forest"}, {"model", rf->to_json()}};
  } else {
    fail(ErrorKind::kUnsupported,
         fmt::format("cannot save predictor of kind '{}'", to_string(p.kind())));
  }
  body["feature_count"] = p.feature_count();
  body["class_count"] = p.class_count();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kFormat, fmt::format("cannot write '{}'", tmp));
    out << kModelMagic << '\n' << body.dump() << '\n';
    if (!out) fail(ErrorKind::kFormat, fmt::format("write to '{}' failed", tmp));
  }
  std::filesystem::rename(tmp, path);
}

PredictorPtr load_predictor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kFormat, fmt::format("cannot open model file '{}'", path.string()));
  std::string magic;
  std::getline(in, magic);
  if (magic != kModelMagic) {
    if (magic.starts_with("PXAI-MODEL/"))
      fail(ErrorKind::kFormat, fmt::format("unsupported model file version '{}', expected '{}'",
                                           magic, kModelMagic));
    fail(ErrorKind::kFormat, fmt::format("'{}' is not a model file", path.string()));
  }
  std::stringstream rest;
  rest << in.rdbuf();
  try {
    const auto body = nlohmann::json::parse(rest.str());
    const auto kind = body.at("kind").get<std::string>();
    PredictorPtr p;
    if (kind == "mlp") {
      p = MlpPredictor::from_json(body.at("model"));
    } else if (kind == "random_forest") {
      p = RandomForestPredictor::from_json(body.at("model"));
    } else {
      fail(ErrorKind::kFormat, fmt::format("unknown model kind '{}'", kind));
    }
    if (p->feature_count() != body.at("feature_count").get<std::size_t>() ||
        p->class_count() != body.at("class_count").get<std::size_t>())
      fail(ErrorKind::kFormat, "model header does not match its parameters");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("corrupt model file '{}': {}", path.string(), e.what()));
  }
}

}  // namespace pxai
