#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/rag.hpp"

namespace pxai {
namespace {

constexpr int kStoreVersion = 1;

std::string media_name(Media m) { return m == Media::kText ? "text" : "image"; }

}  // namespace

VectorStore::VectorStore(EmbedderPtr embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) fail(ErrorKind::kConfig, "vector store needs an embedder");
  dimension_ = embedder_->dimension();
  embedder_id_ = embedder_->id();
}

std::size_t VectorStore::ingest(const SourceDocument& doc, const ChunkingConfig& cfg) {
  if (doc.id.empty()) fail(ErrorKind::kValidation, "document id is empty");
  if (doc.body.empty()) fail(ErrorKind::kValidation, fmt::format("document '{}' is empty", doc.id));
  const auto spans = chunk_spans(doc.body, cfg);
  std::vector<std::string> texts;
  for (const auto& s : spans) texts.push_back(doc.body.substr(s.begin, s.end - s.begin));
  // Embedding happens before taking the lock; a failure leaves the store untouched.
  const auto vectors = embedder_->embed(texts);
  if (vectors.size() != texts.size()) fail(ErrorKind::kProtocol, "embedder returned the wrong number of vectors");

  std::vector<EmbeddedChunk> fresh;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (static_cast<std::size_t>(vectors[i].size()) != dimension_)
      fail(ErrorKind::kCompatibility, "embedding dimension differs from the store");
    fresh.push_back({fmt::format("{}:{:04d}", doc.id, i), doc.id, spans[i], texts[i], doc.media,
                     doc.image_path, vectors[i]});
  }
  std::unique_lock lock(mu_);
  std::erase_if(records_, [&](const EmbeddedChunk& c) { return c.doc == doc.id; });
  for (auto& c : fresh) records_.push_back(std::move(c));
  std::sort(records_.begin(), records_.end(),
            [](const EmbeddedChunk& a, const EmbeddedChunk& b) { return a.id < b.id; });
  return spans.size();
}

std::vector<Hit> VectorStore::query(std::string_view text, std::size_t k) const {
  return query_vector(embedder_->embed({std::string(text)}).front(), k);
}

std::vector<Hit> VectorStore::query_vector(const Vector& v, std::size_t k) const {
  if (static_cast<std::size_t>(v.size()) != dimension_)
    fail(ErrorKind::kCompatibility, "query vector dimension differs from the store");
  std::shared_lock lock(mu_);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i)
    scored.emplace_back(std::clamp(records_[i].vector.dot(v), -1.0, 1.0), i);
  // records_ is sorted by id, so a stable sort by score keeps ties in id order.
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Hit> out;
  for (std::size_t r = 0; r < std::min(k, scored.size()); ++r) {
    const auto& c = records_[scored[r].second];
    out.push_back({c.id, c.doc, c.text, c.media, c.image_path, scored[r].first});
  }
  return out;
}

std::size_t VectorStore::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::map<std::string, std::size_t> VectorStore::documents() const {
  std::shared_lock lock(mu_);
  std::map<std::string, std::size_t> out;
  for (const auto& c : records_) ++out[c.doc];
  return out;
}

std::vector<EmbeddedChunk> VectorStore::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

void VectorStore::persist(const std::filesystem::path& path) const {
  std::shared_lock lock(mu_);
  nlohmann::json header{{"version", kStoreVersion},
                        {"dimension", dimension_},
                        {"embedder_id", embedder_id_},
                        {"count", records_.size()}};
  if (const auto* b = dynamic_cast<const BuiltinEmbedder*>(embedder_.get())) header["idf"] = b->idf_json();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kFormat, fmt::format("cannot write '{}'", tmp));
    out << header.dump() << '\n';
    for (const auto& c : records_) {
      nlohmann::json r{{"id", c.id},
                       {"doc", c.doc},
                       {"span", {c.span.begin, c.span.end}},
                       {"text", c.text},
                       {"media", media_name(c.media)},
                       {"vector", std::vector<double>(c.vector.data(), c.vector.data() + c.vector.size())}};
      if (!c.image_path.empty()) r["image_path"] = c.image_path;
      out << r.dump() << '\n';
    }
    if (!out) fail(ErrorKind::kFormat, fmt::format("write to '{}' failed", tmp));
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<VectorStore> VectorStore::restore(const std::filesystem::path& path,
                                                  EmbedderPtr configured) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kFormat, fmt::format("cannot open vector store '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();

  std::vector<std::pair<std::size_t, nlohmann::json>> lines;
  std::size_t offset = 0;
  while (offset < data.size()) {
    const auto nl = data.find('\n', offset);
    if (nl == std::string::npos)
      fail(ErrorKind::kFormat, fmt::format("vector store truncated at byte {}", offset));
    try {
      lines.emplace_back(offset, nlohmann::json::parse(data.substr(offset, nl - offset)));
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kFormat, fmt::format("corrupt vector store record at byte {}", offset));
    }
    offset = nl + 1;
  }
  if (lines.empty()) fail(ErrorKind::kFormat, "vector store file is empty");

  const auto& header = lines.front().second;
  std::size_t dimension = 0, count = 0;
  std::string embedder_id;
  try {
    if (header.at("version").get<int>() != kStoreVersion)
      fail(ErrorKind::kFormat, fmt::format("unsupported vector store version {}", header["version"].dump()));
    dimension = header.at("dimension").get<std::size_t>();
    embedder_id = header.at("embedder_id").get<std::string>();
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kFormat, "vector store header is malformed at byte 0");
  }
  if (lines.size() - 1 != count)
    fail(ErrorKind::kFormat, fmt::format("vector store truncated at byte {}: header declares {} records, found {}",
                                         data.size(), count, lines.size() - 1));

  EmbedderPtr embedder = configured;
  if (embedder) {
    if (embedder->id() != embedder_id || embedder->dimension() != dimension)
      fail(ErrorKind::kCompatibility,
           fmt::format("vector store was built with '{}' (dimension {}), configured embedder is '{}' (dimension {})",
                       embedder_id, dimension, embedder->id(), embedder->dimension()));
  } else if (header.contains("idf")) {
    embedder = BuiltinEmbedder::from_idf_json(dimension, header["idf"]);
    if (embedder->id() != embedder_id)
      fail(ErrorKind::kFormat, "vector store IDF table does not match its embedder id");
  } else {
    fail(ErrorKind::kCompatibility,
         fmt::format("vector store needs embedder '{}'; none configured", embedder_id));
  }

  auto store = std::make_unique<VectorStore>(embedder);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [at, r] = lines[i];
    try {
      EmbeddedChunk c;
      c.id = r.at("id").get<std::string>();
      c.doc = r.at("doc").get<std::string>();
      c.span = {r.at("span").at(0).get<std::size_t>(), r.at("span").at(1).get<std::size_t>()};
      c.text = r.at("text").get<std::string>();
      c.media = r.value("media", "text") == "image" ? Media::kImageReference : Media::kText;
      c.image_path = r.value("image_path", "");
      const auto v = r.at("vector").get<std::vector<double>>();
      if (v.size() != dimension)
        fail(ErrorKind::kFormat, fmt::format("record at byte {} has dimension {}", at, v.size()));
      c.vector = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
      store->records_.push_back(std::move(c));
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kFormat, fmt::format("malformed vector store record at byte {}", at));
    }
  }
  std::sort(store->records_.begin(), store->records_.end(),
            [](const EmbeddedChunk& a, const EmbeddedChunk& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < store->records_.size(); ++i)
    if (store->records_[i].id == store->records_[i - 1].id)
      fail(ErrorKind::kFormat, fmt::format("duplicate chunk id '{}'", store->records_[i].id));
  return store;
}

}  // namespace pxai
