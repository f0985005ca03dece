#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pxai/linalg.hpp"

namespace pxai {

enum class Media { kText, kImageReference };

struct SourceDocument {
  std::string id;
  std::string title;
  Media media = Media::kText;
  std::string body;        // text, or the caption of an image reference
  std::string image_path;  // image references only; never opened
};

// Text documents: *.md / *.txt (title = first "# " heading, else file stem).
// Image references: *.image.json {"id", "title", "caption", "path"}.
std::vector<SourceDocument> load_knowledge_base(const std::filesystem::path& dir);

struct ChunkingConfig {
  std::size_t max_chunk_chars = 800;
  std::size_t overlap_chars = 100;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive, byte offsets
};

// Paragraph spans (each keeps its trailing blank-line separator), hard-wrapped
// to max_chunk_chars with overlap inside long paragraphs. Throws kValidation on
// empty text or overlap >= max.
std::vector<Span> chunk_spans(std::string_view text, const ChunkingConfig& cfg);

class Embedder {
 public:
  virtual ~Embedder() = default;
  // One unit-norm vector per text. Throws kValidation on empty input.
  virtual std::vector<Vector> embed(const std::vector<std::string>& texts) const = 0;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
};

using EmbedderPtr = std::shared_ptr<const Embedder>;

std::vector<std::string> tokenize(std::string_view text);

// Hashed term frequency x IDF over a 2^20 bucket space, folded into `dimension`
// signed coordinates and L2-normalized.
class BuiltinEmbedder final : public Embedder {
 public:
  static constexpr std::uint32_t kHashBits = 20;

  explicit BuiltinEmbedder(std::size_t dimension = 256, std::map<std::uint32_t, double> idf = {},
                           double default_idf = 1.0);
  // Smoothed IDF, log((1 + n) / (1 + df)) + 1, with unseen buckets at the maximum.
  static std::shared_ptr<BuiltinEmbedder> fit(std::size_t dimension,
                                              const std::vector<std::string>& corpus);

  std::vector<Vector> embed(const std::vector<std::string>& texts) const override;
  std::string id() const override { return id_; }
  std::size_t dimension() const override { return dimension_; }

  nlohmann::json idf_json() const;
  static std::shared_ptr<BuiltinEmbedder> from_idf_json(std::size_t dimension, const nlohmann::json& j);

  static std::uint32_t bucket(std::string_view token);

 private:
  std::size_t dimension_;
  std::map<std::uint32_t, double> idf_;
  double default_idf_;
  std::string id_;
};

// POST {endpoint}/embed {"texts": [...]} -> {"vectors": [[...]]}; retried, then kRetriable.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(std::string endpoint, std::string model_id, std::size_t dimension,
                 std::chrono::milliseconds timeout = std::chrono::milliseconds(10000),
                 int attempts = 3);

  std::vector<Vector> embed(const std::vector<std::string>& texts) const override;
  std::string id() const override { return "remote:" + model_id_; }
  std::size_t dimension() const override { return dimension_; }

 private:
  std::string endpoint_;
  std::string model_id_;
  std::size_t dimension_;
  std::chrono::milliseconds timeout_;
  int attempts_;
};

struct EmbeddedChunk {
  std::string id;  // "<doc>:<ordinal, 4 digits>"
  std::string doc;
  Span span;
  std::string text;
  Media media = Media::kText;
  std::string image_path;
  Vector vector;
};

struct Hit {
  std::string id;
  std::string doc;
  std::string text;
  Media media = Media::kText;
  std::string image_path;
  double score = 0.0;
};

class VectorStore {
 public:
  explicit VectorStore(EmbedderPtr embedder);
  VectorStore(const VectorStore&) = delete;
  VectorStore& operator=(const VectorStore&) = delete;

  // Replaces any chunks previously ingested under doc.id. Atomic per document.
  std::size_t ingest(const SourceDocument& doc, const ChunkingConfig& cfg = {});
  std::vector<Hit> query(std::string_view text, std::size_t k = 4) const;
  std::vector<Hit> query_vector(const Vector& v, std::size_t k = 4) const;

  std::size_t size() const;
  std::map<std::string, std::size_t> documents() const;
  std::vector<EmbeddedChunk> records() const;
  std::size_t dimension() const { return dimension_; }
  std::string embedder_id() const { return embedder_id_; }
  const EmbedderPtr& embedder() const { return embedder_; }

  void persist(const std::filesystem::path& path) const;
  // `configured` may be null: a built-in embedder is rebuilt from the file.
  // Throws kCompatibility when the file disagrees with `configured`.
  static std::unique_ptr<VectorStore> restore(const std::filesystem::path& path,
                                              EmbedderPtr configured = nullptr);

 private:
  EmbedderPtr embedder_;
  std::size_t dimension_;
  std::string embedder_id_;
  mutable std::shared_mutex mu_;
  std::vector<EmbeddedChunk> records_;
};

}  // namespace pxai
