#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/rag.hpp"

namespace pxai {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

// Paragraph spans: a paragraph ends after a run of whitespace containing at
// least two newlines. The run belongs to the paragraph before it.
std::vector<Span> paragraphs(std::string_view text) {
  std::vector<Span> out;
  std::size_t start = 0, i = 0;
  while (i < text.size()) {
    if (!is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    int newlines = 0;
    while (j < text.size() && is_space(text[j])) newlines += text[j++] == '\n';
    if (newlines >= 2 && j < text.size() && i > start) {
      out.push_back({start, j});
      start = j;
    }
    i = j;
  }
  if (start < text.size()) out.push_back({start, text.size()});
  return out;
}

}  // namespace

std::vector<Span> chunk_spans(std::string_view text, const ChunkingConfig& cfg) {
  if (cfg.max_chunk_chars == 0) fail(ErrorKind::kValidation, "max_chunk_chars must be >= 1");
  if (cfg.overlap_chars >= cfg.max_chunk_chars)
    fail(ErrorKind::kValidation, "overlap_chars must be smaller than max_chunk_chars");
  if (std::all_of(text.begin(), text.end(), is_space))
    fail(ErrorKind::kValidation, "document has no text");

  std::vector<Span> out;
  for (const auto& para : paragraphs(text)) {
    std::size_t start = para.begin;
    std::size_t covered = para.begin;
    for (;;) {
      if (para.end - start <= cfg.max_chunk_chars) {
        out.push_back({start, para.end});
        break;
      }
      std::size_t end = start + cfg.max_chunk_chars;
      // Prefer a break after whitespace in the second half of the window.
      std::size_t soft = end;
      while (soft > start + cfg.max_chunk_chars / 2 && !is_space(text[soft - 1])) --soft;
      if (soft > start + cfg.max_chunk_chars / 2 && soft > covered) end = soft;
      while (end > covered + 1 && is_continuation(text[end])) --end;
      if (end <= covered) {
        start = covered;  // no room for overlap
        continue;
      }
      out.push_back({start, end});
      covered = end;
      std::size_t next = end - std::min(cfg.overlap_chars, end - start - 1);
      while (next < end && is_continuation(text[next])) ++next;
      start = next;
    }
  }
  return out;
}

std::vector<SourceDocument> load_knowledge_base(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    fail(ErrorKind::kConfig, fmt::format("knowledge base '{}' is not a directory", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<SourceDocument> docs;
  for (const auto& path : files) {
    const auto name = path.filename().string();
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    if (name.ends_with(".image.json")) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(buf.str());
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kFormat, fmt::format("{}: {}", path.string(), e.what()));
      }
      SourceDocument d;
      d.media = Media::kImageReference;
      d.id = j.value("id", name.substr(0, name.size() - 11));
      d.title = j.value("title", d.id);
      d.body = j.value("caption", "");
      d.image_path = j.value("path", "");
      docs.push_back(std::move(d));
    } else if (path.extension() == ".md" || path.extension() == ".txt") {
      SourceDocument d;
      d.id = path.stem().string();
      d.body = buf.str();
      d.title = d.id;
      std::istringstream lines(d.body);
      std::string rest;
      bool titled = false;
      for (std::string line; std::getline(lines, line);) {
        if (!titled && line.starts_with("# ")) {
          d.title = line.substr(2);
          titled = true;
          continue;
        }
        rest += line + "\n";
      }
      d.body = rest;
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

}  // namespace pxai
