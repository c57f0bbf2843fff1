#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctikg::corpus {

enum class SourceCategory { news, cve, apt_report };
enum class Authenticity { true_cti, fake_cti, unknown };

std::string_view to_string(SourceCategory c);
std::string_view to_string(Authenticity a);
SourceCategory parse_category(std::string_view s);
Authenticity parse_authenticity(std::string_view s);

/// One unit of CTI text.
struct Document {
  std::string id;
  SourceCategory source_category = SourceCategory::news;
  std::string title;
  std::string body;
  std::optional<std::string> published;  // YYYY-MM-DD
  std::string provenance;
  Authenticity authenticity = Authenticity::true_cti;

  bool operator==(const Document&) const = default;
};

nlohmann::json to_json(const Document& doc);

/// Result of reading a JSONL file: accepted documents plus one diagnostic per
/// rejected line ("line N: reason").
struct IngestResult {
  std::vector<Document> documents;
  std::vector<std::string> diagnostics;
};

/// Reads a source export. When `category` is given it is assigned to every
/// record (a record naming a different category is rejected); otherwise each
/// record must carry source_category. Missing authenticity means true_cti.
/// Lines holding a {"_meta": ...} object are skipped.
/// Errors: unreadable file (Errc::io), no valid record (Errc::empty_input).
IngestResult ingest(const std::filesystem::path& path,
                    std::optional<SourceCategory> category = std::nullopt);
IngestResult ingest_text(std::string_view jsonl, std::optional<SourceCategory> category,
                         std::string_view origin = "<memory>");

/// Strict reader for files written by write_corpus: any bad record is an error.
std::vector<Document> load_corpus(const std::filesystem::path& path);

/// One JSON object per line. A non-null `meta` is written first as {"_meta": meta}.
std::string to_jsonl(std::span<const Document> docs, const nlohmann::json* meta = nullptr);
void write_corpus(const std::filesystem::path& path, std::span<const Document> docs,
                  const nlohmann::json* meta = nullptr);

const Document* find(std::span<const Document> docs, std::string_view id);

}  // namespace ctikg::corpus
