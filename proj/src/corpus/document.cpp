#include "ctikg/corpus/document.hpp"

#include <set>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"

namespace ctikg::corpus {

using nlohmann::json;

std::string_view to_string(SourceCategory c) {
  switch (c) {
    case SourceCategory::news: return "news";
    case SourceCategory::cve: return "cve";
    case SourceCategory::apt_report: return "apt_report";
  }
  return "?";
}

std::string_view to_string(Authenticity a) {
  switch (a) {
    case Authenticity::true_cti: return "true_cti";
    case Authenticity::fake_cti: return "fake_cti";
    case Authenticity::unknown: return "unknown";
  }
  return "?";
}

SourceCategory parse_category(std::string_view s) {
  if (s == "news") return SourceCategory::news;
  if (s == "cve") return SourceCategory::cve;
  if (s == "apt_report") return SourceCategory::apt_report;
  fail(Errc::invalid_argument, "unknown source category '" + std::string(s) +
                                   "' (expected news, cve or apt_report)");
}

Authenticity parse_authenticity(std::string_view s) {
  if (s == "true_cti") return Authenticity::true_cti;
  if (s == "fake_cti") return Authenticity::fake_cti;
  if (s == "unknown") return Authenticity::unknown;
  fail(Errc::invalid_argument, "unknown authenticity '" + std::string(s) + "'");
}

json to_json(const Document& doc) {
  json j;
  j["id"] = doc.id;
  j["source_category"] = to_string(doc.source_category);
  j["title"] = doc.title;
  j["body"] = doc.body;
  if (doc.published) j["published"] = *doc.published;
  j["provenance"] = doc.provenance;
  j["authenticity"] = to_string(doc.authenticity);
  return j;
}

namespace {

bool is_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing \"") + key + "\"");
  if (!it->is_string()) throw std::invalid_argument(std::string("\"") + key + "\" is not a string");
  return it->get<std::string>();
}

std::string optional_string(const json& j, const char* key, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw std::invalid_argument(std::string("\"") + key + "\" is not a string");
  return it->get<std::string>();
}

Document document_from_json(const json& j, std::optional<SourceCategory> category,
                            std::string_view origin) {
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  static const std::set<std::string> known{"id",         "source_category", "title",
                                           "body",       "published",       "provenance",
                                           "authenticity"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown field \"" + key + "\"");
  }
  Document doc;
  doc.id = required_string(j, "id");
  if (text::trim(doc.id).empty()) throw std::invalid_argument("empty \"id\"");
  doc.body = required_string(j, "body");
  if (text::trim(doc.body).empty()) throw std::invalid_argument("empty \"body\"");
  doc.title = optional_string(j, "title", "");

  const std::string cat = optional_string(j, "source_category", "");
  if (category) {
    if (!cat.empty() && cat != to_string(*category)) {
      throw std::invalid_argument("source_category \"" + cat + "\" does not match --category " +
                                  std::string(to_string(*category)));
    }
    doc.source_category = *category;
  } else {
    if (cat.empty()) throw std::invalid_argument("missing \"source_category\"");
    try {
      doc.source_category = parse_category(cat);
    } catch (const Error& e) {
      throw std::invalid_argument(e.what());
    }
  }

  const std::string published = optional_string(j, "published", "");
  if (!published.empty()) {
    if (!is_date(published)) throw std::invalid_argument("\"published\" is not YYYY-MM-DD");
    doc.published = published;
  }
  doc.provenance = optional_string(j, "provenance", std::string(origin));
  try {
    doc.authenticity = parse_authenticity(optional_string(j, "authenticity", "true_cti"));
  } catch (const Error& e) {
    throw std::invalid_argument(e.what());
  }
  return doc;
}

bool is_meta_line(const json& j) { return j.is_object() && j.size() == 1 && j.contains("_meta"); }

}  // namespace

IngestResult ingest_text(std::string_view jsonl, std::optional<SourceCategory> category,
                         std::string_view origin) {
  IngestResult result;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(jsonl, '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (is_meta_line(j)) continue;
      Document doc = document_from_json(j, category, origin);
      if (!seen.insert(doc.id).second) throw std::invalid_argument("duplicate id \"" + doc.id + "\"");
      result.documents.push_back(std::move(doc));
    } catch (const json::exception& e) {
      result.diagnostics.push_back("line " + std::to_string(line_no) + ": malformed JSON (" +
                                   e.what() + ")");
    } catch (const std::invalid_argument& e) {
      result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (result.documents.empty()) {
    std::string msg = std::string(origin) + ": no valid records";
    if (!result.diagnostics.empty()) msg += " (first problem: " + result.diagnostics.front() + ")";
    fail(Errc::empty_input, msg);
  }
  return result;
}

IngestResult ingest(const std::filesystem::path& path, std::optional<SourceCategory> category) {
  return ingest_text(text::read_file(path), category, path.filename().string());
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  auto result = ingest(path);
  if (!result.diagnostics.empty()) {
    fail(Errc::format, path.string() + ": " + result.diagnostics.front());
  }
  return std::move(result.documents);
}

std::string to_jsonl(std::span<const Document> docs, const json* meta) {
  std::string out;
  if (meta) out += json{{"_meta", *meta}}.dump() + "\n";
  for (const auto& doc : docs) out += to_json(doc).dump() + "\n";
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const Document> docs,
                  const json* meta) {
  text::write_file(path, to_jsonl(docs, meta));
}

const Document* find(std::span<const Document> docs, std::string_view id) {
  for (const auto& d : docs) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

}  // namespace ctikg::corpus
