#include "physground/kvdoc.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "physground/errors.h"

namespace physground {

std::string trim(std::string_view text) {
  auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    auto piece = trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

void fail_at(const std::string& source, int line, const std::string& message) {
  std::ostringstream os;
  os << source << ":" << line << ": " << message;
  throw InvalidInput(os.str());
}

const KvEntry* KvSection::find(std::string_view key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

const KvEntry& KvSection::require(std::string_view key) const {
  if (const auto* e = find(key)) return *e;
  std::string what = kind.empty() ? std::string("root") : "[" + kind + (argument.empty() ? "" : " " + argument) + "]";
  throw InvalidInput("line " + std::to_string(line) + ": section " + what + " is missing key '" +
                     std::string(key) + "'");
}

std::optional<std::string> KvSection::get(std::string_view key) const {
  if (const auto* e = find(key)) return e->value;
  return std::nullopt;
}

bool KvSection::get_bool(std::string_view key, bool fallback) const {
  const auto* e = find(key);
  if (!e) return fallback;
  auto v = to_lower(e->value);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw InvalidInput("line " + std::to_string(e->line) + ": expected boolean for '" + e->key +
                     "', got '" + e->value + "'");
}

std::vector<const KvSection*> KvDocument::all(std::string_view kind) const {
  std::vector<const KvSection*> out;
  for (const auto& s : sections)
    if (s.kind == kind) out.push_back(&s);
  return out;
}

void KvDocument::expect_schema(std::string_view schema, int version) const {
  const auto* s = root.find("schema");
  if (!s) fail_at(source, 1, "missing 'schema' field (expected " + std::string(schema) + ")");
  if (s->value != schema)
    fail_at(source, s->line, "schema '" + s->value + "' does not match expected '" + std::string(schema) + "'");
  const auto* v = root.find("version");
  if (!v) fail_at(source, s->line, "missing 'version' field");
  if (v->value != std::to_string(version))
    fail_at(source, v->line, "unsupported version " + v->value + " (expected " + std::to_string(version) + ")");
}

KvDocument parse_kv(std::string_view text, std::string source) {
  KvDocument doc;
  doc.source = std::move(source);
  KvSection* current = &doc.root;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail_at(doc.source, line_no, "unterminated section header");
      auto header = trim(std::string_view(line).substr(1, line.size() - 2));
      if (header.empty()) fail_at(doc.source, line_no, "empty section header");
      KvSection section;
      auto space = header.find_first_of(" \t");
      section.kind = header.substr(0, space);
      section.argument = space == std::string::npos ? "" : trim(std::string_view(header).substr(space));
      section.line = line_no;
      doc.sections.push_back(std::move(section));
      current = &doc.sections.back();
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) fail_at(doc.source, line_no, "expected 'key = value'");
    KvEntry entry{trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), line_no};
    if (entry.key.empty()) fail_at(doc.source, line_no, "empty key");
    current->entries.push_back(std::move(entry));
  }
  return doc;
}

KvDocument load_kv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str(), path);
}

}  // namespace physground
