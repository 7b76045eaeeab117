#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace physground {

// Sectioned key/value text used by every shipped config and fixture:
//
//   # comment
//   key = value            (root section, before any header)
//   [kind argument words]
//   key = value
//
// Sections may repeat; order of sections and entries is preserved.
struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct KvSection {
  std::string kind;      // first word of the header, empty for the root
  std::string argument;  // rest of the header, trimmed
  int line = 0;
  std::vector<KvEntry> entries;

  const KvEntry* find(std::string_view key) const;
  // Throws InvalidInput naming the section line when the key is absent.
  const KvEntry& require(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  bool get_bool(std::string_view key, bool fallback) const;
};

struct KvDocument {
  std::string source;  // name used in diagnostics
  KvSection root;
  std::vector<KvSection> sections;

  std::vector<const KvSection*> all(std::string_view kind) const;
  // Checks root keys `schema` and `version`.
  void expect_schema(std::string_view schema, int version) const;
};

KvDocument parse_kv(std::string_view text, std::string source = "<input>");
KvDocument load_kv_file(const std::string& path);

// Helpers shared by config readers.
std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string join(const std::vector<std::string>& items, std::string_view sep);
[[noreturn]] void fail_at(const std::string& source, int line, const std::string& message);

}  // namespace physground
