#pragma once

// Private JSON conversions shared by the library's line-oriented formats.

#include <functional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "physground/concepts.h"

namespace physground::detail {

using nlohmann::json;

json to_json(const BoundingBox& box);
BoundingBox box_from_json(const json& j);
json to_json(const ObjectRecord& object);
json to_json(const CategoricalAnnotation& a);
json to_json(const PreferenceAnnotation& a);

// Parses every non-empty line; a leading header line is checked against
// `schema` and skipped. `visit` receives each record with its line number.
void for_each_jsonl(std::string_view text, std::string_view source, std::string_view schema,
                    const std::function<void(const json&, int)>& visit);

std::string header_line(std::string_view schema, int version = 1);

// Field accessors that raise InvalidInput with the line number.
std::string get_string(const json& j, const char* key, std::string_view source, int line);
double get_number(const json& j, const char* key, std::string_view source, int line);

}  // namespace physground::detail
