#include "physground/records_io.h"

#include <fstream>
#include <sstream>

#include "json_codec.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"

namespace physground {
namespace detail {

json to_json(const BoundingBox& box) {
  return json{{"image", box.image_ref},
              {"x", box.rect.x},
              {"y", box.rect.y},
              {"w", box.rect.width},
              {"h", box.rect.height}};
}

BoundingBox box_from_json(const json& j) {
  BoundingBox b;
  b.image_ref = j.at("image").get<std::string>();
  b.rect = Rect{j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
  return b;
}

json to_json(const ObjectRecord& object) {
  json boxes = json::array();
  for (const auto& b : object.boxes) boxes.push_back(to_json(b));
  return json{{"instance_id", object.instance_id},
              {"category", object.category},
              {"boxes", boxes},
              {"is_container", object.is_container}};
}

json to_json(const CategoricalAnnotation& a) {
  json j{{"type", "categorical"},   {"object", a.object},       {"concept", a.concept_name},
         {"label", a.label},        {"annotator", a.annotator}, {"source", std::string(to_string(a.source))}};
  if (a.overridden) j["overridden"] = true;
  return j;
}

json to_json(const PreferenceAnnotation& a) {
  return json{{"type", "preference"},
              {"first", a.first},
              {"second", a.second},
              {"concept", a.concept_name},
              {"verdict", std::string(to_string(a.verdict))},
              {"annotator", a.annotator},
              {"source", std::string(to_string(a.source))}};
}

std::string header_line(std::string_view schema, int version) {
  return json{{"schema", std::string(schema)}, {"version", version}}.dump() + "\n";
}

void for_each_jsonl(std::string_view text, std::string_view source, std::string_view schema,
                    const std::function<void(const json&, int)>& visit) {
  int line_no = 0;
  std::size_t pos = 0;
  bool first_record = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_at(std::string(source), line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail_at(std::string(source), line_no, "expected a JSON object per line");
    if (first_record && j.contains("schema")) {
      first_record = false;
      if (j["schema"] != std::string(schema))
        fail_at(std::string(source), line_no,
                "schema '" + j["schema"].dump() + "' does not match '" + std::string(schema) + "'");
      if (!j.contains("version") || j["version"] != 1) fail_at(std::string(source), line_no, "unsupported version");
      continue;
    }
    first_record = false;
    try {
      visit(j, line_no);
    } catch (const json::exception& e) {
      fail_at(std::string(source), line_no, e.what());
    }
  }
}

std::string get_string(const json& j, const char* key, std::string_view source, int line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) fail_at(std::string(source), line, std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

double get_number(const json& j, const char* key, std::string_view source, int line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) fail_at(std::string(source), line, std::string("missing numeric field '") + key + "'");
  return it->get<double>();
}

}  // namespace detail

std::string write_objects(const std::vector<ObjectRecord>& objects) {
  std::string out = detail::header_line(kObjectsSchema);
  for (const auto& o : objects) out += detail::to_json(o).dump() + "\n";
  return out;
}

std::vector<ObjectRecord> read_objects(std::string_view text, std::string_view source,
                                       const ConceptRegistry& registry) {
  std::vector<ObjectRecord> out;
  detail::for_each_jsonl(text, source, kObjectsSchema, [&](const detail::json& j, int line) {
    auto id = detail::get_string(j, "instance_id", source, line);
    auto category = detail::get_string(j, "category", source, line);
    std::vector<BoundingBox> boxes;
    if (j.contains("boxes"))
      for (const auto& b : j["boxes"]) boxes.push_back(detail::box_from_json(b));
    if (boxes.empty()) fail_at(std::string(source), line, "object '" + id + "' has no bounding box");
    auto record = make_object(id, category, std::move(boxes), registry);
    if (j.contains("is_container")) record.is_container = j["is_container"].get<bool>();
    out.push_back(std::move(record));
  });
  return out;
}

std::string write_annotations(const AnnotationSet& annotations) {
  std::string out = detail::header_line(kAnnotationsSchema);
  for (const auto& a : annotations.categorical) out += detail::to_json(a).dump() + "\n";
  for (const auto& a : annotations.preference) out += detail::to_json(a).dump() + "\n";
  return out;
}

AnnotationSet read_annotations(std::string_view text, std::string_view source) {
  AnnotationSet out;
  detail::for_each_jsonl(text, source, kAnnotationsSchema, [&](const detail::json& j, int line) {
    auto type = detail::get_string(j, "type", source, line);
    auto src = parse_source(detail::get_string(j, "source", source, line));
    auto annotator = detail::get_string(j, "annotator", source, line);
    if (type == "categorical") {
      CategoricalAnnotation a;
      a.object = detail::get_string(j, "object", source, line);
      a.concept_name = detail::get_string(j, "concept", source, line);
      a.label = detail::get_string(j, "label", source, line);
      a.annotator = std::move(annotator);
      a.source = src;
      a.overridden = j.value("overridden", false);
      out.categorical.push_back(std::move(a));
    } else if (type == "preference") {
      PreferenceAnnotation a;
      a.first = detail::get_string(j, "first", source, line);
      a.second = detail::get_string(j, "second", source, line);
      a.concept_name = detail::get_string(j, "concept", source, line);
      try {
        a.verdict = parse_verdict(detail::get_string(j, "verdict", source, line));
      } catch (const InvalidInput& e) {
        fail_at(std::string(source), line, e.what());
      }
      a.annotator = std::move(annotator);
      a.source = src;
      out.preference.push_back(std::move(a));
    } else {
      fail_at(std::string(source), line, "unknown annotation type '" + type + "'");
    }
  });
  return out;
}

std::string write_split(const DatasetSplit& split) {
  std::string out = detail::header_line("physground.split");
  for (const auto& [id, set] : split.assignment)
    out += detail::json{{"instance_id", id}, {"set", std::string(to_string(set))}, {"seed", split.seed}}.dump() + "\n";
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace physground
