#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "physground/concepts.h"

namespace physground {

// One-record-per-line JSON files. The first line of every file is a header
// {"schema": "...", "version": 1}; readers accept files without it.
inline constexpr std::string_view kObjectsSchema = "physground.objects";
inline constexpr std::string_view kAnnotationsSchema = "physground.annotations";

std::string write_objects(const std::vector<ObjectRecord>& objects);
// Recomputes is_container from the registry unless the record sets it.
std::vector<ObjectRecord> read_objects(std::string_view text, std::string_view source = "<objects>",
                                       const ConceptRegistry& registry = ConceptRegistry::shipped());

std::string write_annotations(const AnnotationSet& annotations);
AnnotationSet read_annotations(std::string_view text, std::string_view source = "<annotations>");

std::string write_split(const DatasetSplit& split);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace physground
