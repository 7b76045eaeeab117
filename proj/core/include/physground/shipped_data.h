#pragma once

#include <string_view>
#include <vector>

namespace physground {

// Files under core/data/, compiled into the library. Names are paths
// relative to that directory, e.g. "tiers.conf" or "scenes/robot_scene_1.scene".
// Throws NotFound for unknown names.
std::string_view shipped_file(std::string_view name);
std::vector<std::string_view> shipped_file_names();

}  // namespace physground
