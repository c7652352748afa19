#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "lcfb/graph.hpp"

namespace lcfb {

// Binary parameter checkpoint:
//   "LCK1"
//   repeated per parameter (in name order):
//     u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 values
// All integers and floats little-endian. Values are stored as 32-bit floats,
// so a loaded set holds the float-rounded parameters.
std::string encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter to float precision in place, matching what a
// save/load cycle would produce.
void round_to_float(ParameterSet& params);

// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

void save_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace lcfb
