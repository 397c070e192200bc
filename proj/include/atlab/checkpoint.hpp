#pragma once

// Checkpoint file layout (all integers and floats little-endian):
//
//   "ATLAB1"
//   u32 parameter count, then per parameter:
//     u32 name length, name bytes, u32 rank, rank x u64 dims, f64 payload
//   u32 optimizer entry count, then entries in the same encoding:
//     adam.step, adam.beta1, adam.beta2, adam.epsilon (rank 0),
//     adam.m.<param>, adam.v.<param> for every parameter
//   u32 config length, config text (key=value sections)

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "atlab/params.hpp"

namespace atlab {

inline constexpr char kCheckpointMagic[] = "ATLAB1";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  std::vector<NamedArray> params;
  std::vector<NamedArray> optimizer;
  std::string config_text;
};

void write_checkpoint(std::ostream& os, const ParameterStore& params,
                      const AdamState& adam, const std::string& config_text);
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterStore& params, const AdamState& adam,
                     const std::string& config_text);

CheckpointData read_checkpoint(std::istream& is);
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies stored values into `params` (names, order and shapes must match)
// and rebuilds the optimizer state. Throws LoadError on any mismatch.
void restore(const CheckpointData& data, ParameterStore& params,
             AdamState& adam);

}  // namespace atlab
