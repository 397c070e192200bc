#include "atlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "atlab/binary_io.hpp"
#include "atlab/errors.hpp"

namespace atlab {
namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_array(std::ostream& os, const std::string& name, const Shape& shape,
               std::span<const double> values) {
  binio::put_bytes(os, name);
  binio::put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) binio::put_u64(os, d);
  for (double v : values) binio::put_f64(os, v);
}

NamedArray get_array(std::istream& is) {
  NamedArray a;
  a.name = binio::get_bytes(is, 4096);
  const std::uint32_t rank = binio::get_u32(is);
  if (rank > 8) throw LoadError("implausible rank for " + a.name);
  std::uint64_t total = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    a.shape.push_back(binio::get_u64(is));
    total *= a.shape.back();
    if (total > (1ull << 32)) throw LoadError("implausible size for " + a.name);
  }
  a.values.resize(total);
  for (auto& v : a.values) v = binio::get_f64(is);
  return a;
}

std::vector<NamedArray> get_arrays(std::istream& is) {
  const std::uint32_t n = binio::get_u32(is);
  if (n > 1u << 20) throw LoadError("implausible entry count");
  std::vector<NamedArray> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_array(is));
  return out;
}

const NamedArray& find(const std::vector<NamedArray>& arrays,
                       const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw LoadError("checkpoint lacks entry " + name);
}

double scalar_entry(const std::vector<NamedArray>& arrays,
                    const std::string& name) {
  const auto& a = find(arrays, name);
  if (a.values.size() != 1) throw LoadError(name + " is not a scalar");
  return a.values[0];
}

}  // namespace

void write_checkpoint(std::ostream& os, const ParameterStore& params,
                      const AdamState& adam, const std::string& config_text) {
  os.write(kCheckpointMagic, kMagicLen);
  binio::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries())
    put_array(os, e.name, e.value.shape(), e.value.data());

  const bool has_moments = adam.first_moment.size() == params.size();
  binio::put_u32(os, static_cast<std::uint32_t>(
                         4 + (has_moments ? 2 * params.size() : 0)));
  const double step = static_cast<double>(adam.step);
  put_array(os, "adam.step", {}, {&step, 1});
  put_array(os, "adam.beta1", {}, {&adam.beta1, 1});
  put_array(os, "adam.beta2", {}, {&adam.beta2, 1});
  put_array(os, "adam.epsilon", {}, {&adam.epsilon, 1});
  if (has_moments) {
    const auto& entries = params.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      put_array(os, "adam.m." + entries[p].name, entries[p].value.shape(),
                adam.first_moment[p]);
      put_array(os, "adam.v." + entries[p].name, entries[p].value.shape(),
                adam.second_moment[p]);
    }
  }
  binio::put_bytes(os, config_text);
}

void save_checkpoint(const std::filesystem::path& path,
                     const ParameterStore& params, const AdamState& adam,
                     const std::string& config_text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params, adam, config_text);
  if (!os) throw LoadError("write failed for " + path.string());
}

CheckpointData read_checkpoint(std::istream& is) {
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) ||
      std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0)
    throw LoadError("not a checkpoint (bad magic)");
  CheckpointData data;
  data.params = get_arrays(is);
  data.optimizer = get_arrays(is);
  data.config_text = binio::get_bytes(is);
  return data;
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

void restore(const CheckpointData& data, ParameterStore& params,
             AdamState& adam) {
  auto& entries = params.entries();
  if (data.params.size() != entries.size())
    throw LoadError("checkpoint holds " + std::to_string(data.params.size()) +
                    " parameters, model expects " +
                    std::to_string(entries.size()));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const auto& src = data.params[p];
    if (src.name != entries[p].name || src.shape != entries[p].value.shape())
      throw LoadError("checkpoint parameter " + src.name + shape_str(src.shape) +
                      " does not match model parameter " + entries[p].name +
                      shape_str(entries[p].value.shape()));
  }
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto dst = entries[p].value.mutable_data();
    std::copy(data.params[p].values.begin(), data.params[p].values.end(),
              dst.begin());
    entries[p].value.zero_grad();
  }

  adam = AdamState::for_params(params);
  adam.step = static_cast<std::uint64_t>(scalar_entry(data.optimizer, "adam.step"));
  adam.beta1 = scalar_entry(data.optimizer, "adam.beta1");
  adam.beta2 = scalar_entry(data.optimizer, "adam.beta2");
  adam.epsilon = scalar_entry(data.optimizer, "adam.epsilon");
  if (data.optimizer.size() == 4) return;
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const auto& m = find(data.optimizer, "adam.m." + entries[p].name);
    const auto& v = find(data.optimizer, "adam.v." + entries[p].name);
    if (m.values.size() != entries[p].value.numel() ||
        v.values.size() != entries[p].value.numel())
      throw LoadError("optimizer moments do not match " + entries[p].name);
    adam.first_moment[p] = m.values;
    adam.second_moment[p] = v.values;
  }
}

}  // namespace atlab
