#pragma once

// Checkpoint file:
//   "DDSPW001"
//   u32 header field count, then u32 fields:
//     hidden_dim n_stacks blocks_per_stack kernel convs_per_block K M mlp_depth
//     n_dilations dilations... n_disc disc_fft_sizes...
//   u32 tensor count, then tensor records (see io::Writer::tensor)
//   optional trailing block starting with "DDSPO001" (optimizer state, owned by
//   the trainer and kept here as opaque bytes).
//
// Tensor name prefixes: none = generator, "disc." = discriminator, "aux." =
// non-trainable data such as EMA normalization statistics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/io/binary.hpp"

namespace ddsp::encoder {

inline constexpr std::string_view kWeightsMagic = "DDSPW001";
inline constexpr std::string_view kOptimizerMagic = "DDSPO001";
inline constexpr std::string_view kDiscPrefix = "disc.";
inline constexpr std::string_view kAuxPrefix = "aux.";

struct Checkpoint {
  EncoderConfig config;
  std::vector<std::uint32_t> disc_fft_sizes;
  WeightSet generator;
  WeightSet discriminator;  // names without the prefix
  WeightSet aux;            // names without the prefix
  std::vector<char> optimizer_block;  // starts with kOptimizerMagic when present
};

inline std::vector<char> serialize(const Checkpoint& ck) {
  io::Writer w;
  w.raw(kWeightsMagic);
  const auto& c = ck.config;
  std::vector<std::uint32_t> fields{static_cast<std::uint32_t>(c.hidden_dim),
                                    static_cast<std::uint32_t>(c.n_stacks),
                                    static_cast<std::uint32_t>(c.blocks_per_stack),
                                    static_cast<std::uint32_t>(c.kernel),
                                    static_cast<std::uint32_t>(c.convs_per_block),
                                    static_cast<std::uint32_t>(c.K),
                                    static_cast<std::uint32_t>(c.M),
                                    static_cast<std::uint32_t>(c.mlp_depth),
                                    static_cast<std::uint32_t>(c.dilations.size())};
  for (auto d : c.dilations) fields.push_back(static_cast<std::uint32_t>(d));
  fields.push_back(static_cast<std::uint32_t>(ck.disc_fft_sizes.size()));
  fields.insert(fields.end(), ck.disc_fft_sizes.begin(), ck.disc_fft_sizes.end());
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (auto f : fields) w.u32(f);
  w.u32(static_cast<std::uint32_t>(ck.generator.tensors.size() + ck.discriminator.tensors.size() +
                                   ck.aux.tensors.size()));
  for (const auto& [name, t] : ck.generator.tensors) w.tensor(name, t);
  for (const auto& [name, t] : ck.discriminator.tensors) w.tensor(std::string(kDiscPrefix) + name, t);
  for (const auto& [name, t] : ck.aux.tensors) w.tensor(std::string(kAuxPrefix) + name, t);
  auto bytes = w.bytes();
  bytes.insert(bytes.end(), ck.optimizer_block.begin(), ck.optimizer_block.end());
  return bytes;
}

inline Checkpoint deserialize(const std::vector<char>& bytes, const std::string& origin) {
  io::Reader r(bytes, origin);
  r.expect_magic(kWeightsMagic);
  const std::uint32_t n_fields = r.u32("header field count");
  std::vector<std::uint32_t> f;
  for (std::uint32_t i = 0; i < n_fields; ++i) f.push_back(r.u32("header fields"));
  if (f.size() < 9) r.fail("header has " + std::to_string(f.size()) + " fields, need at least 9");
  Checkpoint ck;
  auto& c = ck.config;
  c.hidden_dim = f[0];
  c.n_stacks = f[1];
  c.blocks_per_stack = f[2];
  c.kernel = f[3];
  c.convs_per_block = f[4];
  c.K = f[5];
  c.M = f[6];
  c.mlp_depth = f[7];
  const std::size_t nd = f[8];
  if (f.size() < 10 + nd) r.fail("header truncated in dilation list");
  c.dilations.assign(f.begin() + 9, f.begin() + 9 + static_cast<std::ptrdiff_t>(nd));
  const std::size_t ndisc = f[9 + nd];
  if (f.size() != 10 + nd + ndisc) r.fail("header field count disagrees with its lists");
  ck.disc_fft_sizes.assign(f.begin() + 10 + static_cast<std::ptrdiff_t>(nd), f.end());
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }

  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    WeightSet* dst = &ck.generator;
    std::string key = name;
    if (name.starts_with(kDiscPrefix)) {
      dst = &ck.discriminator;
      key = name.substr(kDiscPrefix.size());
    } else if (name.starts_with(kAuxPrefix)) {
      dst = &ck.aux;
      key = name.substr(kAuxPrefix.size());
    }
    if (!dst->tensors.emplace(key, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (!r.at_end()) {
    if (!r.peek(kOptimizerMagic)) r.fail("trailing bytes are not an optimizer block");
    ck.optimizer_block.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()), bytes.end());
  }
  try {
    check_weights(ck.generator, c);
  } catch (const ShapeError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { io::write_file(path, serialize(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize(io::read_file(path), path); }

}  // namespace ddsp::encoder
