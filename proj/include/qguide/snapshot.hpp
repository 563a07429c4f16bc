#pragma once

// Binary parameter snapshots.
//
// Layout (all integers uint32 little-endian, all reals IEEE-754 binary64
// little-endian):
//   magic "QGNN" | version (=1) | role length | role bytes |
//   output activation | output scale | layer count L | L layer sizes |
//   per layer: weight (row-major, fan_out x fan_in), then bias

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "qguide/nn.hpp"

namespace qguide {

inline constexpr std::array<char, 4> kSnapshotMagic{'Q', 'G', 'N', 'N'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ConfigError("snapshot truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ConfigError("snapshot truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_snapshot(std::ostream& out, const Mlp& net, const std::string& role) {
  out.write(kSnapshotMagic.data(), kSnapshotMagic.size());
  detail::put_u32(out, kSnapshotVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(role.size()));
  out.write(role.data(), static_cast<std::streamsize>(role.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(net.output_activation()));
  detail::put_f64(out, net.output_scale());
  detail::put_u32(out, static_cast<std::uint32_t>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) detail::put_u32(out, static_cast<std::uint32_t>(s));
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(out, l.bias(r));
  }
}

struct Snapshot {
  std::string role;
  Mlp net;
};

inline Snapshot read_snapshot(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kSnapshotMagic)
    throw ConfigError("not a network snapshot (bad magic)");
  if (const auto version = detail::get_u32(in); version != kSnapshotVersion)
    throw ConfigError("unsupported snapshot version " + std::to_string(version));
  const auto role_len = detail::get_u32(in);
  if (role_len > 4096) throw ConfigError("snapshot role tag too long");
  std::string role(role_len, '\0');
  if (!in.read(role.data(), role_len)) throw ConfigError("snapshot truncated");
  const auto activation = detail::get_u32(in);
  if (activation > 1) throw ConfigError("snapshot has unknown output activation");
  const double scale = detail::get_f64(in);
  const auto count = detail::get_u32(in);
  if (count < 2 || count > 64) throw ConfigError("snapshot has implausible layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto s = detail::get_u32(in);
    if (s == 0 || s > (1u << 20)) throw ConfigError("snapshot has implausible layer size");
    sizes.push_back(static_cast<int>(s));
  }
  Mlp net(sizes, static_cast<OutputActivation>(activation), scale == 0.0 ? 1.0 : scale, 0);
  auto& layers = net.mutable_layers();
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = detail::get_f64(in);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = detail::get_f64(in);
  }
  return {std::move(role), std::move(net)};
}

inline void save_snapshot(const std::filesystem::path& path, const Mlp& net, const std::string& role) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write snapshot " + path.string());
  write_snapshot(out, net, role);
  if (!out) throw ConfigError("failed writing snapshot " + path.string());
}

inline Snapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open snapshot " + path.string());
  return read_snapshot(in);
}

}  // namespace qguide
