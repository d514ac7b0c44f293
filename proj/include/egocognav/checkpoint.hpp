#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

#include "egocognav/episode.hpp"
#include "egocognav/tape.hpp"
#include "json.hpp"

namespace egocognav {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

// Layout: manifest.json (dtype, seed, step, parameter names and shapes) next
// to params.bin, the concatenated little-endian f32 values in registration
// order. A model config JSON may sit alongside; this layer does not touch it.
inline void save_params(const ParamStore& params,
                        const std::filesystem::path& dir,
                        const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json names = nlohmann::json::array();
  nlohmann::json shapes = nlohmann::json::array();
  std::string blob;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Parameter& p = params.at(i);
    names.push_back(p.name);
    shapes.push_back(p.value.shape());
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const auto bits =
          std::bit_cast<std::uint32_t>(static_cast<float>(p.value[j]));
      blob.push_back(static_cast<char>(bits & 0xff));
      blob.push_back(static_cast<char>((bits >> 8) & 0xff));
      blob.push_back(static_cast<char>((bits >> 16) & 0xff));
      blob.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
  }
  nlohmann::json manifest{{"dtype", "f32"},
                          {"seed", meta.seed},
                          {"step", meta.step},
                          {"names", names},
                          {"shapes", shapes}};
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  detail::write_file(dir / "params.bin", blob);
}

inline CheckpointMeta load_params(ParamStore& params,
                                  const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("dtype", "") != "f32")
    throw BadConfig("checkpoint dtype is not f32");
  const auto& names = manifest.at("names");
  const auto& shapes = manifest.at("shapes");
  if (names.size() != params.count())
    throw LengthMismatch("checkpoint has " + std::to_string(names.size()) +
                         " parameters, model has " +
                         std::to_string(params.count()));
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Parameter& p = params.at(i);
    if (names[i].get<std::string>() != p.name)
      throw BadConfig("checkpoint parameter order mismatch at " + p.name);
    const auto shape = shapes[i].get<std::vector<std::size_t>>();
    if (shape != p.value.shape())
      throw ShapeMismatch("checkpoint shape mismatch at " + p.name);
    total += p.value.size();
  }
  const std::string blob = detail::read_file(dir / "params.bin");
  if (blob.size() != total * 4)
    throw LengthMismatch("checkpoint payload has " +
                         std::to_string(blob.size()) + " bytes, expected " +
                         std::to_string(total * 4));
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Parameter& p = params.at(i);
    for (std::size_t j = 0; j < p.value.size(); ++j, off += 4) {
      const std::uint32_t bits =
          static_cast<std::uint8_t>(blob[off]) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[off + 1]))
           << 8) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[off + 2]))
           << 16) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(blob[off + 3]))
           << 24);
      p.value[j] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  CheckpointMeta meta;
  meta.seed = manifest.value("seed", 0ull);
  meta.step = manifest.value("step", 0ull);
  return meta;
}

}  // namespace egocognav
