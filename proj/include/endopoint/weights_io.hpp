#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "endopoint/network.hpp"

namespace endopoint {

/// Little-endian binary weights file:
///   "SPWT" | u32 version (1) | u32 record count
///   per record: u32 name length | name bytes | u8 kind | u8 rank |
///               u32 dims[rank] | f32 data[prod(dims)]
/// The first record is the architecture (kind 3, five widths); every conv
/// layer then contributes "<name>.weight" and "<name>.bias" records.
class WeightsError : public std::runtime_error {
 public:
  enum class Kind { Io, Version, Truncated, ShapeMismatch, Layout };

  WeightsError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kWeightsVersion = 1;

std::string encode_weights(const NetworkParams& params);
NetworkParams decode_weights(const std::string& bytes);

void save_weights(const NetworkParams& params,
                  const std::filesystem::path& path);
NetworkParams load_weights(const std::filesystem::path& path);

}  // namespace endopoint
