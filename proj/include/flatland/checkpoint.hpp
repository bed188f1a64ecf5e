#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "flatland/errors.hpp"
#include "flatland/nn.hpp"

namespace flatland::checkpoint {

inline constexpr std::uint16_t kFormatVersion = 1;

// Layout: magic "FLND" | version u16 | layer count u16 | widths u32 each |
// activation u8 | loss u8 | params as little-endian f64 | crc32 of the
// payload (everything between the magic and the crc).
struct Checkpoint {
    nn::ModelSpec spec;
    nn::ParamVector params;
};

// Reflected CRC-32, polynomial 0xEDB88320, init and xorout 0xFFFFFFFF.
std::uint32_t crc32(const unsigned char* data, std::size_t len);

std::string encode_checkpoint(const nn::ModelSpec& spec, const nn::ParamVector& params);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const nn::ModelSpec& spec,
                     const nn::ParamVector& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace flatland::checkpoint
