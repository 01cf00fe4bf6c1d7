#pragma once

// Subtractively dithered uniform scalar quantization with a bit-exact codec.
//
// A coordinate x is clipped to [-clip, clip] and mapped to the mid-tread grid
// k * step, step = 2 clip / 2^bits, k in [-2^(bits-1), 2^(bits-1) - 1]. The
// transmitted code is k + 2^(bits-1). Dithered modes add u ~ U(-step/2, step/2)
// before rounding and the receiver subtracts the same u, regenerated from
// the payload's dither seed.
//
// Wire format (big-endian bit order, MSB first):
//   config_id   16 bits
//   num_coords  32 bits
//   dither_seed 64 bits
//   codes       num_coords * bits_per_coord bits, zero-padded to a byte

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace fedlm {

enum class DitherMode : std::uint8_t {
  dithered_iid,     // one independent draw per coordinate
  dithered_shared,  // one draw reused for every coordinate of a vector
  round_nearest,    // no dither
};

std::string_view to_string(DitherMode mode) noexcept;
DitherMode parse_dither_mode(std::string_view name);

struct QuantizerConfig {
  unsigned bits_per_coord = 8;
  double clip = 20.0;
  DitherMode mode = DitherMode::dithered_iid;

  double step() const noexcept;
  /// Expected squared error of the dithered quantizer, step^2 / 12.
  double dither_variance() const noexcept;
  std::int64_t min_level() const noexcept;
  std::int64_t max_level() const noexcept;
  /// Throws std::invalid_argument unless 1 <= bits <= 32 and clip > 0.
  void validate() const;

  friend bool operator==(const QuantizerConfig&, const QuantizerConfig&) = default;
};

/// Raised when a serialized payload does not match its declared shape.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kPayloadHeaderBits = 16 + 32 + 64;

struct QuantizedPayload {
  std::uint16_t config_id = 0;
  std::uint32_t num_coords = 0;
  std::uint64_t dither_seed = 0;
  QuantizerConfig config;
  std::vector<std::uint8_t> codes;  // packed, bits_per_coord bits each
  std::uint32_t saturated = 0;      // coordinates clamped to the code range (sender-side diagnostic)

  std::uint64_t payload_bits() const noexcept {
    return static_cast<std::uint64_t>(num_coords) * config.bits_per_coord;
  }
};

/// Shared table mapping wire config ids to quantizer configs. Nodes and hub
/// agree on it before the protocol starts.
class QuantizerRegistry {
 public:
  std::uint16_t add(const QuantizerConfig& cfg);
  const QuantizerConfig& at(std::uint16_t id) const;
  std::size_t size() const noexcept { return configs_.size(); }

 private:
  std::vector<QuantizerConfig> configs_;
};

/// Dither value subtracted from coordinate `index` under `cfg` and `seed`.
double dither_value(const QuantizerConfig& cfg, std::uint64_t seed, std::size_t index) noexcept;

QuantizedPayload quantize(std::span<const double> v, const QuantizerConfig& cfg, std::uint64_t seed,
                          std::uint16_t config_id = 0);

/// Reconstruct into `out` (size num_coords). Throws DecodeError on a
/// malformed code buffer.
void dequantize_into(const QuantizedPayload& p, std::span<double> out);
std::vector<double> dequantize(const QuantizedPayload& p);

/// Packs codes MSB-first at `bits` bits each into ceil(n bits / 8) bytes.
/// Throws std::invalid_argument when a code does not fit.
std::vector<std::uint8_t> pack_bits(std::span<const std::uint64_t> codes, unsigned bits);
/// Inverse of pack_bits. Throws DecodeError when `bytes` is too short.
std::vector<std::uint64_t> unpack_bits(std::span<const std::uint8_t> bytes, unsigned bits, std::size_t n);

std::vector<std::uint8_t> serialize(const QuantizedPayload& p);
QuantizedPayload deserialize_payload(std::span<const std::uint8_t> bytes, const QuantizerRegistry& registry);

/// MSB-first bit writer/reader shared by the payload and summary codecs.
class BitWriter {
 public:
  void put(std::uint64_t value, unsigned bits);
  std::vector<std::uint8_t> finish() &&;
  std::uint64_t bit_count() const noexcept { return nbits_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t nbits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t get(unsigned bits);
  std::uint64_t remaining_bits() const noexcept { return bytes_.size() * 8 - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace fedlm
