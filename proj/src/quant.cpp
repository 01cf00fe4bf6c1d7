#include "fedlm/quant.hpp"

#include <cmath>
#include <string>

#include "fedlm/rng.hpp"

namespace fedlm {

std::string_view to_string(DitherMode mode) noexcept {
  switch (mode) {
    case DitherMode::dithered_iid: return "dithered_iid";
    case DitherMode::dithered_shared: return "dithered_shared";
    case DitherMode::round_nearest: return "round_nearest";
  }
  return "unknown";
}

DitherMode parse_dither_mode(std::string_view name) {
  if (name == "dithered_iid") return DitherMode::dithered_iid;
  if (name == "dithered_shared") return DitherMode::dithered_shared;
  if (name == "round_nearest") return DitherMode::round_nearest;
  throw std::invalid_argument("unknown quantizer mode '" + std::string(name) + "'");
}

double QuantizerConfig::step() const noexcept {
  return 2.0 * clip / std::ldexp(1.0, static_cast<int>(bits_per_coord));
}

double QuantizerConfig::dither_variance() const noexcept {
  const double s = step();
  return s * s / 12.0;
}

std::int64_t QuantizerConfig::min_level() const noexcept {
  return -(std::int64_t{1} << (bits_per_coord - 1));
}

std::int64_t QuantizerConfig::max_level() const noexcept {
  return (std::int64_t{1} << (bits_per_coord - 1)) - 1;
}

void QuantizerConfig::validate() const {
  if (bits_per_coord < 1 || bits_per_coord > 32) {
    throw std::invalid_argument("quantizer: bits_per_coord must be in [1, 32], got " +
                                std::to_string(bits_per_coord));
  }
  if (!(clip > 0.0) || !std::isfinite(clip)) {
    throw std::invalid_argument("quantizer: clip must be a positive finite number");
  }
}

std::uint16_t QuantizerRegistry::add(const QuantizerConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 0; i < configs_.size(); ++i) {
    if (configs_[i] == cfg) return static_cast<std::uint16_t>(i);
  }
  if (configs_.size() >= 0xffff) throw std::length_error("quantizer registry is full");
  configs_.push_back(cfg);
  return static_cast<std::uint16_t>(configs_.size() - 1);
}

const QuantizerConfig& QuantizerRegistry::at(std::uint16_t id) const {
  if (id >= configs_.size()) throw DecodeError("unknown quantizer config id " + std::to_string(id));
  return configs_[id];
}

namespace {

inline double dither_at(DitherMode mode, double step, std::uint64_t seed, std::size_t index) noexcept {
  switch (mode) {
    case DitherMode::dithered_iid: return (counter_uniform(seed, index) - 0.5) * step;
    case DitherMode::dithered_shared: return (counter_uniform(seed, 0) - 0.5) * step;
    case DitherMode::round_nearest: return 0.0;
  }
  return 0.0;
}

}  // namespace

double dither_value(const QuantizerConfig& cfg, std::uint64_t seed, std::size_t index) noexcept {
  return dither_at(cfg.mode, cfg.step(), seed, index);
}

// ---------------------------------------------------------------------------
// bit I/O

void BitWriter::put(std::uint64_t value, unsigned bits) {
  nbits_ += bits;
  while (bits > 0) {
    const unsigned fill = static_cast<unsigned>((nbits_ - bits) % 8);
    if (fill == 0) bytes_.push_back(0);
    const unsigned take = std::min(bits, 8U - fill);
    const auto chunk = static_cast<std::uint8_t>((value >> (bits - take)) & ((1U << take) - 1U));
    bytes_.back() |= static_cast<std::uint8_t>(chunk << (8U - fill - take));
    bits -= take;
  }
}

std::vector<std::uint8_t> BitWriter::finish() && { return std::move(bytes_); }

std::uint64_t BitReader::get(unsigned bits) {
  if (bits > remaining_bits()) throw DecodeError("bit stream truncated");
  std::uint64_t value = 0;
  while (bits > 0) {
    const unsigned offset = static_cast<unsigned>(pos_ % 8);
    const unsigned take = std::min(bits, 8U - offset);
    const std::uint8_t byte = bytes_[pos_ / 8];
    const unsigned chunk = (byte >> (8U - offset - take)) & ((1U << take) - 1U);
    value = (value << take) | chunk;
    pos_ += take;
    bits -= take;
  }
  return value;
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint64_t> codes, unsigned bits) {
  if (bits < 1 || bits > 64) throw std::invalid_argument("pack_bits: bits must be in [1, 64]");
  BitWriter w;
  for (std::uint64_t c : codes) {
    if (bits < 64 && (c >> bits) != 0) {
      throw std::invalid_argument("pack_bits: code " + std::to_string(c) + " does not fit in " +
                                  std::to_string(bits) + " bits");
    }
    w.put(c, bits);
  }
  return std::move(w).finish();
}

std::vector<std::uint64_t> unpack_bits(std::span<const std::uint8_t> bytes, unsigned bits, std::size_t n) {
  if (bits < 1 || bits > 64) throw std::invalid_argument("unpack_bits: bits must be in [1, 64]");
  if (bytes.size() * 8 < static_cast<std::uint64_t>(n) * bits) {
    throw DecodeError("unpack_bits: buffer holds fewer than n codes");
  }
  BitReader r(bytes);
  std::vector<std::uint64_t> out(n);
  for (auto& c : out) c = r.get(bits);
  return out;
}

// ---------------------------------------------------------------------------
// quantizer

QuantizedPayload quantize(std::span<const double> v, const QuantizerConfig& cfg, std::uint64_t seed,
                          std::uint16_t config_id) {
  cfg.validate();
  if (v.size() > 0xffffffffULL) throw std::invalid_argument("quantize: too many coordinates");
  QuantizedPayload p;
  p.config_id = config_id;
  p.num_coords = static_cast<std::uint32_t>(v.size());
  p.dither_seed = seed;
  p.config = cfg;

  const double step = cfg.step();
  const std::int64_t lo = cfg.min_level();
  const std::int64_t hi = cfg.max_level();
  const unsigned bits = cfg.bits_per_coord;
  const bool bytewise = bits == 8;
  BitWriter w;
  if (bytewise) p.codes.reserve(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    double x = v[j];
    if (std::isnan(x)) throw std::invalid_argument("quantize: NaN at coordinate " + std::to_string(j));
    bool sat = false;
    if (x > cfg.clip) { x = cfg.clip; sat = true; }
    if (x < -cfg.clip) { x = -cfg.clip; sat = true; }
    auto k = static_cast<std::int64_t>(std::floor((x + dither_at(cfg.mode, step, seed, j)) / step + 0.5));
    if (k < lo) { k = lo; sat = true; }
    if (k > hi) { k = hi; sat = true; }
    p.saturated += sat ? 1U : 0U;
    if (bytewise) {
      p.codes.push_back(static_cast<std::uint8_t>(k - lo));
    } else {
      w.put(static_cast<std::uint64_t>(k - lo), bits);
    }
  }
  if (!bytewise) p.codes = std::move(w).finish();
  return p;
}

void dequantize_into(const QuantizedPayload& p, std::span<double> out) {
  if (out.size() != p.num_coords) throw std::invalid_argument("dequantize: output size mismatch");
  const std::uint64_t need = (p.payload_bits() + 7) / 8;
  if (p.codes.size() != need) {
    throw DecodeError("dequantize: code buffer has " + std::to_string(p.codes.size()) +
                      " bytes, expected " + std::to_string(need));
  }
  const QuantizerConfig& cfg = p.config;
  const double step = cfg.step();
  const std::int64_t lo = cfg.min_level();
  if (cfg.bits_per_coord == 8) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = static_cast<double>(p.codes[j] + lo) * step - dither_at(cfg.mode, step, p.dither_seed, j);
    }
    return;
  }
  BitReader r(p.codes);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto k = static_cast<std::int64_t>(r.get(cfg.bits_per_coord)) + lo;
    out[j] = static_cast<double>(k) * step - dither_at(cfg.mode, step, p.dither_seed, j);
  }
}

std::vector<double> dequantize(const QuantizedPayload& p) {
  std::vector<double> out(p.num_coords);
  dequantize_into(p, out);
  return out;
}

std::vector<std::uint8_t> serialize(const QuantizedPayload& p) {
  BitWriter w;
  w.put(p.config_id, 16);
  w.put(p.num_coords, 32);
  w.put(p.dither_seed, 64);
  std::vector<std::uint8_t> out = std::move(w).finish();
  out.reserve(out.size() + p.codes.size());
  out.insert(out.end(), p.codes.begin(), p.codes.end());
  return out;
}

QuantizedPayload deserialize_payload(std::span<const std::uint8_t> bytes, const QuantizerRegistry& registry) {
  constexpr std::size_t kHeaderBytes = kPayloadHeaderBits / 8;
  if (bytes.size() < kHeaderBytes) throw DecodeError("payload shorter than its header");
  BitReader r(bytes.first(kHeaderBytes));
  QuantizedPayload p;
  p.config_id = static_cast<std::uint16_t>(r.get(16));
  p.num_coords = static_cast<std::uint32_t>(r.get(32));
  p.dither_seed = r.get(64);
  p.config = registry.at(p.config_id);
  const std::uint64_t need = (p.payload_bits() + 7) / 8;
  if (bytes.size() - kHeaderBytes != need) {
    throw DecodeError("payload body has " + std::to_string(bytes.size() - kHeaderBytes) +
                      " bytes, header declares " + std::to_string(need));
  }
  p.codes.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return p;
}

}  // namespace fedlm
