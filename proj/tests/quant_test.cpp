#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedlm/quant.hpp"

using namespace fedlm;

namespace {

std::vector<double> uniform_vector(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(eng);
  return v;
}

}  // namespace

TEST(QuantizerConfig, StepAndLevels) {
  const QuantizerConfig c{8, 20.0, DitherMode::dithered_iid};
  EXPECT_DOUBLE_EQ(c.step(), 40.0 / 256.0);
  EXPECT_EQ(c.min_level(), -128);
  EXPECT_EQ(c.max_level(), 127);
  EXPECT_DOUBLE_EQ(c.dither_variance(), c.step() * c.step() / 12.0);
  EXPECT_THROW((QuantizerConfig{0, 1.0, DitherMode::dithered_iid}.validate()), std::invalid_argument);
  EXPECT_THROW((QuantizerConfig{33, 1.0, DitherMode::dithered_iid}.validate()), std::invalid_argument);
  EXPECT_THROW((QuantizerConfig{8, 0.0, DitherMode::dithered_iid}.validate()), std::invalid_argument);
}

TEST(DitherMode, NamesRoundTrip) {
  for (auto m : {DitherMode::dithered_iid, DitherMode::dithered_shared, DitherMode::round_nearest})
    EXPECT_EQ(parse_dither_mode(to_string(m)), m);
  EXPECT_THROW(parse_dither_mode("nope"), std::invalid_argument);
}

TEST(Quantize, RoundNearestIsExactOnGrid) {
  const QuantizerConfig c{4, 2.0, DitherMode::round_nearest};
  std::vector<double> grid;
  for (std::int64_t k = c.min_level(); k <= c.max_level(); ++k) grid.push_back(static_cast<double>(k) * c.step());
  const auto out = dequantize(quantize(grid, c, 0));
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(out[i], grid[i]);
}

TEST(Quantize, ErrorWithinHalfStepInsideRange) {
  for (auto mode : {DitherMode::dithered_iid, DitherMode::dithered_shared, DitherMode::round_nearest}) {
    for (unsigned bits : {2u, 5u, 8u, 12u}) {
      const QuantizerConfig c{bits, 3.0, mode};
      // stay half a step inside the code range so no coordinate saturates
      const double lim = c.clip - c.step();
      const auto v = uniform_vector(5000, -lim, lim, bits);
      const auto p = quantize(v, c, 77);
      EXPECT_EQ(p.saturated, 0u);
      const auto out = dequantize(p);
      for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(out[i] - v[i]), c.step() / 2 * (1 + 1e-12));
    }
  }
}

TEST(Quantize, SaturatesAndCounts) {
  const QuantizerConfig c{3, 1.0, DitherMode::round_nearest};
  const std::vector<double> v{100.0, -100.0, 0.0};
  const auto p = quantize(v, c, 0);
  EXPECT_EQ(p.saturated, 2u);
  const auto out = dequantize(p);
  EXPECT_DOUBLE_EQ(out[0], static_cast<double>(c.max_level()) * c.step());
  EXPECT_DOUBLE_EQ(out[1], static_cast<double>(c.min_level()) * c.step());
}

TEST(Quantize, DitherDeterminedBySeed) {
  const QuantizerConfig c{6, 5.0, DitherMode::dithered_iid};
  const auto v = uniform_vector(100, -4, 4, 1);
  EXPECT_EQ(quantize(v, c, 9).codes, quantize(v, c, 9).codes);
  EXPECT_NE(quantize(v, c, 9).codes, quantize(v, c, 10).codes);
  for (std::size_t j = 0; j < 100; ++j) {
    const double u = dither_value(c, 9, j);
    EXPECT_GE(u, -c.step() / 2);
    EXPECT_LT(u, c.step() / 2);
  }
}

TEST(Quantize, SharedDitherErrorsCorrelate) {
  // two coordinates with the same fractional offset see the same dither, so the same error
  const QuantizerConfig c{8, 20.0, DitherMode::dithered_shared};
  std::mt19937_64 eng(2);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const int n = 20000;
  for (int t = 0; t < n; ++t) {
    const double a = u(eng);
    const std::vector<double> v{a, a + 3.0 * c.step()};
    const auto out = dequantize(quantize(v, c, static_cast<std::uint64_t>(t)));
    const double ea = out[0] - v[0], eb = out[1] - v[1];
    sa += ea; sb += eb; saa += ea * ea; sbb += eb * eb; sab += ea * eb;
  }
  const double cov = sab / n - sa / n * sb / n;
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  EXPECT_GT(corr, 0.999);
  // one draw per vector
  EXPECT_EQ(dither_value(c, 5, 0), dither_value(c, 5, 123));
}

TEST(PackBits, TwoBitCodeThree) {
  const std::vector<std::uint64_t> codes{3};
  const auto bytes = pack_bits(codes, 2);
  ASSERT_EQ(bytes.size(), 1u);
  EXPECT_EQ(unpack_bits(bytes, 2, 1), codes);
  const std::vector<std::uint64_t> bad{4};
  EXPECT_THROW(pack_bits(bad, 2), std::invalid_argument);
}

TEST(PackBits, FuzzRoundTrip) {
  std::mt19937_64 eng(123);
  for (int t = 0; t < 10000; ++t) {
    const unsigned bits = 1 + eng() % 32;
    const std::size_t n = eng() % 40;
    std::vector<std::uint64_t> codes(n);
    for (auto& c : codes) c = eng() & ((std::uint64_t{1} << bits) - 1);
    const auto bytes = pack_bits(codes, bits);
    ASSERT_EQ(bytes.size(), (n * bits + 7) / 8);
    ASSERT_EQ(unpack_bits(bytes, bits, n), codes);
  }
}

TEST(PackBits, TruncatedBufferThrows) {
  const std::vector<std::uint8_t> one{0xff};
  EXPECT_THROW(unpack_bits(one, 4, 3), DecodeError);
}

TEST(BitStream, MixedWidths) {
  BitWriter w;
  w.put(5, 3);
  w.put(0xabcdef, 24);
  w.put(1, 1);
  w.put(0xffffffffffffffffULL, 64);
  EXPECT_EQ(w.bit_count(), 92u);
  const auto bytes = std::move(w).finish();
  BitReader r(bytes);
  EXPECT_EQ(r.get(3), 5u);
  EXPECT_EQ(r.get(24), 0xabcdefu);
  EXPECT_EQ(r.get(1), 1u);
  EXPECT_EQ(r.get(64), 0xffffffffffffffffULL);
  EXPECT_THROW(r.get(8), DecodeError);
}

TEST(Serialize, RoundTripAllWidths) {
  QuantizerRegistry reg;
  for (unsigned bits = 1; bits <= 32; ++bits) {
    const QuantizerConfig c{bits, 4.0, DitherMode::dithered_iid};
    const auto id = reg.add(c);
    const auto v = uniform_vector(37, -4, 4, bits);
    const auto p = quantize(v, c, 1000 + bits, id);
    const auto bytes = serialize(p);
    EXPECT_EQ(bytes.size() * 8, kPayloadHeaderBits + (37 * bits + 7) / 8 * 8);
    const auto q = deserialize_payload(bytes, reg);
    EXPECT_EQ(q.config_id, id);
    EXPECT_EQ(q.num_coords, 37u);
    EXPECT_EQ(q.dither_seed, 1000u + bits);
    EXPECT_EQ(q.config, c);
    EXPECT_EQ(dequantize(q), dequantize(p));
  }
}

TEST(Serialize, DecodeErrors) {
  QuantizerRegistry reg;
  const QuantizerConfig c{8, 1.0, DitherMode::dithered_iid};
  reg.add(c);
  const std::vector<double> v{0.1, 0.2, 0.3};
  auto bytes = serialize(quantize(v, c, 1, 0));
  // short header
  const std::vector<std::uint8_t> tiny(bytes.begin(), bytes.begin() + 5);
  EXPECT_THROW(deserialize_payload(tiny, reg), DecodeError);
  // truncated body
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(deserialize_payload(cut, reg), DecodeError);
  // unknown config id
  QuantizerRegistry empty;
  EXPECT_THROW(deserialize_payload(bytes, empty), DecodeError);
  EXPECT_THROW(reg.at(7), DecodeError);
}

TEST(Serialize, EmptyPayload) {
  QuantizerRegistry reg;
  const QuantizerConfig c{8, 1.0, DitherMode::dithered_iid};
  reg.add(c);
  const auto p = quantize(std::vector<double>{}, c, 0, 0);
  EXPECT_EQ(p.payload_bits(), 0u);
  const auto bytes = serialize(p);
  EXPECT_EQ(bytes.size() * 8, kPayloadHeaderBits);
  EXPECT_TRUE(dequantize(deserialize_payload(bytes, reg)).empty());
}

TEST(Dequantize, SizeMismatchThrows) {
  const QuantizerConfig c{8, 1.0, DitherMode::dithered_iid};
  auto p = quantize(std::vector<double>{0.0, 0.5}, c, 0);
  p.codes.pop_back();
  EXPECT_THROW(dequantize(p), DecodeError);
}

TEST(Quantize, IidMomentsSmallRun) {
  const QuantizerConfig c{8, 20.0, DitherMode::dithered_iid};
  const auto v = uniform_vector(200000, -10, 10, 4);
  const auto out = dequantize(quantize(v, c, 8));
  double s = 0, ss = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double e = out[i] - v[i];
    s += e;
    ss += e * e;
  }
  const double n = static_cast<double>(v.size());
  const double var = ss / n - (s / n) * (s / n);
  EXPECT_NEAR(var / c.dither_variance(), 1.0, 0.02);
  EXPECT_LT(std::abs(s / n), 4.0 * std::sqrt(var / n));
}
