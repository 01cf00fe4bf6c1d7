#include <gtest/gtest.h>

#include <memory>
#include <random>
#include <thread>

#include "fedlm/transport.hpp"

using namespace fedlm;

TEST(Envelope, SplitsPayloadAndHeader) {
  const QuantizerConfig c{5, 1.0, DitherMode::dithered_iid};
  const auto p = quantize(std::vector<double>(11, 0.25), c, 3);
  const Envelope e = to_envelope(p);
  EXPECT_EQ(e.payload_bits, 55u);
  EXPECT_EQ(e.payload_bits + e.header_bits, e.bytes.size() * 8);
  EXPECT_GE(e.header_bits, kPayloadHeaderBits);
}

TEST(BitLedger, ChargesByChannel) {
  BitLedger l;
  l.charge(0, Channel::training, 0, 100, 10);
  l.charge(0, Channel::training, 0, 50, 10);
  l.charge(1, Channel::training, 1, 7, 1);
  l.charge(2, Channel::inference, 5, 8, 2);
  l.charge(3, Channel::calibration, 0, 9, 3);
  EXPECT_EQ(l.training_bits(0, 0), 150u);
  EXPECT_EQ(l.training_bits(1, 1), 7u);
  EXPECT_EQ(l.training_bits(1, 0), 0u);
  EXPECT_EQ(l.inference_bits(2, 5), 8u);
  EXPECT_EQ(l.calibration_bits(3), 9u);
  EXPECT_EQ(l.total_payload_bits(Channel::training), 157u);
  EXPECT_EQ(l.total_payload_bits(Channel::inference), 8u);
  EXPECT_EQ(l.total_payload_bits(Channel::calibration), 9u);
  EXPECT_EQ(l.header_bits(), 26u);
  EXPECT_EQ(l.message_count(), 5u);

  BitLedger a, b;
  a.charge(0, Channel::training, 0, 100, 10);
  a.charge(0, Channel::training, 0, 50, 10);
  b.charge(1, Channel::training, 1, 7, 1);
  b.charge(2, Channel::inference, 5, 8, 2);
  b.charge(3, Channel::calibration, 0, 9, 3);
  a.merge(b);
  EXPECT_EQ(a, l);
}

TEST(Bus, UplinkChargesExactly) {
  Bus bus(3);
  const QuantizerConfig c{8, 1.0, DitherMode::dithered_iid};
  std::uint64_t want = 0;
  for (NodeId i = 0; i < 3; ++i) {
    for (int r = 0; r < 4; ++r) {
      bus.uplink(i, Channel::training, 0, quantize(std::vector<double>(10 + i, 0.0), c, 0));
      want += (10 + i) * 8;
    }
  }
  const BitLedger l = bus.ledger();
  EXPECT_EQ(l.total_payload_bits(Channel::training), want);
  EXPECT_EQ(l.header_bits(), 12 * kPayloadHeaderBits);
  EXPECT_EQ(l.message_count(), 12u);
  EXPECT_EQ(bus.drain_hub().size(), 12u);
  EXPECT_TRUE(bus.drain_hub().empty());
}

TEST(Bus, SequencesIncreaseInOrder) {
  Bus bus(2);
  for (int k = 0; k < 5; ++k) bus.uplink(k % 2, Channel::inference, k, Envelope{{}, 0, 0});
  const auto msgs = bus.drain_hub();
  for (std::size_t k = 0; k < msgs.size(); ++k) {
    EXPECT_EQ(msgs[k].sequence, k);
    EXPECT_EQ(msgs[k].tag, k);
  }
}

TEST(Bus, BroadcastIsFree) {
  Bus bus(3);
  auto body = std::make_shared<const std::vector<std::uint8_t>>(1000, 7);
  bus.broadcast(Broadcast{2, body});
  EXPECT_EQ(bus.ledger(), BitLedger{});
  for (NodeId i = 0; i < 3; ++i) {
    const auto in = bus.drain_inbox(i);
    ASSERT_EQ(in.size(), 1u);
    EXPECT_EQ(in[0].tag, 2u);
    EXPECT_EQ(in[0].body, body);
  }
  EXPECT_TRUE(bus.drain_inbox(0).empty());
}

TEST(Bus, EmptyPayloadStillCountsHeader) {
  Bus bus(1);
  const QuantizerConfig c{8, 1.0, DitherMode::dithered_iid};
  bus.uplink(0, Channel::calibration, 0, quantize(std::vector<double>{}, c, 0));
  EXPECT_EQ(bus.ledger().calibration_bits(0), 0u);
  EXPECT_EQ(bus.ledger().header_bits(), kPayloadHeaderBits);
}

TEST(Bus, ConcurrentUplinks) {
  Bus bus(8);
  std::vector<std::thread> ts;
  for (NodeId i = 0; i < 8; ++i) {
    ts.emplace_back([&bus, i] {
      for (int k = 0; k < 500; ++k) bus.uplink(i, Channel::training, 0, Envelope{{}, 3, 1});
    });
  }
  for (auto& t : ts) t.join();
  const auto l = bus.ledger();
  EXPECT_EQ(l.total_payload_bits(Channel::training), 8u * 500 * 3);
  for (NodeId i = 0; i < 8; ++i) EXPECT_EQ(l.training_bits(i, 0), 1500u);
  EXPECT_EQ(bus.drain_hub().size(), 4000u);
}
