#pragma once

// In-process uplink/downlink bus with an exact uplink bit ledger. Only
// payload bits count against the budget; serialization headers are tracked
// on their own counter and downlink broadcasts are never charged.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "fedlm/quant.hpp"

namespace fedlm {

using NodeId = std::uint32_t;

enum class Channel : std::uint8_t { training, inference, calibration };

/// A serialized uplink body with its bit split.
struct Envelope {
  std::vector<std::uint8_t> bytes;
  std::uint64_t payload_bits = 0;
  std::uint64_t header_bits = 0;
};

Envelope to_envelope(const QuantizedPayload& p);

struct Message {
  NodeId from = 0;
  Channel channel = Channel::training;
  std::uint64_t tag = 0;  // round for training, query index for inference
  std::uint64_t sequence = 0;
  Envelope body;
};

struct Receipt {
  std::uint64_t sequence = 0;
  std::uint64_t payload_bits = 0;
  std::uint64_t header_bits = 0;
};

/// Uplink bit counters. Keys are (node, round) for training and
/// (node, query) for inference.
class BitLedger {
 public:
  void charge(NodeId node, Channel ch, std::uint64_t tag, std::uint64_t payload_bits, std::uint64_t header_bits);

  std::uint64_t training_bits(NodeId node, std::uint64_t round) const;
  std::uint64_t inference_bits(NodeId node, std::uint64_t query) const;
  std::uint64_t calibration_bits(NodeId node) const;

  std::uint64_t total_payload_bits(Channel ch) const;
  std::uint64_t header_bits() const noexcept { return header_bits_; }
  std::uint64_t message_count() const noexcept { return messages_; }

  const std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t>& training() const noexcept { return training_; }
  const std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t>& inference() const noexcept { return inference_; }
  const std::map<NodeId, std::uint64_t>& calibration() const noexcept { return calibration_; }

  /// Adds every counter of `other` into this ledger.
  void merge(const BitLedger& other);

  friend bool operator==(const BitLedger&, const BitLedger&) = default;

 private:
  std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t> training_;
  std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t> inference_;
  std::map<NodeId, std::uint64_t> calibration_;
  std::uint64_t header_bits_ = 0;
  std::uint64_t messages_ = 0;
};

/// Downlink broadcast body, shared by every recipient.
struct Broadcast {
  std::uint64_t tag = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> body;
};

/// Synchronous lossless bus: one hub mailbox (FIFO per sender) and one
/// inbox per node. Thread-safe.
class Bus {
 public:
  explicit Bus(std::size_t nodes) : inboxes_(nodes) {}

  Receipt uplink(NodeId from, Channel ch, std::uint64_t tag, Envelope body);
  Receipt uplink(NodeId from, Channel ch, std::uint64_t tag, const QuantizedPayload& payload) {
    return uplink(from, ch, tag, to_envelope(payload));
  }

  /// Delivers to every node inbox; the ledger is not touched.
  void broadcast(Broadcast message);

  /// Removes and returns every hub message in arrival order.
  std::vector<Message> drain_hub();
  /// Removes and returns a node's pending broadcasts.
  std::vector<Broadcast> drain_inbox(NodeId node);

  std::size_t node_count() const noexcept { return inboxes_.size(); }
  BitLedger ledger() const;

 private:
  mutable std::mutex mu_;
  std::deque<Message> hub_;
  std::vector<std::deque<Broadcast>> inboxes_;
  BitLedger ledger_;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace fedlm
