#include "fedlm/transport.hpp"

#include <stdexcept>
#include <string>

namespace fedlm {

Envelope to_envelope(const QuantizedPayload& p) {
  Envelope e;
  e.bytes = serialize(p);
  e.payload_bits = p.payload_bits();
  e.header_bits = e.bytes.size() * 8 - e.payload_bits;
  return e;
}

void BitLedger::charge(NodeId node, Channel ch, std::uint64_t tag, std::uint64_t payload_bits,
                       std::uint64_t header_bits) {
  switch (ch) {
    case Channel::training: training_[{node, tag}] += payload_bits; break;
    case Channel::inference: inference_[{node, tag}] += payload_bits; break;
    case Channel::calibration: calibration_[node] += payload_bits; break;
  }
  header_bits_ += header_bits;
  ++messages_;
}

namespace {
template <typename Map, typename Key>
std::uint64_t lookup(const Map& m, const Key& k) {
  const auto it = m.find(k);
  return it == m.end() ? 0 : it->second;
}
}  // namespace

std::uint64_t BitLedger::training_bits(NodeId node, std::uint64_t round) const {
  return lookup(training_, std::pair{node, round});
}

std::uint64_t BitLedger::inference_bits(NodeId node, std::uint64_t query) const {
  return lookup(inference_, std::pair{node, query});
}

std::uint64_t BitLedger::calibration_bits(NodeId node) const { return lookup(calibration_, node); }

std::uint64_t BitLedger::total_payload_bits(Channel ch) const {
  std::uint64_t total = 0;
  switch (ch) {
    case Channel::training:
      for (const auto& [k, v] : training_) total += v;
      break;
    case Channel::inference:
      for (const auto& [k, v] : inference_) total += v;
      break;
    case Channel::calibration:
      for (const auto& [k, v] : calibration_) total += v;
      break;
  }
  return total;
}

void BitLedger::merge(const BitLedger& other) {
  for (const auto& [k, v] : other.training_) training_[k] += v;
  for (const auto& [k, v] : other.inference_) inference_[k] += v;
  for (const auto& [k, v] : other.calibration_) calibration_[k] += v;
  header_bits_ += other.header_bits_;
  messages_ += other.messages_;
}

Receipt Bus::uplink(NodeId from, Channel ch, std::uint64_t tag, Envelope body) {
  if (from >= inboxes_.size()) {
    throw std::out_of_range("uplink from unknown node " + std::to_string(from));
  }
  std::lock_guard lock(mu_);
  Receipt r{next_sequence_++, body.payload_bits, body.header_bits};
  ledger_.charge(from, ch, tag, body.payload_bits, body.header_bits);
  hub_.push_back(Message{from, ch, tag, r.sequence, std::move(body)});
  return r;
}

void Bus::broadcast(Broadcast message) {
  std::lock_guard lock(mu_);
  for (auto& inbox : inboxes_) inbox.push_back(message);
}

std::vector<Message> Bus::drain_hub() {
  std::lock_guard lock(mu_);
  std::vector<Message> out(std::make_move_iterator(hub_.begin()), std::make_move_iterator(hub_.end()));
  hub_.clear();
  return out;
}

std::vector<Broadcast> Bus::drain_inbox(NodeId node) {
  std::lock_guard lock(mu_);
  auto& inbox = inboxes_.at(node);
  std::vector<Broadcast> out(inbox.begin(), inbox.end());
  inbox.clear();
  return out;
}

BitLedger Bus::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

}  // namespace fedlm
