#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace tafv {

// Fixed 40-byte little-endian wire header. phase_code packs the subiteration,
// phase, and exchange round for ghost traffic; collectives use it as an
// opcode and put their sequence number in `iteration`.
struct Envelope {
  uint32_t source_rank = 0;
  uint32_t sender_ce = 0;
  uint32_t receiver_ce = 0;
  uint32_t iteration = 0;
  uint32_t phase_code = 0;
  uint64_t level_mask = 0;
  uint64_t payload_bytes = 0;
};

inline constexpr size_t kEnvelopeBytes = 40;
inline constexpr uint32_t kEnvelopeMagic = 0x54414656u;  // "TAFV"
// sender_ce marking rank-level collective traffic rather than a CE pair.
inline constexpr uint32_t kCollectiveCe = 0x7fffffffu;

void encode_envelope(const Envelope& env, std::byte out[kEnvelopeBytes]);
// False if the magic does not match; other fields are then unspecified.
bool decode_envelope(const std::byte in[kEnvelopeBytes], Envelope& env);

// Exact-match receive key: one message per key for the whole run (iteration
// counters and collective sequence numbers never repeat).
struct MessageKey {
  int source_rank = 0;
  uint32_t sender_ce = 0;
  uint32_t receiver_ce = 0;
  uint32_t iteration = 0;
  uint32_t phase_code = 0;

  bool operator<(const MessageKey& o) const {
    if (source_rank != o.source_rank) return source_rank < o.source_rank;
    if (sender_ce != o.sender_ce) return sender_ce < o.sender_ce;
    if (receiver_ce != o.receiver_ce) return receiver_ce < o.receiver_ce;
    if (iteration != o.iteration) return iteration < o.iteration;
    return phase_code < o.phase_code;
  }
};

// Point-to-point transport with a matched-receive mailbox. Messages of one
// (source, destination, CE pair) channel are delivered in send order; recv()
// blocks until the exact key arrives, poll() just probes for it. close()
// wakes every blocked receiver with a rank-tagged error.
class Transport {
 public:
  virtual ~Transport() = default;
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  virtual void send(int dest_rank, const Envelope& env, std::span<const std::byte> payload) = 0;
  std::vector<std::byte> recv(const MessageKey& key);
  bool poll(const MessageKey& key) const;
  void close();

  int rank() const { return rank_; }
  int size() const { return size_; }

 protected:
  Transport(int rank, int size) : rank_(rank), size_(size) {}
  // Mailbox insertion; called by senders (loopback) or pump threads (socket).
  void deliver(const Envelope& env, std::vector<std::byte> payload);

 private:
  int rank_;
  int size_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<MessageKey, std::deque<std::vector<std::byte>>> mailbox_;
  bool closed_ = false;
};

// In-process transport set: rank r's send(d, ...) delivers straight into rank
// d's mailbox. All endpoints must outlive their users; the hub owns them.
class LoopbackHub {
 public:
  explicit LoopbackHub(int n_ranks);
  ~LoopbackHub();
  Transport& transport(int rank);
  int size() const { return static_cast<int>(endpoints_.size()); }

 private:
  class Endpoint;
  std::vector<std::unique_ptr<Endpoint>> endpoints_;
};

// TCP transport: one full-duplex stream socket per rank pair, one pump thread
// per connection demultiplexing frames into the mailbox. Wire format: 40-byte
// envelope + payload. Connection setup: every rank listens; rank r dials every
// rank below it and sends a 4-byte little-endian rank hello on connect.
class SocketTransport : public Transport {
 public:
  // Binds and listens immediately (port 0 picks a free port) so peers can be
  // told the real port before connect_peers() runs.
  SocketTransport(int rank, int n_ranks, uint16_t listen_port = 0);
  ~SocketTransport() override;

  uint16_t listen_port() const { return listen_port_; }
  // peers[r] = "host:port" for every r < rank() (dial targets); entries for
  // r >= rank() are ignored. Blocks until the full mesh is up, then starts
  // the pump threads.
  void connect_peers(const std::vector<std::string>& peers);

  void send(int dest_rank, const Envelope& env, std::span<const std::byte> payload) override;

 private:
  void pump(int peer);

  int listen_fd_ = -1;
  uint16_t listen_port_ = 0;
  std::vector<int> peer_fd_;
  std::vector<std::unique_ptr<std::mutex>> send_mu_;  // one per peer socket
  std::vector<std::thread> pumps_;
};

}  // namespace tafv
