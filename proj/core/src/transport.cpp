#include "tafv/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace tafv {

namespace {

void put_u32(std::byte* out, uint32_t v) {
  out[0] = std::byte(v & 0xff);
  out[1] = std::byte((v >> 8) & 0xff);
  out[2] = std::byte((v >> 16) & 0xff);
  out[3] = std::byte((v >> 24) & 0xff);
}

void put_u64(std::byte* out, uint64_t v) {
  put_u32(out, uint32_t(v & 0xffffffffu));
  put_u32(out + 4, uint32_t(v >> 32));
}

uint32_t get_u32(const std::byte* in) {
  return uint32_t(in[0]) | (uint32_t(in[1]) << 8) | (uint32_t(in[2]) << 16) |
         (uint32_t(in[3]) << 24);
}

uint64_t get_u64(const std::byte* in) {
  return uint64_t(get_u32(in)) | (uint64_t(get_u32(in + 4)) << 32);
}

[[noreturn]] void fail(int rank, const std::string& what) {
  throw std::runtime_error("rank " + std::to_string(rank) + ": " + what);
}

}  // namespace

void encode_envelope(const Envelope& env, std::byte out[kEnvelopeBytes]) {
  put_u32(out, kEnvelopeMagic);
  put_u32(out + 4, env.source_rank);
  put_u32(out + 8, env.sender_ce);
  put_u32(out + 12, env.receiver_ce);
  put_u32(out + 16, env.iteration);
  put_u32(out + 20, env.phase_code);
  put_u64(out + 24, env.level_mask);
  put_u64(out + 32, env.payload_bytes);
}

bool decode_envelope(const std::byte in[kEnvelopeBytes], Envelope& env) {
  if (get_u32(in) != kEnvelopeMagic) return false;
  env.source_rank = get_u32(in + 4);
  env.sender_ce = get_u32(in + 8);
  env.receiver_ce = get_u32(in + 12);
  env.iteration = get_u32(in + 16);
  env.phase_code = get_u32(in + 20);
  env.level_mask = get_u64(in + 24);
  env.payload_bytes = get_u64(in + 32);
  return true;
}

std::vector<std::byte> Transport::recv(const MessageKey& key) {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] {
    if (closed_) return true;
    auto it = mailbox_.find(key);
    return it != mailbox_.end() && !it->second.empty();
  });
  auto it = mailbox_.find(key);
  if (it == mailbox_.end() || it->second.empty()) {
    fail(rank_, "transport closed while a matched receive was pending");
  }
  std::vector<std::byte> payload = std::move(it->second.front());
  it->second.pop_front();
  if (it->second.empty()) mailbox_.erase(it);
  return payload;
}

bool Transport::poll(const MessageKey& key) const {
  std::lock_guard lock(mu_);
  if (closed_) return true;  // let the pending recv surface the closure error
  auto it = mailbox_.find(key);
  return it != mailbox_.end() && !it->second.empty();
}

void Transport::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

void Transport::deliver(const Envelope& env, std::vector<std::byte> payload) {
  if (env.payload_bytes != payload.size()) {
    fail(rank_, "message payload length " + std::to_string(payload.size()) +
                    " does not match envelope (" + std::to_string(env.payload_bytes) + ")");
  }
  MessageKey key{int(env.source_rank), env.sender_ce, env.receiver_ce, env.iteration,
                 env.phase_code};
  {
    std::lock_guard lock(mu_);
    mailbox_[key].push_back(std::move(payload));
  }
  cv_.notify_all();
}

class LoopbackHub::Endpoint : public Transport {
 public:
  Endpoint(LoopbackHub* hub, int rank, int size) : Transport(rank, size), hub_(hub) {}

  void send(int dest_rank, const Envelope& env, std::span<const std::byte> payload) override {
    if (dest_rank < 0 || dest_rank >= size()) fail_bad_dest(dest_rank);
    hub_->endpoints_[dest_rank]->deliver(env,
                                         std::vector<std::byte>(payload.begin(), payload.end()));
  }

 private:
  void fail_bad_dest(int dest) { fail(rank(), "send to unknown rank " + std::to_string(dest)); }
  LoopbackHub* hub_;
};

LoopbackHub::LoopbackHub(int n_ranks) {
  if (n_ranks < 1) throw std::invalid_argument("loopback: need at least one rank");
  endpoints_.reserve(size_t(n_ranks));
  for (int r = 0; r < n_ranks; ++r) {
    endpoints_.push_back(std::make_unique<Endpoint>(this, r, n_ranks));
  }
}

LoopbackHub::~LoopbackHub() {
  for (auto& ep : endpoints_) ep->close();
}

Transport& LoopbackHub::transport(int rank) { return *endpoints_[size_t(rank)]; }

namespace {

// Full read/write with EINTR handling; false on EOF or hard error.
bool read_exact(int fd, std::byte* buf, size_t n) {
  size_t got = 0;
  while (got < n) {
    ssize_t r = ::read(fd, buf + got, n - got);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    got += size_t(r);
  }
  return true;
}

bool write_all(int fd, const std::byte* buf, size_t n) {
  size_t put = 0;
  while (put < n) {
    ssize_t r = ::write(fd, buf + put, n - put);
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    put += size_t(r);
  }
  return true;
}

}  // namespace

SocketTransport::SocketTransport(int rank, int n_ranks, uint16_t listen_port)
    : Transport(rank, n_ranks), peer_fd_(size_t(n_ranks), -1) {
  for (int r = 0; r < n_ranks; ++r) send_mu_.push_back(std::make_unique<std::mutex>());
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail(rank, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(listen_port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    fail(rank, std::string("bind: ") + std::strerror(errno));
  }
  if (::listen(listen_fd_, n_ranks) != 0) {
    fail(rank, std::string("listen: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  if (::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    fail(rank, std::string("getsockname: ") + std::strerror(errno));
  }
  listen_port_ = ntohs(addr.sin_port);
}

void SocketTransport::connect_peers(const std::vector<std::string>& peers) {
  // Dial every lower rank. All listeners exist before any dialing starts, so
  // the kernel backlog absorbs connects that land before the peer's accept.
  for (int r = 0; r < rank(); ++r) {
    if (size_t(r) >= peers.size()) fail(rank(), "missing peer endpoint for rank " + std::to_string(r));
    const std::string& ep = peers[size_t(r)];
    auto colon = ep.rfind(':');
    if (colon == std::string::npos) fail(rank(), "peer endpoint '" + ep + "' is not host:port");
    const std::string host = ep.substr(0, colon);
    const int port = std::stoi(ep.substr(colon + 1));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(uint16_t(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      fail(rank(), "peer host '" + host + "' is not an IPv4 address");
    }
    int fd = -1;
    for (int attempt = 0;; ++attempt) {
      fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) fail(rank(), std::string("socket: ") + std::strerror(errno));
      if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) break;
      ::close(fd);
      if (attempt > 2500) fail(rank(), "connect to " + ep + ": " + std::strerror(errno));
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    uint32_t hello[1] = {uint32_t(rank())};
    std::byte hb[4];
    put_u32(hb, hello[0]);
    if (!write_all(fd, hb, 4)) fail(rank(), "hello write to " + ep + " failed");
    peer_fd_[size_t(r)] = fd;
  }
  // Accept every higher rank; the 4-byte hello says which one arrived.
  for (int n = rank() + 1; n < size(); ++n) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) fail(rank(), std::string("accept: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::byte hb[4];
    if (!read_exact(fd, hb, 4)) fail(rank(), "hello read failed");
    const uint32_t peer = get_u32(hb);
    if (peer <= uint32_t(rank()) || peer >= uint32_t(size()) || peer_fd_[peer] != -1) {
      fail(rank(), "unexpected hello from rank " + std::to_string(peer));
    }
    peer_fd_[peer] = fd;
  }
  for (int r = 0; r < size(); ++r) {
    if (r == rank()) continue;
    pumps_.emplace_back([this, r] { pump(r); });
  }
}

void SocketTransport::send(int dest_rank, const Envelope& env,
                           std::span<const std::byte> payload) {
  if (dest_rank < 0 || dest_rank >= size() || peer_fd_[size_t(dest_rank)] < 0) {
    fail(rank(), "send to unconnected rank " + std::to_string(dest_rank));
  }
  if (env.payload_bytes != payload.size()) {
    fail(rank(), "send payload length does not match envelope");
  }
  std::byte header[kEnvelopeBytes];
  encode_envelope(env, header);
  std::lock_guard lock(*send_mu_[size_t(dest_rank)]);
  const int fd = peer_fd_[size_t(dest_rank)];
  if (!write_all(fd, header, kEnvelopeBytes) ||
      !write_all(fd, payload.data(), payload.size())) {
    fail(rank(), "stream write to rank " + std::to_string(dest_rank) + " failed: " +
                     std::strerror(errno));
  }
}

void SocketTransport::pump(int peer) {
  const int fd = peer_fd_[size_t(peer)];
  for (;;) {
    std::byte header[kEnvelopeBytes];
    if (!read_exact(fd, header, kEnvelopeBytes)) return;  // EOF: peer shut down
    Envelope env;
    if (!decode_envelope(header, env)) {
      close();  // corrupted stream: wake receivers so they abort rank-tagged
      return;
    }
    std::vector<std::byte> payload(env.payload_bytes);
    if (!read_exact(fd, payload.data(), payload.size())) {
      close();
      return;
    }
    deliver(env, std::move(payload));
  }
}

SocketTransport::~SocketTransport() {
  close();
  for (int r = 0; r < size(); ++r) {
    if (peer_fd_[size_t(r)] >= 0) ::shutdown(peer_fd_[size_t(r)], SHUT_RDWR);
  }
  for (auto& t : pumps_) {
    if (t.joinable()) t.join();
  }
  for (int r = 0; r < size(); ++r) {
    if (peer_fd_[size_t(r)] >= 0) ::close(peer_fd_[size_t(r)]);
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

}  // namespace tafv
