#include "gradhub/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "gradhub/errors.hpp"

namespace gradhub {

// ===========================================================================
// inproc backend
// ===========================================================================

struct InprocHub::Impl {
  struct Mailbox {
    std::mutex mu;
    std::condition_variable nonempty;
    std::condition_variable space;
    std::deque<std::pair<int, std::vector<std::uint8_t>>> q;
    std::vector<std::size_t> inflight;  // per sender
  };

  int n = 0;
  WirePrecision wire = WirePrecision::f32;
  std::size_t cap = 16;
  std::vector<std::unique_ptr<Mailbox>> boxes;
  std::mutex state_mu;
  std::vector<bool> claimed;
  std::vector<bool> closed;
  int open_count = 0;

  int open_others(int self) {
    std::lock_guard<std::mutex> lk(state_mu);
    return open_count - (closed[static_cast<std::size_t>(self)] ? 0 : 1);
  }

  bool is_closed(int r) {
    std::lock_guard<std::mutex> lk(state_mu);
    return closed[static_cast<std::size_t>(r)];
  }

  void mark_closed(int r) {
    {
      std::lock_guard<std::mutex> lk(state_mu);
      if (closed[static_cast<std::size_t>(r)]) return;
      closed[static_cast<std::size_t>(r)] = true;
      --open_count;
    }
    for (auto& b : boxes) {
      std::lock_guard<std::mutex> lk(b->mu);
      b->nonempty.notify_all();
      b->space.notify_all();
    }
  }

  void push(int from, int to, std::vector<std::uint8_t> bytes) {
    Mailbox& box = *boxes[static_cast<std::size_t>(to)];
    std::unique_lock<std::mutex> lk(box.mu);
    box.space.wait(lk, [&] {
      return box.inflight[static_cast<std::size_t>(from)] < cap || is_closed(to) ||
             is_closed(from);
    });
    if (is_closed(to)) throw TransportError("send: rank " + std::to_string(to) + " is closed");
    if (is_closed(from)) throw TransportError("send after shutdown");
    box.q.emplace_back(from, std::move(bytes));
    ++box.inflight[static_cast<std::size_t>(from)];
    box.nonempty.notify_one();
  }
};

namespace {

class InprocEndpoint : public Endpoint {
 public:
  InprocEndpoint(std::shared_ptr<InprocHub::Impl> impl, int rank)
      : impl_(std::move(impl)), rank_(rank) {}

  ~InprocEndpoint() override { close(); }

  int rank() const override { return rank_; }

  void send(int to, const Message& m) override {
    if (to < 0 || to >= impl_->n || to == rank_) {
      throw TransportError("send: unknown rank " + std::to_string(to));
    }
    if (impl_->is_closed(rank_)) throw TransportError("send after shutdown");
    if (impl_->is_closed(to)) {
      throw TransportError("send: rank " + std::to_string(to) + " is closed");
    }
    impl_->push(rank_, to, encode(m, impl_->wire));
    ++sent_;
  }

  std::optional<Incoming> recv() override {
    auto& box = *impl_->boxes[static_cast<std::size_t>(rank_)];
    int from = -1;
    std::vector<std::uint8_t> bytes;
    {
      std::unique_lock<std::mutex> lk(box.mu);
      box.nonempty.wait(lk, [&] {
        return !box.q.empty() || impl_->open_others(rank_) == 0;
      });
      if (box.q.empty()) return std::nullopt;  // all peers closed and drained
      from = box.q.front().first;
      bytes = std::move(box.q.front().second);
      box.q.pop_front();
      --box.inflight[static_cast<std::size_t>(from)];
      box.space.notify_all();
    }
    DecodeResult dr = decode(bytes);
    if (dr.status != DecodeStatus::ok) {
      throw TransportError("recv: bad frame from rank " + std::to_string(from) +
                           ": " + to_string(dr.status));
    }
    ++received_;
    return Incoming{from, std::move(*dr.message)};
  }

  void close() override { impl_->mark_closed(rank_); }

 private:
  std::shared_ptr<InprocHub::Impl> impl_;
  int rank_;
};

}  // namespace

InprocHub::InprocHub(int n_ranks, WirePrecision wire, std::size_t link_capacity)
    : impl_(std::make_shared<Impl>()) {
  if (n_ranks < 1) throw TransportError("inproc hub needs at least one rank");
  impl_->n = n_ranks;
  impl_->wire = wire;
  impl_->cap = link_capacity < 1 ? 1 : link_capacity;
  impl_->claimed.assign(static_cast<std::size_t>(n_ranks), false);
  impl_->closed.assign(static_cast<std::size_t>(n_ranks), false);
  impl_->open_count = n_ranks;
  impl_->boxes.reserve(static_cast<std::size_t>(n_ranks));
  for (int i = 0; i < n_ranks; ++i) {
    auto box = std::make_unique<Impl::Mailbox>();
    box->inflight.assign(static_cast<std::size_t>(n_ranks), 0);
    impl_->boxes.push_back(std::move(box));
  }
}

InprocHub::~InprocHub() = default;

int InprocHub::n_ranks() const { return impl_->n; }

std::unique_ptr<Endpoint> InprocHub::endpoint(int rank) {
  if (rank < 0 || rank >= impl_->n) {
    throw TransportError("endpoint: rank " + std::to_string(rank) + " out of range");
  }
  {
    std::lock_guard<std::mutex> lk(impl_->state_mu);
    if (impl_->claimed[static_cast<std::size_t>(rank)]) {
      throw TransportError("endpoint: rank " + std::to_string(rank) +
                           " already claimed (duplicate rank)");
    }
    impl_->claimed[static_cast<std::size_t>(rank)] = true;
  }
  return std::make_unique<InprocEndpoint>(impl_, rank);
}

void InprocHub::inject_raw(int from, int to, std::vector<std::uint8_t> bytes) {
  impl_->push(from, to, std::move(bytes));
}

// ===========================================================================
// tcp backend
// ===========================================================================

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t w = ::write(fd, data + off, n - off);
    if (w <= 0) throw TransportError("tcp write failed: " + std::string(strerror(errno)));
    off += static_cast<std::size_t>(w);
  }
}

// Returns false on clean EOF at a frame boundary.
bool read_exact(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::read(fd, data + off, n - off);
    if (r == 0) {
      if (off == 0) return false;
      throw TransportError("tcp peer closed mid-frame");
    }
    if (r < 0) throw TransportError("tcp read failed: " + std::string(strerror(errno)));
    off += static_cast<std::size_t>(r);
  }
  return true;
}

int make_socket() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError("socket() failed");
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw TransportError("bad address: " + host);
  }
  return addr;
}

class TcpEndpoint : public Endpoint {
 public:
  TcpEndpoint(int rank, std::vector<std::pair<int, int>> peer_fds,
              WirePrecision wire, std::size_t cap)
      : rank_(rank), wire_(wire), cap_(cap < 1 ? 1 : cap) {
    for (auto& [peer, fd] : peer_fds) {
      links_[peer] = std::make_unique<Link>();
      links_[peer]->fd = fd;
    }
    live_readers_ = static_cast<int>(links_.size());
    for (auto& [peer, link] : links_) {
      link->reader = std::thread([this, peer = peer, l = link.get()] { reader_loop(peer, *l); });
    }
  }

  ~TcpEndpoint() override { close(); }

  int rank() const override { return rank_; }

  void send(int to, const Message& m) override {
    auto it = links_.find(to);
    if (it == links_.end()) {
      throw TransportError("send: unknown rank " + std::to_string(to));
    }
    if (closed_) throw TransportError("send after shutdown");
    const std::vector<std::uint8_t> bytes = encode(m, wire_);
    std::lock_guard<std::mutex> lk(it->second->write_mu);
    write_all(it->second->fd, bytes.data(), bytes.size());
    ++sent_;
  }

  std::optional<Incoming> recv() override {
    Entry e;
    {
      std::unique_lock<std::mutex> lk(mu_);
      nonempty_.wait(lk, [&] { return !q_.empty() || live_readers_ == 0; });
      if (q_.empty()) return std::nullopt;
      e = std::move(q_.front());
      q_.pop_front();
      --inflight_[e.from];
      space_.notify_all();
    }
    if (!e.error.empty()) throw TransportError(e.error);
    ++received_;
    return Incoming{e.from, std::move(e.msg)};
  }

  void close() override {
    bool expected = false;
    if (!closing_.compare_exchange_strong(expected, true)) return;
    closed_ = true;
    {
      std::lock_guard<std::mutex> lk(mu_);
      space_.notify_all();  // unblock readers stuck on a full queue
    }
    for (auto& [peer, link] : links_) {
      ::shutdown(link->fd, SHUT_RDWR);
    }
    for (auto& [peer, link] : links_) {
      if (link->reader.joinable()) link->reader.join();
      ::close(link->fd);
      link->fd = -1;
    }
    std::lock_guard<std::mutex> lk(mu_);
    nonempty_.notify_all();
  }

 private:
  struct Link {
    int fd = -1;
    std::mutex write_mu;
    std::thread reader;
  };

  struct Entry {
    int from = -1;
    Message msg;
    std::string error;
  };

  void push_entry(Entry e) {
    std::unique_lock<std::mutex> lk(mu_);
    space_.wait(lk, [&] { return inflight_[e.from] < cap_ || closed_; });
    if (closed_) return;
    ++inflight_[e.from];
    q_.push_back(std::move(e));
    nonempty_.notify_one();
  }

  void reader_loop(int peer, Link& link) {
    try {
      while (true) {
        std::uint8_t header[kHeaderSize];
        if (!read_exact(link.fd, header, kHeaderSize)) break;  // peer closed
        const auto len = peek_payload_length({header, kHeaderSize});
        if (!len) {
          push_entry(Entry{peer, Message{}, "recv: bad frame header from rank " +
                                                std::to_string(peer)});
          break;
        }
        std::vector<std::uint8_t> frame(kHeaderSize + static_cast<std::size_t>(*len));
        std::memcpy(frame.data(), header, kHeaderSize);
        if (*len > 0 && !read_exact(link.fd, frame.data() + kHeaderSize,
                                    static_cast<std::size_t>(*len))) {
          push_entry(Entry{peer, Message{}, "tcp peer closed mid-frame"});
          break;
        }
        DecodeResult dr = decode(frame);
        if (dr.status != DecodeStatus::ok) {
          push_entry(Entry{peer, Message{}, "recv: bad frame from rank " +
                                                std::to_string(peer) + ": " +
                                                to_string(dr.status)});
          break;
        }
        push_entry(Entry{peer, std::move(*dr.message), {}});
      }
    } catch (const TransportError& err) {
      if (!closed_) push_entry(Entry{peer, Message{}, err.what()});
    }
    std::lock_guard<std::mutex> lk(mu_);
    --live_readers_;
    nonempty_.notify_all();
  }

  int rank_;
  WirePrecision wire_;
  std::size_t cap_;
  std::map<int, std::unique_ptr<Link>> links_;

  std::mutex mu_;
  std::condition_variable nonempty_;
  std::condition_variable space_;
  std::deque<Entry> q_;
  std::map<int, std::size_t> inflight_;
  int live_readers_ = 0;
  std::atomic<bool> closing_{false};
  std::atomic<bool> closed_{false};

  friend std::unique_ptr<Endpoint> make_tcp_endpoint(int, std::vector<std::pair<int, int>>,
                                                     WirePrecision, std::size_t);

 public:
  void set_live_readers(int n) { live_readers_ = n; }
};

std::unique_ptr<Endpoint> make_tcp_endpoint(int rank,
                                            std::vector<std::pair<int, int>> peer_fds,
                                            WirePrecision wire, std::size_t cap) {
  auto ep = std::make_unique<TcpEndpoint>(rank, std::move(peer_fds), wire, cap);
  return ep;
}

struct RawListener {
  int fd = -1;
  std::uint16_t port = 0;

  RawListener(const std::string& host, std::uint16_t want_port) {
    fd = make_socket();
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = make_addr(host, want_port);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw TransportError("bind " + host + ":" + std::to_string(want_port) +
                           " failed: " + strerror(errno));
    }
    if (::listen(fd, 128) != 0) {
      ::close(fd);
      throw TransportError("listen failed");
    }
    sockaddr_in got{};
    socklen_t len = sizeof(got);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&got), &len);
    port = ntohs(got.sin_port);
  }

  ~RawListener() {
    if (fd >= 0) ::close(fd);
  }

  // Accept one connection and read its HELLO frame.
  std::pair<int, int> accept_hello() {
    const int cfd = ::accept(fd, nullptr, nullptr);
    if (cfd < 0) throw TransportError("accept failed");
    const int one = 1;
    ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::uint8_t header[kHeaderSize];
    if (!read_exact(cfd, header, kHeaderSize)) {
      ::close(cfd);
      throw TransportError("peer closed before HELLO");
    }
    const auto len = peek_payload_length({header, kHeaderSize});
    if (!len) {
      ::close(cfd);
      throw TransportError("bad HELLO header");
    }
    std::vector<std::uint8_t> frame(kHeaderSize + static_cast<std::size_t>(*len));
    std::memcpy(frame.data(), header, kHeaderSize);
    if (*len > 0) read_exact(cfd, frame.data() + kHeaderSize, static_cast<std::size_t>(*len));
    DecodeResult dr = decode(frame);
    if (dr.status != DecodeStatus::ok || !std::holds_alternative<HelloMsg>(*dr.message)) {
      ::close(cfd);
      throw TransportError("expected HELLO, got invalid frame");
    }
    return {static_cast<int>(std::get<HelloMsg>(*dr.message).rank), cfd};
  }
};

int raw_connect(const std::string& host, std::uint16_t port, int my_rank, Role role) {
  const int fd = make_socket();
  sockaddr_in addr = make_addr(host, port);
  // Retries cover the multi-process case where the master is still binding.
  int attempts = 0;
  while (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    if (++attempts > 50) {
      ::close(fd);
      throw TransportError("connect " + host + ":" + std::to_string(port) +
                           " failed: " + strerror(errno));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  const std::vector<std::uint8_t> hello =
      encode(HelloMsg{static_cast<std::uint32_t>(my_rank), role});
  write_all(fd, hello.data(), hello.size());
  return fd;
}

}  // namespace

std::unique_ptr<Endpoint> tcp_listen(int rank, const std::string& host,
                                     std::uint16_t& port,
                                     const std::vector<int>& expected_peers,
                                     WirePrecision wire, std::size_t link_capacity) {
  RawListener listener(host, port);
  port = listener.port;
  std::vector<std::pair<int, int>> peer_fds;
  std::vector<bool> seen;
  for (std::size_t i = 0; i < expected_peers.size(); ++i) {
    auto [peer_rank, fd] = listener.accept_hello();
    bool expected = false;
    for (int want : expected_peers) expected = expected || want == peer_rank;
    for (auto& [have, _] : peer_fds) {
      if (have == peer_rank) {
        ::close(fd);
        throw TransportError("duplicate rank " + std::to_string(peer_rank) + " in session");
      }
    }
    if (!expected) {
      ::close(fd);
      throw TransportError("unexpected rank " + std::to_string(peer_rank) + " connected");
    }
    peer_fds.emplace_back(peer_rank, fd);
  }
  (void)seen;
  return make_tcp_endpoint(rank, std::move(peer_fds), wire, link_capacity);
}

std::unique_ptr<Endpoint> tcp_connect(int rank, Role role, const TcpPeerSpec& peer,
                                      WirePrecision wire, std::size_t link_capacity) {
  const int fd = raw_connect(peer.host, peer.port, rank, role);
  return make_tcp_endpoint(rank, {{peer.rank, fd}}, wire, link_capacity);
}

// ===========================================================================
// topology + establish
// ===========================================================================

std::vector<int> Topology::children_of(int rank) const {
  std::vector<int> out;
  for (int r = 0; r < n_ranks(); ++r) {
    if (parent[static_cast<std::size_t>(r)] == rank) out.push_back(r);
  }
  return out;
}

void Topology::validate() const {
  if (parent.empty()) throw ConfigError("topology: empty");
  if (parent[0] != -1) throw ConfigError("topology: rank 0 must be the top-level master");
  for (int r = 1; r < n_ranks(); ++r) {
    const int p = parent[static_cast<std::size_t>(r)];
    if (p < 0 || p >= n_ranks() || p == r) {
      throw ConfigError("topology: rank " + std::to_string(r) + " has bad parent");
    }
  }
}

Topology Topology::flat(int n_workers) {
  Topology t;
  t.parent.assign(static_cast<std::size_t>(n_workers) + 1, 0);
  t.parent[0] = -1;
  return t;
}

Topology Topology::hierarchical(int groups, int workers_per_group) {
  Topology t;
  const int n = 1 + groups + groups * workers_per_group;
  t.parent.assign(static_cast<std::size_t>(n), -1);
  for (int g = 0; g < groups; ++g) t.parent[static_cast<std::size_t>(1 + g)] = 0;
  for (int g = 0; g < groups; ++g) {
    for (int w = 0; w < workers_per_group; ++w) {
      t.parent[static_cast<std::size_t>(1 + groups + g * workers_per_group + w)] = 1 + g;
    }
  }
  return t;
}

std::vector<std::unique_ptr<Endpoint>> establish(const Topology& topo,
                                                 const std::string& backend,
                                                 WirePrecision wire,
                                                 std::size_t link_capacity) {
  topo.validate();
  const int n = topo.n_ranks();
  std::vector<std::unique_ptr<Endpoint>> eps(static_cast<std::size_t>(n));

  if (backend == "inproc") {
    InprocHub hub(n, wire, link_capacity);
    for (int r = 0; r < n; ++r) eps[static_cast<std::size_t>(r)] = hub.endpoint(r);
    return eps;
  }
  if (backend != "tcp") throw ConfigError("unknown backend: " + backend);

  // Loopback tcp, all ranks in this process. Listeners first so every
  // child's connect lands in a backlog; no threads needed.
  std::map<int, std::unique_ptr<RawListener>> listeners;
  for (int r = 0; r < n; ++r) {
    if (!topo.children_of(r).empty()) {
      listeners[r] = std::make_unique<RawListener>("127.0.0.1", 0);
    }
  }
  std::map<int, std::vector<std::pair<int, int>>> fds;  // rank -> (peer, fd)
  for (int r = 1; r < n; ++r) {
    const int p = topo.parent[static_cast<std::size_t>(r)];
    const Role role = topo.children_of(r).empty() ? Role::worker : Role::submaster;
    const int fd = raw_connect("127.0.0.1", listeners.at(p)->port, r, role);
    fds[r].emplace_back(p, fd);
  }
  for (auto& [r, listener] : listeners) {
    const std::vector<int> kids = topo.children_of(r);
    std::vector<int> seen;
    for (std::size_t i = 0; i < kids.size(); ++i) {
      auto [peer_rank, fd] = listener->accept_hello();
      bool valid = false;
      for (int k : kids) valid = valid || k == peer_rank;
      for (int s : seen) {
        if (s == peer_rank) valid = false;
      }
      if (!valid) {
        ::close(fd);
        throw TransportError("establish: bad HELLO rank " + std::to_string(peer_rank));
      }
      seen.push_back(peer_rank);
      fds[r].emplace_back(peer_rank, fd);
    }
  }
  for (int r = 0; r < n; ++r) {
    eps[static_cast<std::size_t>(r)] =
        make_tcp_endpoint(r, std::move(fds[r]), wire, link_capacity);
  }
  return eps;
}

}  // namespace gradhub
