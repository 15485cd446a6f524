#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradhub/proto.hpp"

namespace gradhub {

struct Incoming {
  int from = -1;
  Message msg;
};

// One endpoint per rank, owned by exactly one role loop. Blocking send/recv
// with per-(sender,receiver) FIFO ordering. Both backends move encoded
// frames, so a run behaves the same over inproc and tcp.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual int rank() const = 0;

  // Blocks while the bounded per-link queue to `to` is full (backpressure).
  // Throws TransportError if `to` is unknown or the link is down.
  virtual void send(int to, const Message& m) = 0;

  // Blocks until a message from any peer is available. Returns nullopt once
  // every peer has closed and the queue is drained (end of session).
  virtual std::optional<Incoming> recv() = 0;

  virtual void close() = 0;

  std::uint64_t messages_sent() const { return sent_; }
  std::uint64_t messages_received() const { return received_; }

 protected:
  std::uint64_t sent_ = 0;
  std::uint64_t received_ = 0;
};

// ---------------------------------------------------------------------------
// In-process backend: all ranks in one process, frames moved through bounded
// mailboxes. Capacity is per (sender,receiver) link; a full link blocks the
// sender, which is what makes master contention observable at high worker
// counts.
// ---------------------------------------------------------------------------

class InprocHub {
 public:
  explicit InprocHub(int n_ranks, WirePrecision wire = WirePrecision::f32,
                     std::size_t link_capacity = 16);
  ~InprocHub();

  InprocHub(const InprocHub&) = delete;
  InprocHub& operator=(const InprocHub&) = delete;

  // Claim the endpoint for `rank`; each rank may be claimed once.
  std::unique_ptr<Endpoint> endpoint(int rank);

  int n_ranks() const;

  // Test hook: deliver raw bytes as if `from` had sent them.
  void inject_raw(int from, int to, std::vector<std::uint8_t> bytes);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// TCP backend: star links, framed by the codec itself. Masters listen,
// children connect and introduce themselves with HELLO.
// ---------------------------------------------------------------------------

struct TcpPeerSpec {
  int rank = -1;
  std::string host;
  std::uint16_t port = 0;
};

// Listen on host:port (port 0 picks an ephemeral one, reported back) and
// accept exactly the given peer ranks. Blocks until all expected peers have
// said HELLO.
std::unique_ptr<Endpoint> tcp_listen(int rank, const std::string& host,
                                     std::uint16_t& port,
                                     const std::vector<int>& expected_peers,
                                     WirePrecision wire = WirePrecision::f32,
                                     std::size_t link_capacity = 16);

// Connect to a listening peer and send HELLO.
std::unique_ptr<Endpoint> tcp_connect(int rank, Role role, const TcpPeerSpec& peer,
                                      WirePrecision wire = WirePrecision::f32,
                                      std::size_t link_capacity = 16);

// ---------------------------------------------------------------------------
// Session establishment over a star-per-group tree. parent[r] is the master
// of rank r (-1 for the top-level master, rank 0).
// ---------------------------------------------------------------------------

struct Topology {
  std::vector<int> parent;

  int n_ranks() const { return static_cast<int>(parent.size()); }
  std::vector<int> children_of(int rank) const;
  void validate() const;

  static Topology flat(int n_workers);
  static Topology hierarchical(int groups, int workers_per_group);
};

// All ranks in one process. backend "inproc" shares a hub; "tcp" runs over
// loopback sockets. Returned endpoints are indexed by rank.
std::vector<std::unique_ptr<Endpoint>> establish(
    const Topology& topo, const std::string& backend,
    WirePrecision wire = WirePrecision::f32, std::size_t link_capacity = 16);

}  // namespace gradhub
