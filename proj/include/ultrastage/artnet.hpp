#pragma once

// Art-Net 4 ArtDmx / ArtSync encoding and a loopback virtual dome.

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "ultrastage/dome.hpp"
#include "ultrastage/error.hpp"
#include "ultrastage/spectral.hpp"

namespace ultrastage::artnet {

inline constexpr std::uint16_t kDefaultPort = 6454;
inline constexpr std::uint16_t kOpDmx = 0x5000;
inline constexpr std::uint16_t kOpSync = 0x5200;
inline constexpr std::uint16_t kProtocolVersion = 14;
inline constexpr std::size_t kDmxHeaderSize = 18;
inline constexpr std::size_t kSyncPacketSize = 14;
inline constexpr std::array<std::uint8_t, 8> kMagic{'A', 'r', 't', '-', 'N', 'e', 't', 0};
inline constexpr int kFullUniverseLength = kPanelsPerUniverse * kChannelsPerPanel;  // 510

struct DmxPacket {
  std::uint8_t sequence = 0;   // 0 disables reordering checks
  std::uint8_t physical = 0;
  std::uint16_t universe = 0;  // 15-bit port-address
  std::vector<std::uint8_t> data;

  friend bool operator==(const DmxPacket&, const DmxPacket&) = default;
};

using Bytes = std::vector<std::uint8_t>;

inline Bytes serialize(const DmxPacket& p) {
  if (p.data.size() < 2 || p.data.size() > 512 || p.data.size() % 2 != 0) {
    throw RangeError("ArtDmx length must be even and in [2, 512]");
  }
  if (p.universe > 0x7fff) throw RangeError("port-address must fit in 15 bits");
  Bytes out(kMagic.begin(), kMagic.end());
  out.push_back(kOpDmx & 0xff);
  out.push_back(kOpDmx >> 8);
  out.push_back(kProtocolVersion >> 8);
  out.push_back(kProtocolVersion & 0xff);
  out.push_back(p.sequence);
  out.push_back(p.physical);
  out.push_back(p.universe & 0xff);
  out.push_back(static_cast<std::uint8_t>(p.universe >> 8));
  const auto len = static_cast<std::uint16_t>(p.data.size());
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(len & 0xff);
  out.insert(out.end(), p.data.begin(), p.data.end());
  return out;
}

inline Bytes sync_packet() {
  Bytes out(kMagic.begin(), kMagic.end());
  out.push_back(kOpSync & 0xff);
  out.push_back(kOpSync >> 8);
  out.push_back(kProtocolVersion >> 8);
  out.push_back(kProtocolVersion & 0xff);
  out.push_back(0);  // aux1
  out.push_back(0);  // aux2
  return out;
}

enum class PacketKind { Dmx, Sync };

struct ParsedPacket {
  PacketKind kind = PacketKind::Dmx;
  DmxPacket dmx;
};

// Empty for anything that is not a well-formed ArtDmx or ArtSync packet.
inline std::optional<ParsedPacket> parse(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || !std::equal(kMagic.begin(), kMagic.end(), b.begin())) return std::nullopt;
  const std::uint16_t op = static_cast<std::uint16_t>(b[8] | (b[9] << 8));
  const std::uint16_t version = static_cast<std::uint16_t>((b[10] << 8) | b[11]);
  if (version < kProtocolVersion) return std::nullopt;
  if (op == kOpSync) {
    if (b.size() < kSyncPacketSize) return std::nullopt;
    return ParsedPacket{PacketKind::Sync, {}};
  }
  if (op != kOpDmx || b.size() < kDmxHeaderSize) return std::nullopt;
  ParsedPacket out;
  out.dmx.sequence = b[12];
  out.dmx.physical = b[13];
  out.dmx.universe = static_cast<std::uint16_t>(b[14] | ((b[15] & 0x7f) << 8));
  const std::size_t len = static_cast<std::size_t>((b[16] << 8) | b[17]);
  if (len < 2 || len > 512 || len % 2 != 0 || b.size() != kDmxHeaderSize + len) return std::nullopt;
  out.dmx.data.assign(b.begin() + kDmxHeaderSize, b.end());
  return out;
}

// Rolling sequence number: 1..255, skipping the "disabled" value 0.
inline std::uint8_t next_sequence(std::uint8_t s) { return s == 255 ? 1 : static_cast<std::uint8_t>(s + 1); }

// One ArtDmx packet per universe the dome addresses, in ascending universe
// order. Each carries at least the 510 channels of a full 85-panel universe.
inline std::vector<DmxPacket> encode_frame(const LightMap& lightmap, const DomeGeometry& geometry,
                                           std::uint8_t seq_no) {
  if (lightmap.size() != geometry.size()) throw ShapeError("lightmap does not match dome");
  std::map<int, DmxPacket> by_universe;
  for (const auto& panel : geometry.panels()) {
    auto& pkt = by_universe[panel.universe];
    const std::size_t end = static_cast<std::size_t>(panel.channel_base + kChannelsPerPanel);
    const std::size_t want = std::max<std::size_t>(kFullUniverseLength, (end + 1) & ~std::size_t{1});
    if (pkt.data.size() < want) pkt.data.resize(want, 0);
    const Dmx6& d = lightmap.dmx[static_cast<std::size_t>(panel.id)];
    std::copy(d.begin(), d.end(), pkt.data.begin() + panel.channel_base);
  }
  std::vector<DmxPacket> out;
  for (auto& [u, pkt] : by_universe) {
    pkt.universe = static_cast<std::uint16_t>(u);
    pkt.sequence = seq_no;
    out.push_back(std::move(pkt));
  }
  return out;
}

// Per-panel DMX values gathered back from universe payloads. Channels a
// payload does not cover read as zero.
inline std::vector<Dmx6> decode_frame(const std::map<int, std::vector<std::uint8_t>>& universes,
                                      const DomeGeometry& geometry) {
  std::vector<Dmx6> out(geometry.size(), Dmx6{});
  for (const auto& panel : geometry.panels()) {
    const auto it = universes.find(panel.universe);
    if (it == universes.end()) continue;
    for (int c = 0; c < kChannelsPerPanel; ++c) {
      const auto ch = static_cast<std::size_t>(panel.channel_base + c);
      if (ch < it->second.size()) out[static_cast<std::size_t>(panel.id)][static_cast<std::size_t>(c)] = it->second[ch];
    }
  }
  return out;
}

// Virtual dome: keeps the latest payload per universe. ArtDmx packets are
// staged and become visible together when the frame's ArtSync arrives, which
// also bumps the frame counter. Safe for concurrent readers.
class LoopbackSink {
 public:
  void receive(std::span<const std::uint8_t> bytes) {
    const auto parsed = parse(bytes);
    std::lock_guard lock(m_);
    if (!parsed) {
      ++malformed_;
      return;
    }
    if (parsed->kind == PacketKind::Dmx) {
      pending_[parsed->dmx.universe] = parsed->dmx.data;
      ++packets_;
      return;
    }
    for (auto& [u, data] : pending_) state_[u] = std::move(data);
    pending_.clear();
    ++frames_;
  }

  // In-process delivery of one encoded frame followed by its ArtSync.
  void receive_frame(const std::vector<DmxPacket>& packets) {
    for (const auto& p : packets) receive(serialize(p));
    receive(sync_packet());
  }

  std::map<int, std::vector<std::uint8_t>> state() const {
    std::lock_guard lock(m_);
    return state_;
  }
  std::vector<Dmx6> panel_state(const DomeGeometry& geometry) const { return decode_frame(state(), geometry); }
  std::uint64_t frame_count() const {
    std::lock_guard lock(m_);
    return frames_;
  }
  std::uint64_t packet_count() const {
    std::lock_guard lock(m_);
    return packets_;
  }
  std::uint64_t malformed_count() const {
    std::lock_guard lock(m_);
    return malformed_;
  }

 private:
  mutable std::mutex m_;
  std::map<int, std::vector<std::uint8_t>> state_;
  std::map<int, std::vector<std::uint8_t>> pending_;
  std::uint64_t frames_ = 0;
  std::uint64_t packets_ = 0;
  std::uint64_t malformed_ = 0;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
};

inline Endpoint parse_endpoint(const std::string& s) {
  Endpoint e;
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) {
    e.host = s;
    return e;
  }
  e.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 1 || p > 65535) throw std::out_of_range(port);
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw ConfigError("bad port in endpoint '" + s + "'");
  }
  if (e.host.empty()) throw ConfigError("missing host in endpoint '" + s + "'");
  return e;
}

class UdpSocket {
 public:
  UdpSocket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
    if (fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  }
  ~UdpSocket() {
    if (fd_ >= 0) ::close(fd_);
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_;
};

inline sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(e.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || !res) throw IoError("cannot resolve " + e.host + ": " + ::gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(e.port);
  return addr;
}

// Fire-and-forget datagram sender. A frame is its ArtDmx packets followed by
// one ArtSync.
class UdpSender {
 public:
  explicit UdpSender(const Endpoint& endpoint) : addr_(resolve(endpoint)) {
    int yes = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_BROADCAST, &yes, sizeof yes);
  }

  void send(std::span<const std::uint8_t> bytes) {
    const auto n = ::sendto(sock_.fd(), bytes.data(), bytes.size(), 0,
                            reinterpret_cast<const sockaddr*>(&addr_), sizeof addr_);
    // Unreachable peers surface as ECONNREFUSED on later sends; lighting
    // state is idempotent per frame, so only local failures are errors.
    if (n < 0 && errno != ECONNREFUSED && errno != EHOSTUNREACH && errno != ENETUNREACH) {
      throw IoError(std::string("sendto: ") + std::strerror(errno));
    }
  }

  void send_frame(const std::vector<DmxPacket>& packets) {
    for (const auto& p : packets) send(serialize(p));
    send(sync_packet());
  }

 private:
  UdpSocket sock_;
  sockaddr_in addr_;
};

// Receives datagrams on a local port and feeds them to a LoopbackSink.
class UdpReceiver {
 public:
  explicit UdpReceiver(LoopbackSink& sink, std::uint16_t port = 0, const std::string& host = "127.0.0.1")
      : sink_(sink) {
    sockaddr_in addr = resolve({host, port});
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) < 0) {
      throw IoError(std::string("bind: ") + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::jthread([this](std::stop_token st) { loop(st); });
  }
  ~UdpReceiver() {
    thread_.request_stop();
    if (thread_.joinable()) thread_.join();
  }

  std::uint16_t port() const { return port_; }
  std::uint64_t datagrams() const { return datagrams_.load(); }

 private:
  void loop(std::stop_token st) {
    std::vector<std::uint8_t> buf(2048);
    while (!st.stop_requested()) {
      pollfd pfd{sock_.fd(), POLLIN, 0};
      if (::poll(&pfd, 1, 20) <= 0) continue;
      const auto n = ::recv(sock_.fd(), buf.data(), buf.size(), 0);
      if (n < 0) continue;
      sink_.receive(std::span(buf.data(), static_cast<std::size_t>(n)));
      ++datagrams_;
    }
  }

  LoopbackSink& sink_;
  UdpSocket sock_;
  std::uint16_t port_ = 0;
  std::atomic<std::uint64_t> datagrams_{0};
  std::jthread thread_;
};

}  // namespace ultrastage::artnet
