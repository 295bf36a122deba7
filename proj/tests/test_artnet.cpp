#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "ultrastage/artnet.hpp"

using namespace ultrastage;
using namespace ultrastage::artnet;

namespace {

LightMap random_lightmap(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  std::vector<Drive6> w(n);
  for (auto& x : w) {
    for (int c = 0; c < 6; ++c) x[c] = d(rng) / 255.0;
  }
  return LightMap::from_weights(std::move(w));
}

}  // namespace

TEST(ArtDmx, GoldenSinglePanelPacket) {
  const DomeGeometry g = generate_dome(1);
  LightMap m = LightMap::zeros(1);
  m.set_panel(0, Drive6::Unit(0));
  const auto packets = encode_frame(m, g, 0x2A);
  ASSERT_EQ(packets.size(), 1u);
  const Bytes b = serialize(packets[0]);
  const Bytes head{0x41, 0x72, 0x74, 0x2D, 0x4E, 0x65, 0x74, 0x00, 0x00, 0x50, 0x00, 0x0E,
                   0x2A, 0x00, 0x00, 0x00, 0x01, 0xFE, 0xFF, 0x00, 0x00, 0x00, 0x00, 0x00};
  ASSERT_EQ(b.size(), 18u + 510u);
  EXPECT_TRUE(std::equal(head.begin(), head.end(), b.begin()));
  for (std::size_t k = head.size(); k < b.size(); ++k) EXPECT_EQ(b[k], 0);
}

TEST(ArtDmx, ZeroFrameHeaders) {
  const DomeGeometry g = generate_dome(100);
  const auto packets = encode_frame(LightMap::zeros(100), g, 1);
  ASSERT_EQ(packets.size(), 2u);
  for (std::size_t u = 0; u < packets.size(); ++u) {
    EXPECT_EQ(packets[u].universe, u);
    EXPECT_EQ(packets[u].data.size(), 510u);
    for (auto v : packets[u].data) EXPECT_EQ(v, 0);
    const auto parsed = parse(serialize(packets[u]));
    ASSERT_TRUE(parsed);
    EXPECT_EQ(parsed->dmx, packets[u]);
  }
}

TEST(ArtDmx, FourEightyPanelsSixUniverses) {
  const DomeGeometry g = generate_dome(480);
  const auto packets = encode_frame(LightMap::zeros(480), g, 1);
  ASSERT_EQ(packets.size(), 6u);
  for (std::size_t u = 0; u < 6; ++u) EXPECT_EQ(packets[u].universe, u);
}

TEST(ArtDmx, EncodeDecodeIdentity) {
  const DomeGeometry g = generate_dome(480);
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const LightMap m = random_lightmap(480, rng);
    std::map<int, std::vector<std::uint8_t>> universes;
    for (const auto& p : encode_frame(m, g, 3)) {
      const auto parsed = parse(serialize(p));
      ASSERT_TRUE(parsed);
      universes[parsed->dmx.universe] = parsed->dmx.data;
    }
    EXPECT_EQ(decode_frame(universes, g), m.dmx);
  }
}

TEST(ArtDmx, ParseRejectsMalformed) {
  DmxPacket p;
  p.data.assign(4, 9);
  Bytes b = serialize(p);
  EXPECT_TRUE(parse(b));
  Bytes bad = b;
  bad[0] = 'a';
  EXPECT_FALSE(parse(bad));
  bad = b;
  bad.pop_back();
  EXPECT_FALSE(parse(bad));
  bad = b;
  bad[11] = 13;
  EXPECT_FALSE(parse(bad));
  EXPECT_FALSE(parse(Bytes(5, 0)));
  p.data.assign(3, 0);
  EXPECT_THROW(serialize(p), RangeError);
  EXPECT_EQ(parse(sync_packet())->kind, PacketKind::Sync);
}

TEST(ArtDmx, SequenceNumbersSkipZero) {
  EXPECT_EQ(next_sequence(1), 2);
  EXPECT_EQ(next_sequence(255), 1);
}

TEST(Loopback, TwoFramesCommitOnSync) {
  const DomeGeometry g = generate_dome(200);
  std::mt19937_64 rng(1);
  const LightMap a = random_lightmap(200, rng), b = random_lightmap(200, rng);
  LoopbackSink sink;
  sink.receive_frame(encode_frame(a, g, 1));
  EXPECT_EQ(sink.panel_state(g), a.dmx);
  // Packets of the next frame stay staged until its sync.
  for (const auto& p : encode_frame(b, g, 2)) sink.receive(serialize(p));
  EXPECT_EQ(sink.panel_state(g), a.dmx);
  sink.receive(sync_packet());
  EXPECT_EQ(sink.frame_count(), 2u);
  EXPECT_EQ(sink.panel_state(g), b.dmx);
  EXPECT_EQ(sink.packet_count(), 6u);
}

TEST(Loopback, WrongMagicCounted) {
  LoopbackSink sink;
  Bytes junk = sync_packet();
  junk[1] = 'X';
  sink.receive(junk);
  EXPECT_EQ(sink.malformed_count(), 1u);
  EXPECT_EQ(sink.frame_count(), 0u);
}

TEST(Udp, SendReceiveRoundTrip) {
  const DomeGeometry g = generate_dome(480);
  std::mt19937_64 rng(5);
  const LightMap m = random_lightmap(480, rng);
  LoopbackSink sink;
  UdpReceiver rx(sink);
  UdpSender tx({"127.0.0.1", rx.port()});
  tx.send_frame(encode_frame(m, g, 1));
  for (int k = 0; k < 200 && sink.frame_count() < 1; ++k) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  ASSERT_EQ(sink.frame_count(), 1u);
  EXPECT_EQ(sink.panel_state(g), m.dmx);
}

TEST(Endpoint, Parsing) {
  const Endpoint e = parse_endpoint("10.0.0.5:6455");
  EXPECT_EQ(e.host, "10.0.0.5");
  EXPECT_EQ(e.port, 6455);
  EXPECT_EQ(parse_endpoint("lights.local").port, kDefaultPort);
  EXPECT_THROW(parse_endpoint("host:0"), ConfigError);
  EXPECT_THROW(parse_endpoint("host:abc"), ConfigError);
  EXPECT_THROW(parse_endpoint(":6454"), ConfigError);
}
