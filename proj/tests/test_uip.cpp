#include "nsc/uip.hpp"

#include <catch_amalgamated.hpp>

using namespace nsc;
using namespace nsc::uip;

namespace
{
    const Ipv4Addr kHost{0x0a000001}, kPeer{0x0a000002};

    struct Harness
    {
        Stack st;
        std::vector<Bytes> out;
        std::vector<std::uint8_t> events;
        std::function<void(Stack &, ConnHandle, const AppEvent &)> app;
        SimTime now{};

        explicit Harness(Config c = {}) : st(c)
        {
            st.set_output([this](ByteView b) { out.emplace_back(b.begin(), b.end()); });
            st.set_tcp_app([this](Stack &s, ConnHandle h, const AppEvent &ev) {
                events.push_back(ev.flags);
                if (app)
                {
                    app(s, h, ev);
                }
            });
        }

        std::vector<TcpSegment> drain()
        {
            std::vector<TcpSegment> segs;
            for (const auto &b : out)
            {
                REQUIRE(checksums_verify(b));
                const auto r = parse_packet(b);
                REQUIRE(r.status == ParseStatus::Ok);
                REQUIRE(r.packet.tcp);
                segs.push_back(*r.packet.tcp);
            }
            out.clear();
            return segs;
        }

        TcpSegment one()
        {
            auto segs = drain();
            REQUIRE(segs.size() == 1);
            return segs[0];
        }

        void inject(std::uint16_t sport, std::uint16_t dport, std::uint32_t seq, std::uint32_t ack,
                    std::uint8_t flags, Bytes payload = {}, std::optional<std::uint16_t> mss = {})
        {
            TcpSegment s;
            s.src = kPeer;
            s.dst = kHost;
            s.src_port = sport;
            s.dst_port = dport;
            s.seq = seq;
            s.ack = ack;
            s.flags = flags;
            s.window = 65535;
            s.mss_option = mss;
            s.payload = std::move(payload);
            st.input(build_tcp_packet(s), now);
        }

        void periodic()
        {
            now = now + st.config().periodic_interval;
            st.periodic(now);
        }
    };

    using namespace tcp_flags;

    // Passive open on port 80; returns our ISN + 1 (the next sequence we send).
    std::uint32_t accept(Harness &h, std::uint32_t peer_isn = 100)
    {
        h.st.tcp_listen(80);
        h.inject(4000, 80, peer_isn, 0, SYN, {}, 1460);
        const TcpSegment synack = h.one();
        h.inject(4000, 80, peer_isn + 1, synack.seq + 1, ACK);
        return synack.seq + 1;
    }
}

TEST_CASE("config validation and mss")
{
    Config c;
    CHECK(c.mss() == 360);
    c.buffer_size = 59;
    CHECK_THROWS_AS(c.validate(), Error);
    c.buffer_size = 60;
    CHECK_NOTHROW(c.validate());
    c.max_connections = 0;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("SYN to a listening port gets SYN+ACK")
{
    Harness h;
    h.st.tcp_listen(80);
    h.inject(4000, 80, 100, 0, SYN, {}, 1460);
    const TcpSegment s = h.one();
    CHECK(s.flags == (SYN | ACK));
    CHECK(s.ack == 101);
    CHECK(s.src_port == 80);
    CHECK(s.dst_port == 4000);
    CHECK(s.mss_option == std::optional<std::uint16_t>(360));
    CHECK(h.st.connection(0).state == TcpState::SynRcvd);
}

TEST_CASE("handshake completion delivers connected")
{
    Harness h;
    accept(h);
    CHECK(h.st.connection(0).state == TcpState::Established);
    REQUIRE_FALSE(h.events.empty());
    CHECK((h.events.back() & app_flags::connected) != 0);
}

TEST_CASE("in-order data gives newdata and a pure ACK")
{
    Harness h;
    const std::uint32_t ours = accept(h);
    Bytes got;
    h.app = [&](Stack &, ConnHandle, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            got.assign(ev.data.begin(), ev.data.end());
        }
    };
    h.inject(4000, 80, 101, ours, ACK | PSH, Bytes{'h', 'i'});
    CHECK(got == Bytes{'h', 'i'});
    const TcpSegment ack = h.one();
    CHECK(ack.flags == ACK);
    CHECK(ack.ack == 103);
    CHECK(ack.payload.empty());
    CHECK(h.st.connection(0).bytes_received == 2);

    // A duplicate is not delivered again, only re-acknowledged.
    got.clear();
    h.inject(4000, 80, 101, ours, ACK | PSH, Bytes{'h', 'i'});
    CHECK(got.empty());
    CHECK(h.one().ack == 103);
}

TEST_CASE("active open emits SYN on poll and completes on SYN+ACK")
{
    Harness h;
    const ConnHandle c = h.st.tcp_connect(kPeer, 80);
    CHECK(c == 0);
    CHECK(h.st.connection(c).state == TcpState::SynSent);
    CHECK(h.st.connection(c).local_port == 1025);
    h.st.poll(c, h.now);
    const TcpSegment syn = h.one();
    CHECK(syn.flags == SYN);
    CHECK(syn.mss_option == std::optional<std::uint16_t>(360));
    h.inject(80, 1025, 5000, syn.seq + 1, SYN | ACK, {}, 1460);
    const TcpSegment ack = h.one();
    CHECK(ack.flags == ACK);
    CHECK(ack.ack == 5001);
    CHECK(h.st.connection(c).state == TcpState::Established);
    CHECK((h.events.back() & app_flags::connected) != 0);
    CHECK(h.st.tcp_connect(kPeer, 80) == 1);
    CHECK(h.st.connection(1).local_port == 1026);
}

TEST_CASE("connection and listener tables are bounded")
{
    Harness h;
    for (int i = 0; i < 40; ++i)
    {
        h.st.tcp_connect(kPeer, 80);
    }
    CHECK_THROWS_MATCHES(h.st.tcp_connect(kPeer, 80), Error,
                         Catch::Matchers::Predicate<Error>([](const Error &e) {
                             return e.code() == Errc::ConnectionTableFull;
                         }));
    for (std::uint16_t p = 1; p <= 40; ++p)
    {
        h.st.tcp_listen(p);
    }
    CHECK_THROWS_MATCHES(h.st.tcp_listen(41), Error, Catch::Matchers::Predicate<Error>([](const Error &e) {
                             return e.code() == Errc::ListenerTableFull;
                         }));
}

TEST_CASE("ephemeral ports wrap from 32000 to 4096")
{
    Harness h;
    std::vector<std::uint16_t> ports;
    for (int i = 0; i < 31000; ++i)
    {
        const UdpHandle u = h.st.udp_new(kPeer, 9);
        ports.push_back(h.st.udp_connection(u).local_port);
        h.st.udp_remove(u);
    }
    CHECK(ports.front() == 1025);
    CHECK(ports[30973] == 31998);
    CHECK(ports[30974] == 31999);
    CHECK(ports[30975] == 4096);
}

TEST_CASE("app_send accepts at most one mss and only when idle")
{
    Harness h;
    const std::uint32_t ours = accept(h);
    std::size_t accepted = 0;
    std::optional<Errc> second;
    h.app = [&](Stack &s, ConnHandle c, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            accepted = s.app_send(c, Bytes(1000, 'x'));
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    CHECK(accepted == 360);
    auto segs = h.drain();
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].payload.size() == 360);
    CHECK(h.st.connection(0).inflight_len == 360);

    h.app = [&](Stack &s, ConnHandle c, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            try
            {
                s.app_send(c, Bytes(10, 'y'));
            }
            catch (const Error &e)
            {
                second = e.code();
            }
        }
    };
    h.inject(4000, 80, 102, ours, ACK, Bytes{2});
    CHECK(second == Errc::SendWhileInflight);
    CHECK_THROWS_AS(h.st.app_send(0, Bytes(1, 'z')), Error);
}

TEST_CASE("ACK of the in-flight segment lets the app send the next one in the same pass")
{
    Harness h;
    const std::uint32_t ours = accept(h);
    std::vector<std::uint16_t> inflight_seen;
    h.app = [&](Stack &s, ConnHandle c, const AppEvent &ev) {
        if (ev.flags & (app_flags::newdata | app_flags::acked))
        {
            inflight_seen.push_back(s.connection(c).inflight_len);
            s.app_send(c, Bytes(100, 'd'));
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    const TcpSegment first = h.one();
    h.inject(4000, 80, 102, first.seq + 100, ACK);
    const TcpSegment next = h.one();
    CHECK(next.seq == first.seq + 100);
    CHECK(next.payload.size() == 100);
    CHECK(inflight_seen == std::vector<std::uint16_t>{0, 0});
    CHECK(h.st.connection(0).inflight_len == 100);
    CHECK(h.st.connection(0).bytes_acked == 100);
}

TEST_CASE("split hack emits two halves and waits for both")
{
    Config c;
    c.tcp_split = true;
    c.buffer_size = 401; // odd mss, so the halves differ
    Harness h(c);
    const std::uint32_t ours = accept(h);
    h.app = [&](Stack &s, ConnHandle conn, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            s.app_send(conn, Bytes(361, 'q'));
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    const auto segs = h.drain();
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].payload.size() == 181);
    CHECK(segs[1].payload.size() == 180);
    CHECK(segs[1].seq == segs[0].seq + 181);
    CHECK(h.st.connection(0).inflight_segments == 2);

    // ACK of the first half alone does not free the connection.
    h.app = nullptr;
    h.inject(4000, 80, 102, segs[0].seq + 181, ACK);
    CHECK(h.st.connection(0).inflight_len == 361);
    h.out.clear();
    h.inject(4000, 80, 102, segs[0].seq + 361, ACK);
    CHECK(h.st.connection(0).inflight_len == 0);
}

TEST_CASE("split only applies to full segments")
{
    Config c;
    c.tcp_split = true;
    Harness h(c);
    const std::uint32_t ours = accept(h);
    h.app = [&](Stack &s, ConnHandle conn, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            s.app_send(conn, Bytes(200, 'q'));
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    CHECK(h.drain().size() == 1);
}

TEST_CASE("periodic retransmission backs off and finally times out")
{
    Harness h;
    const std::uint32_t ours = accept(h);
    int rexmits = 0;
    h.app = [&](Stack &s, ConnHandle c, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            s.app_send(c, Bytes(50, 'r'));
        }
        if (ev.flags & app_flags::rexmit)
        {
            ++rexmits;
            s.app_send(c, Bytes(50, 'r'));
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    const TcpSegment orig = h.one();

    h.periodic();
    h.periodic();
    CHECK(h.out.empty());
    h.periodic();
    const TcpSegment again = h.one();
    CHECK(again.seq == orig.seq);
    CHECK(again.payload == orig.payload);
    CHECK(rexmits == 1);
    CHECK(h.st.connection(0).rto_periods == 6);
    CHECK(h.st.connection(0).nrtx == 1);

    // Expiries at 6, 12, 16, 16, ... periods until eight retransmissions.
    int periods = 0;
    while (h.st.connection(0).nrtx < 8)
    {
        h.periodic();
        ++periods;
        h.out.clear();
        REQUIRE(periods < 200);
    }
    CHECK(rexmits == 8);
    CHECK(h.st.connection(0).rto_periods == 16);
    for (int i = 0; i < 15; ++i)
    {
        h.periodic();
        CHECK(h.out.empty());
    }
    h.periodic();
    const TcpSegment rst = h.one();
    CHECK(rst.flags == (RST | ACK));
    CHECK(h.st.connection(0).state == TcpState::Closed);
    CHECK(h.st.connection(0).timed_out);
    CHECK(h.events.back() == app_flags::timedout);
}

TEST_CASE("periodic with nothing in flight sends nothing")
{
    Harness h;
    accept(h);
    for (int i = 0; i < 10; ++i)
    {
        h.periodic();
    }
    CHECK(h.out.empty());
}

TEST_CASE("segment to a closed port elicits RST")
{
    Harness h;
    h.inject(4000, 81, 100, 0, SYN);
    const TcpSegment r = h.one();
    CHECK((r.flags & RST) != 0);
    CHECK(r.ack == 101);
    CHECK(h.st.stats().rst_sent == 1);
}

TEST_CASE("bad checksum and oversize frames are dropped with counters")
{
    Harness h;
    h.st.tcp_listen(80);
    TcpSegment s;
    s.src = kPeer;
    s.dst = kHost;
    s.src_port = 4000;
    s.dst_port = 80;
    s.seq = 1;
    s.flags = SYN;
    Bytes pkt = build_tcp_packet(s);
    pkt[25] ^= 0x40;
    h.st.input(pkt, h.now);
    CHECK(h.out.empty());
    CHECK(h.st.stats().checksum_drops == 1);

    h.st.input(Bytes(401, 0x45), h.now);
    CHECK(h.out.empty());
    CHECK(h.st.stats().too_large_drops == 1);
}

TEST_CASE("udp checksums can be turned off")
{
    for (bool sums : {true, false})
    {
        Config c;
        c.udp_checksums = sums;
        Stack st(c);
        std::vector<Bytes> out;
        st.set_output([&](ByteView b) { out.emplace_back(b.begin(), b.end()); });
        st.set_udp_app([](Stack &s, UdpHandle u, const UdpAppEvent &ev) {
            if (ev.flags & app_flags::poll)
            {
                s.udp_send(u, Bytes{1, 2, 3});
            }
        });
        const UdpHandle u = st.udp_new(kPeer, 9000);
        st.poll_udp(u, SimTime{});
        REQUIRE(out.size() == 1);
        CHECK((load16(out[0], 26) == 0) == !sums);
        CHECK(checksums_verify(out[0]));
    }
}

TEST_CASE("full close from our side")
{
    Harness h;
    const std::uint32_t ours = accept(h);
    h.app = [&](Stack &s, ConnHandle c, const AppEvent &ev) {
        if (ev.flags & app_flags::newdata)
        {
            s.app_close(c);
        }
    };
    h.inject(4000, 80, 101, ours, ACK, Bytes{1});
    const TcpSegment fin = h.one();
    CHECK((fin.flags & FIN) != 0);
    CHECK(h.st.connection(0).state == TcpState::FinWait1);
    h.app = nullptr;
    h.inject(4000, 80, 102, fin.seq + 1, ACK | FIN);
    const TcpSegment last = h.one();
    CHECK(last.ack == 103);
    CHECK(h.st.connection(0).state == TcpState::TimeWait);
    h.periodic();
    h.periodic();
    CHECK(h.st.connection(0).state == TcpState::Closed);
}

TEST_CASE("random garbage never yields more than one packet")
{
    Harness h;
    accept(h);
    Rng rng(99);
    for (int i = 0; i < 5000; ++i)
    {
        Bytes junk(rng.below(120));
        for (auto &b : junk)
        {
            b = static_cast<std::uint8_t>(rng.next());
        }
        if (junk.size() > 20)
        {
            junk[0] = 0x45;
        }
        h.st.input(junk, h.now);
        REQUIRE(h.out.size() <= 1);
        h.out.clear();
    }
}
