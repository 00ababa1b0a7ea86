#include "golden.hpp"
#include "nsc/scenario.hpp"
#include "nsc/trace.hpp"
#include "pcap_reader.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace nsc;
using namespace nsc::trace;

namespace
{
    std::filesystem::path temp_dir()
    {
        auto p = std::filesystem::temp_directory_path() / "nsc_test_trace";
        std::filesystem::create_directories(p);
        return p;
    }

    Bytes file_bytes(const std::filesystem::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }

    Bytes tcp(std::uint32_t src, std::uint32_t dst, std::uint16_t sport, std::uint16_t dport, std::uint32_t seq,
              std::uint32_t ack, std::uint8_t flags, std::size_t len = 0)
    {
        TcpSegment s;
        s.src = Ipv4Addr{src};
        s.dst = Ipv4Addr{dst};
        s.src_port = sport;
        s.dst_port = dport;
        s.seq = seq;
        s.ack = ack;
        s.flags = flags;
        s.window = 100;
        s.payload = Bytes(len, 'p');
        return build_tcp_packet(s);
    }

    template <class F>
    Errc code_of(F &&f)
    {
        try
        {
            f();
        }
        catch (const Error &e)
        {
            return e.code();
        }
        FAIL("expected an Error");
        return Errc::Io;
    }

    const Bytes kEmptyHeader{0xd4, 0xc3, 0xb2, 0xa1, 0x02, 0x00, 0x04, 0x00, 0x00, 0x00, 0x00, 0x00,
                             0x00, 0x00, 0x00, 0x00, 0xff, 0xff, 0x00, 0x00, 0x65, 0x00, 0x00, 0x00};
}

TEST_CASE("global header bytes")
{
    CHECK(pcap_global_header() == kEmptyHeader);
    CHECK(encode_pcap({}) == kEmptyHeader);
}

TEST_CASE("an empty trace file is exactly the global header")
{
    const auto path = temp_dir() / "empty.pcap";
    {
        PcapWriter w(path);
    }
    CHECK(file_bytes(path) == kEmptyHeader);
    CHECK(trace_read(path).empty());
}

TEST_CASE("writer output round-trips and parses independently")
{
    Rng rng(4);
    std::vector<Record> recs;
    SimTime t{};
    for (int i = 0; i < 200; ++i)
    {
        t = t + SimTime::us(rng.below(3000000));
        Bytes b(1 + rng.below(300));
        for (auto &x : b)
        {
            x = static_cast<std::uint8_t>(rng.next());
        }
        recs.push_back({t, b});
    }
    const auto path = temp_dir() / "random.pcap";
    {
        PcapWriter w(path);
        for (const auto &r : recs)
        {
            w.write(r.time, r.bytes);
        }
        CHECK(w.records() == recs.size());
    }
    CHECK(file_bytes(path) == encode_pcap(recs));
    CHECK(trace_read(path) == recs);

    std::string why;
    const auto f = pcapcheck::read(path.string(), &why);
    REQUIRE(f);
    CHECK_FALSE(f->swapped);
    CHECK(f->major == 2);
    CHECK(f->minor == 4);
    CHECK(f->snaplen == 65535);
    CHECK(f->linktype == 101);
    REQUIRE(f->records.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i)
    {
        CHECK(f->records[i].sec == recs[i].time.micros / 1000000);
        CHECK(f->records[i].usec == recs[i].time.micros % 1000000);
        CHECK(f->records[i].orig_len == recs[i].bytes.size());
        CHECK(f->records[i].data == recs[i].bytes);
    }
}

TEST_CASE("timestamps must not go backwards")
{
    PcapWriter w(temp_dir() / "backwards.pcap");
    w.write(SimTime::us(10), Bytes{1});
    w.write(SimTime::us(10), Bytes{2});
    CHECK(code_of([&] { w.write(SimTime::us(9), Bytes{3}); }) == Errc::NonMonotonicTimestamp);
}

TEST_CASE("big-endian files are read too")
{
    Bytes be{0xa1, 0xb2, 0xc3, 0xd4, 0x00, 0x02, 0x00, 0x04, 0, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0xff, 0xff,
             0x00, 0x00, 0x00, 0x65};
    const Bytes rec{0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 3, 7, 8, 9};
    be.insert(be.end(), rec.begin(), rec.end());
    const auto recs = parse_pcap(be);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].time == SimTime::us(2000005));
    CHECK(recs[0].bytes == Bytes{7, 8, 9});
}

TEST_CASE("malformed files are rejected")
{
    Bytes bad = kEmptyHeader;
    bad[0] = 0;
    CHECK(code_of([&] { parse_pcap(bad); }) == Errc::BadMagic);
    CHECK(code_of([&] { parse_pcap(Bytes(10, 0)); }) == Errc::BadMagic);

    Bytes eth = kEmptyHeader;
    eth[20] = 1;
    CHECK(code_of([&] { parse_pcap(eth); }) == Errc::UnsupportedLinktype);

    Bytes cut = encode_pcap({{SimTime::us(1), Bytes(40, 1)}});
    cut.pop_back();
    CHECK(code_of([&] { parse_pcap(cut); }) == Errc::TruncatedRecord);
    cut.resize(30);
    CHECK(code_of([&] { parse_pcap(cut); }) == Errc::TruncatedRecord);
}

TEST_CASE("normalize rebases sequence numbers and classifies ports")
{
    const std::uint32_t a = 0x0a000001, b = 0x0a000002;
    std::vector<Record> t{
        {SimTime::us(0), tcp(a, b, 40000, 80, 5000, 0, tcp_flags::SYN)},
        {SimTime::us(5), tcp(b, a, 80, 40000, 9000, 5001, tcp_flags::SYN | tcp_flags::ACK)},
        {SimTime::us(9), tcp(a, b, 40000, 80, 5001, 9001, tcp_flags::ACK, 10)},
    };
    const auto n = normalize(t);
    REQUIRE(n.size() == 3);
    CHECK(n[0].direction == Direction::AtoB);
    CHECK(n[0].src_port_class == PortClass::Ephemeral);
    CHECK(n[1].direction == Direction::BtoA);
    CHECK(n[1].rel_ack == 1);
    CHECK(n[1].src_port_class == PortClass::Fixed);
    CHECK(n[2].rel_seq == 1);
    CHECK(n[2].rel_ack == 1);
    CHECK(n[2].payload_len == 10);

    const auto flipped = normalize(t, Ipv4Addr{b});
    CHECK(flipped[0].direction == Direction::BtoA);

    // Timestamps, ISNs and concrete ports are erased.
    std::vector<Record> shifted{
        {SimTime::us(100), tcp(a, b, 41000, 80, 77, 0, tcp_flags::SYN)},
        {SimTime::us(300), tcp(b, a, 80, 41000, 1, 78, tcp_flags::SYN | tcp_flags::ACK)},
        {SimTime::us(900), tcp(a, b, 41000, 80, 78, 2, tcp_flags::ACK, 10)},
    };
    CHECK(trace_compare(n, normalize(shifted)).equal());
}

TEST_CASE("a second conversation is rejected")
{
    const std::uint32_t a = 1, b = 2, c = 3;
    std::vector<Record> t{
        {SimTime::us(0), tcp(a, b, 40000, 80, 0, 0, tcp_flags::SYN)},
        {SimTime::us(1), tcp(a, c, 40000, 80, 0, 0, tcp_flags::SYN)},
    };
    CHECK(code_of([&] { normalize(t); }) == Errc::MultipleFlows);
    std::vector<Record> junk{{SimTime::us(0), Bytes(10, 0)}};
    CHECK(code_of([&] { normalize(junk); }) == Errc::MalformedPacket);
}

TEST_CASE("synthesize inverts normalize")
{
    const auto want = golden::expected();
    CHECK(normalize(synthesize(want)) == want);
}

TEST_CASE("compare reports the first divergence or a length mismatch")
{
    auto a = golden::expected();
    auto b = a;
    CHECK(trace_compare(a, b).describe() == "equal (8 packets)");
    b[3].payload_len = 99;
    const Verdict v = trace_compare(a, b);
    CHECK(v.kind == Verdict::Kind::FirstDivergence);
    CHECK(v.index == 3);
    CHECK(v.describe().rfind("first divergence at packet 3", 0) == 0);
    b = a;
    b.pop_back();
    const Verdict w = trace_compare(a, b);
    CHECK(w.kind == Verdict::Kind::LengthMismatch);
    CHECK(w.describe() == "length mismatch: a has 8 packets, b has 7");
}

TEST_CASE("golden handshake trace")
{
    const auto dir = temp_dir() / "golden";
    std::filesystem::create_directories(dir);
    scenario::RunOptions opts;
    opts.out_dir = dir;
    scenario::run_scenario(scenario::parse_scenario(golden::kScenario), opts);
    const auto got = normalize(trace_read(dir / "golden.pcap"));
    const Verdict v = trace_compare(got, golden::expected());
    INFO(v.describe());
    CHECK(v.equal());
    CHECK(pcapcheck::read((dir / "golden.pcap").string()));
}
