#include "nsc/scenario.hpp"
#include "random_scenario.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace nsc;
using namespace nsc::scenario;

namespace
{
    template <class F>
    Error error_of(F &&f)
    {
        try
        {
            f();
        }
        catch (const Error &e)
        {
            return e;
        }
        FAIL("expected an Error");
        return Error(Errc::Io, "");
    }

    const char *const kPair = R"(
[scenario]
name = pair
duration = 10s

[node]
id = 0
stack = uip

[node]
id = 1
stack = full

[link]
a = 0
b = 1
latency = 5ms
bandwidth_bps = 10000000

[app]
node = 0
role = bulk_sender
peer = 1
bytes_total = 4000

[app]
node = 1
role = sink
)";

    std::string with(std::string text, const std::string &from, const std::string &to)
    {
        const auto at = text.find(from);
        REQUIRE(at != std::string::npos);
        return text.replace(at, from.size(), to);
    }

    std::filesystem::path temp_dir(const std::string &name)
    {
        auto p = std::filesystem::temp_directory_path() / "nsc_test_scenario" / name;
        std::filesystem::remove_all(p);
        std::filesystem::create_directories(p);
        return p;
    }

    std::string slurp(const std::filesystem::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    int cli(const std::string &args)
    {
        const std::string cmd = std::string(NSC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
}

TEST_CASE("minimal scenario takes stack defaults")
{
    const Scenario s = parse_scenario(kPair);
    REQUIRE(s.nodes.size() == 2);
    CHECK(s.nodes[0].uip.buffer_size == 400);
    CHECK(s.nodes[0].uip.max_connections == 40);
    CHECK(s.nodes[0].uip.host_addr == node_address(0));
    CHECK(s.nodes[1].full.delayed_ack_timeout == SimTime::ms(200));
    CHECK(s.links[0].link.latency == SimTime::ms(5));
    CHECK(s.links[0].link.frag_threshold == 1500);
    CHECK(s.apps[0].peer == std::optional<NodeId>(1));
    CHECK(s.seed == 1);
}

TEST_CASE("shipped scenario files load")
{
    for (const char *f : {"minimal.scn", "dead-link.scn", "gateway.scn"})
    {
        CHECK_NOTHROW(load_scenario(std::filesystem::path(NSC_SCENARIO_DIR) / f));
    }
}

TEST_CASE("buffer_size below 60 is a validation error")
{
    const Error e = error_of([] { parse_scenario(with(kPair, "stack = uip", "stack = uip\nbuffer_size = 50")); });
    CHECK(e.code() == Errc::ValidationError);
    CHECK(e.message().find("node 0") != std::string::npos);
    CHECK(e.message().find("buffer_size") != std::string::npos);
}

TEST_CASE("unknown stack kind lists the allowed ones")
{
    const Error e = error_of([] { parse_scenario(with(kPair, "stack = uip", "stack = blip")); });
    CHECK(e.code() == Errc::ValidationError);
    CHECK(e.message().find("blip") != std::string::npos);
    CHECK(e.message().find("uip, full") != std::string::npos);
}

TEST_CASE("parse errors carry the line")
{
    struct Case
    {
        std::string text;
        std::string where;
    };
    const std::vector<Case> cases{
        {"[scenario]\nname = x\n[nodes]\n", "line 3"},
        {"[scenario]\nname x\n", "line 2"},
        {"seed = 1\n", "line 1"},
        {"[scenario]\nseed = 1\nseed = 2\n", "line 3"},
        {"[scenario]\ncolour = red\n", "line 2"},
        {"[scenario]\nseed = -4\n", "line 2"},
        {"[scenario]\nduration = 5 parsecs\n", "line 2"},
        {"[node]\nid = 0\nstack = full\ntcp_split = on\n", "line 4"},
    };
    for (const auto &c : cases)
    {
        const Error e = error_of([&] { parse_scenario(c.text); });
        INFO(c.text);
        CHECK(e.code() == Errc::ParseError);
        CHECK(e.message().rfind(c.where + ":", 0) == 0);
    }
}

TEST_CASE("structural validation")
{
    const std::vector<std::pair<std::string, std::string>> cases{
        {"a = 0\nb = 1", "a = 0\nb = 7"},
        {"a = 0\nb = 1", "a = 0\nb = 0"},
        {"peer = 1", "peer = 9"},
        {"peer = 1", "peer = 0"},
        {"bandwidth_bps = 10000000", "bandwidth_bps = 0"},
        {"bandwidth_bps = 10000000", "bandwidth_bps = 10000000\nloss_prob = 2"},
        {"[node]\nid = 1", "[node]\nid = 0"},
    };
    for (const auto &[from, to] : cases)
    {
        INFO(to);
        CHECK(error_of([&] { parse_scenario(with(kPair, from, to)); }).code() == Errc::ValidationError);
    }
}

TEST_CASE("format and parse round trip")
{
    for (const auto &name : preset_names())
    {
        for (const Scenario &s : preset(name))
        {
            const std::string text = format_scenario(s);
            CHECK(format_scenario(parse_scenario(text)) == text);
        }
    }
    const Scenario g = load_scenario(std::filesystem::path(NSC_SCENARIO_DIR) / "gateway.scn");
    CHECK(format_scenario(parse_scenario(format_scenario(g))) == format_scenario(g));
}

TEST_CASE("preset shapes")
{
    const Scenario d = preset("delayed-ack").at(0);
    const Scenario sp = preset("split-hack").at(0);
    CHECK(d.links.at(0).link.latency == SimTime::us(5000));
    CHECK(d.node(0).uip.mss() == 360);
    CHECK(d.node(1).full.delayed_ack_timeout == SimTime::ms(200));
    CHECK_FALSE(d.node(0).uip.tcp_split);
    CHECK(sp.node(0).uip.tcp_split);

    // Only the split flag (plus names and labels) differs.
    Scenario patched = d;
    patched.name = sp.name;
    patched.nodes[0].uip.tcp_split = true;
    patched.nodes[0].variant = sp.nodes[0].variant;
    patched.traces = sp.traces;
    CHECK(format_scenario(patched) == format_scenario(sp));

    const auto sweep = preset("frag-sweep");
    REQUIRE(sweep.size() == 5);
    std::vector<std::uint32_t> thresholds;
    for (const auto &s : sweep)
    {
        thresholds.push_back(s.links.at(0).link.frag_threshold);
    }
    CHECK(thresholds == std::vector<std::uint32_t>{60, 90, 127, 200, 400});

    const auto hetero = preset("hetero-prr");
    CHECK(hetero.size() == 4);
    const Scenario &h = hetero.at(1);
    std::size_t split_senders = 0, plain_senders = 0;
    for (const auto &n : h.nodes)
    {
        if (n.stack == StackKind::Uip)
        {
            (n.uip.tcp_split ? split_senders : plain_senders)++;
        }
    }
    CHECK(split_senders == 2);
    CHECK(plain_senders == 2);
    CHECK(preset("hetero-prr", {0.15, std::nullopt}).size() == 1);
    CHECK(preset("delayed-ack", {std::nullopt, 99}).at(0).seed == 99);

    const Error e = error_of([] { preset("bogus"); });
    CHECK(e.code() == Errc::UnknownPreset);
    CHECK(e.message().find("frag-sweep") != std::string::npos);
}

TEST_CASE("duration 0 runs nothing and writes empty traces")
{
    const auto dir = temp_dir("zero");
    Scenario s = preset("delayed-ack").at(0);
    s.duration = SimTime{};
    RunOptions o;
    o.out_dir = dir;
    const RunResult r = run_scenario(s, o);
    CHECK(r.events == 0);
    CHECK(r.flows.empty());
    REQUIRE(r.traces_written.size() == 1);
    CHECK(std::filesystem::file_size(r.traces_written[0]) == 24);
    CHECK(parse_stats(r.stats_csv()).flows.empty());
}

TEST_CASE("a dead link ends in a timeout after eight retransmissions")
{
    const Scenario s = load_scenario(std::filesystem::path(NSC_SCENARIO_DIR) / "dead-link.scn");
    const RunResult r = run_scenario(s);
    REQUIRE(r.flows.size() == 1);
    const FlowStats &f = r.flows[0];
    CHECK(f.timedout);
    CHECK(f.bytes_acked == 0);
    CHECK(f.frames_delivered == 0);
    // SYN, eight retransmissions of it, then the RST.
    CHECK(f.frames_sent == 10);
}

TEST_CASE("delayed-ack goodput follows mss over (T_dack + RTT)")
{
    const RunResult r = run_scenario(preset("delayed-ack").at(0));
    REQUIRE(r.flows.size() == 1);
    const double expected = 360.0 * 8 / 0.210;
    CHECK(r.flows[0].goodput_bps == Catch::Approx(expected).epsilon(0.15));
    const RunResult s = run_scenario(preset("split-hack").at(0));
    CHECK(s.flows.at(0).goodput_bps >= 10 * r.flows[0].goodput_bps);
}

TEST_CASE("gateway scenario delivers every flow")
{
    const RunResult r = run_scenario(load_scenario(std::filesystem::path(NSC_SCENARIO_DIR) / "gateway.scn"));
    REQUIRE(r.flows.size() == 3);
    for (const auto &f : r.flows)
    {
        INFO("flow " << f.flow);
        CHECK_FALSE(f.timedout);
        CHECK(f.bytes_delivered > 0);
    }
    CHECK(r.flows[0].bytes_delivered == 8000);
    CHECK(r.flows[1].bytes_delivered == 3000);
    CHECK(r.checksum_failures == 0);
}

TEST_CASE("random scenarios: conservation, stop-and-wait, delivery, determinism")
{
    for (std::uint64_t seed = 1; seed <= 150; ++seed)
    {
        const Scenario s = randscn::make(seed);
        const RunResult r = run_scenario(s);
        INFO(s.name);
        REQUIRE(r.flows.size() == 1);
        const FlowStats &f = r.flows[0];
        CHECK(f.segments_sent == f.segments_acked + f.retransmissions + f.segments_outstanding);
        CHECK(r.monitor.violations == 0);
        CHECK(r.monitor.max_inflight_segments <= (s.nodes[0].uip.tcp_split ? 2u : 1u));
        CHECK(r.checksum_failures == 0);
        // Lossy slow links may still be mid-transfer at the end; lossless ones finish.
        if (s.links[0].link.loss_prob == 0.0 && !f.timedout)
        {
            CHECK(f.bytes_delivered == s.apps[0].bytes_total);
        }
        CHECK(f.bytes_acked <= s.apps[0].bytes_total);
        CHECK(f.bytes_delivered >= f.bytes_acked);
        CHECK(f.bytes_delivered - f.bytes_acked <= 2u * s.nodes[0].uip.mss());
        if (seed % 10 == 0)
        {
            const RunResult again = run_scenario(s);
            CHECK(again.stats_csv() == r.stats_csv());
            CHECK(again.digest == r.digest);
        }
    }
}

TEST_CASE("goodput is bytes over duration")
{
    const RunResult r = run_scenario(parse_scenario(kPair));
    const FlowStats &f = r.flows.at(0);
    CHECK(f.goodput_bps == Catch::Approx(f.bytes_acked * 8e6 / static_cast<double>(f.duration.micros)));
}

TEST_CASE("stats CSV round trip and schema errors")
{
    const RunResult r = run_scenario(parse_scenario(kPair));
    const std::string csv = r.stats_csv();
    CHECK(csv.rfind("# nsc-stats 1\n", 0) == 0);
    const StatsFile f = parse_stats(csv, "x.csv");
    CHECK(f.scenario == "pair");
    REQUIRE(f.flows.size() == 1);
    CHECK(f.flows[0].bytes_acked == r.flows[0].bytes_acked);
    CHECK(f.flows[0].segments_sent == r.flows[0].segments_sent);

    const std::vector<std::pair<std::string, std::string>> broken{
        {"# nsc-stats 1", "# nsc-stats 2"},
        {"bytes_delivered\n", "bytes_delivered,extra\n"},
        {",bulk_sender,", ",bulk_sendr,"},
    };
    for (const auto &[from, to] : broken)
    {
        const Error e = error_of([&] { parse_stats(with(csv, from, to), "x.csv"); });
        CHECK(e.code() == Errc::SchemaMismatch);
        CHECK(e.message().rfind("x.csv:", 0) == 0);
    }
    const Error row = error_of([&] { parse_stats(csv + "1,2,3\n", "x.csv"); });
    CHECK(row.message().rfind("x.csv:5:", 0) == 0);
}

TEST_CASE("report prints the ratio only for the paired presets")
{
    const auto d = parse_stats(run_scenario(preset("delayed-ack").at(0)).stats_csv());
    const auto s = parse_stats(run_scenario(preset("split-hack").at(0)).stats_csv());
    const Report both = make_report({d, s});
    REQUIRE(both.split_ratio);
    CHECK(*both.split_ratio >= 10);
    CHECK(both.text.find("goodput ratio") != std::string::npos);
    CHECK(both.csv.find("ratio,") != std::string::npos);
    const Report one = make_report({d});
    CHECK_FALSE(one.split_ratio);
    CHECK(one.text.find("ratio") == std::string::npos);
}

TEST_CASE("cli exit statuses")
{
    const auto dir = temp_dir("cli");
    const std::string scn = (std::filesystem::path(NSC_SCENARIO_DIR) / "minimal.scn").string();
    CHECK(cli("run " + scn) == 0);
    CHECK(cli("run " + scn + " --out " + dir.string()) == 0);
    CHECK(std::filesystem::exists(dir / "minimal.csv"));
    CHECK(std::filesystem::exists(dir / "minimal.pcap"));
    CHECK(cli("report " + (dir / "minimal.csv").string()) == 0);
    CHECK(cli("trace-diff " + (dir / "minimal.pcap").string() + " " + (dir / "minimal.pcap").string()) == 0);

    std::ofstream(dir / "bad.scn") << "[node]\nid = 0\nstack = blip\n";
    CHECK(cli("run " + (dir / "bad.scn").string()) == 2);
    CHECK(cli("preset nope") == 2);
    std::ofstream(dir / "bad.csv") << "not stats\n";
    CHECK(cli("report " + (dir / "bad.csv").string()) == 2);
    CHECK(cli("run " + (dir / "missing.scn").string()) == 1);

    CHECK(cli("preset delayed-ack --out " + dir.string()) == 0);
    CHECK(cli("preset split-hack --out " + dir.string()) == 0);
    CHECK(cli("trace-diff " + (dir / "delayed-ack.pcap").string() + " " + (dir / "split-hack.pcap").string()) ==
          1);
    CHECK(std::filesystem::exists(dir / "delayed-ack.scn"));
    CHECK(load_scenario(dir / "delayed-ack.scn").name == "delayed-ack");
}
