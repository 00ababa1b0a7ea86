// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "golden.hpp"
#include "isolation.hpp"
#include "naive_checksum.hpp"
#include "pcap_reader.hpp"
#include "random_scenario.hpp"
#include "scope_oracle.hpp"

#include "nsc/globalizer.hpp"
#include "nsc/scenario.hpp"
#include "nsc/trace.hpp"
#include "nsc/wire.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace nsc;

namespace
{
    using Clock = std::chrono::steady_clock;

    double seconds_since(Clock::time_point t0)
    {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    std::string fmt(const char *f, auto... args)
    {
        char buf[512];
        std::snprintf(buf, sizeof buf, f, args...);
        return buf;
    }

    std::string squash(std::string_view s)
    {
        std::string out;
        for (char c : s)
        {
            if (c != ' ' && c != '\t' && c != '\n' && c != '\r')
            {
                out += c;
            }
        }
        return out;
    }

    std::string slurp(const fs::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path scratch(const std::string &name)
    {
        const fs::path p = fs::temp_directory_path() / "nsc_acceptance" / name;
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }

    Outcome conn_rewrite()
    {
        const auto t0 = Clock::now();
        const std::string source = "struct uip_conn *uip_conn; /* current connection */\n\n"
                                     "void uip_process(uint8_t flag)\n{\n  ...\n  uip_conn = NULL;\n}\n";
        const std::string expected = "struct uip_conn *global_uip_conn[NUM_STACKS];\n\n"
                                     "void uip_process(uint8_t flag)\n{\n  ...\n"
                                     "  global_uip_conn[get_stack_id()] = NULL;\n}\n";
        glob::TransformConfig cfg;
        cfg.strip_comments = true;
        const auto r = glob::globalize_source(source, cfg);
        const double wall = seconds_since(t0);
        const bool same = squash(r.output) == squash(expected);
        return {same && wall < 1.0, fmt("output %s the per-stack form modulo whitespace, %.3f s", same ? "matches" : "differs from", wall)};
    }

    Outcome delayed_ack()
    {
        const auto t0 = Clock::now();
        const auto plain = scenario::run_scenario(scenario::preset("delayed-ack").at(0));
        const auto split = scenario::run_scenario(scenario::preset("split-hack").at(0));
        const double wall = seconds_since(t0);
        const double want = 360.0 * 8 / 0.210;
        const double g = plain.flows.at(0).goodput_bps, gs = split.flows.at(0).goodput_bps;
        const double dev = std::abs(g - want) / want;
        const double ratio = gs / g;
        const bool sim_ok = plain.duration.micros <= 10'000'000 && split.duration.micros <= 10'000'000;
        return {dev <= 0.15 && ratio >= 10 && wall < 5.0 && sim_ok,
                fmt("goodput %.0f bps vs %.0f (%.1f%% off, limit 15%%), split %.0f bps ratio %.2f (>= 10), wall %.2f s",
                    g, want, dev * 100, gs, ratio, wall)};
    }

    Outcome stop_and_wait()
    {
        constexpr std::uint64_t n = 1000;
        std::uint64_t violations = 0, checks = 0, split_runs = 0;
        for (std::uint64_t seed = 1; seed <= n; ++seed)
        {
            const scenario::Scenario s = randscn::make(seed);
            const auto r = scenario::run_scenario(s);
            const std::uint32_t limit = s.nodes[0].uip.tcp_split ? 2 : 1;
            violations += r.monitor.violations + (r.monitor.max_inflight_segments > limit ? 1 : 0);
            checks += r.monitor.checks;
            split_runs += s.nodes[0].uip.tcp_split ? 1 : 0;
        }
        return {violations == 0 && checks > 0,
                fmt("%llu scenarios (%llu split), %llu in-flight checks, %llu violations", (unsigned long long)n,
                    (unsigned long long)split_runs, (unsigned long long)checks, (unsigned long long)violations)};
    }

    Outcome isolation_check()
    {
        constexpr std::size_t n = 40, steps = 40;
        std::vector<std::vector<Bytes>> solo(n);
        std::size_t frames = 0;
        for (std::size_t i = 0; i < n; ++i)
        {
            solo[i] = isolation::run(n, steps, std::nullopt, i)[i];
            frames += solo[i].size();
        }
        std::size_t divergences = 0;
        for (std::uint64_t seed = 1; seed <= 100; ++seed)
        {
            const auto mixed = isolation::run(n, steps, seed);
            for (std::size_t i = 0; i < n; ++i)
            {
                divergences += mixed[i] != solo[i] ? 1 : 0;
            }
        }
        return {divergences == 0 && frames > 0,
                fmt("40 instances x 100 interleavings, %zu solo frames, %zu divergences", frames, divergences)};
    }

    Outcome pcap()
    {
        const Bytes want{0xd4, 0xc3, 0xb2, 0xa1, 0x02, 0x00, 0x04, 0x00, 0, 0, 0, 0, 0, 0, 0, 0,
                         0xff, 0xff, 0x00, 0x00, 0x65, 0x00, 0x00, 0x00};
        const fs::path dir = scratch("pcap");
        {
            trace::PcapWriter w(dir / "empty.pcap");
        }
        const std::string empty = slurp(dir / "empty.pcap");
        const bool header_ok = Bytes(empty.begin(), empty.end()) == want;

        scenario::RunOptions o;
        o.out_dir = dir;
        scenario::run_scenario(scenario::parse_scenario(golden::kScenario), o);
        const fs::path g = dir / "golden.pcap";
        const auto records = trace::trace_read(g);
        const std::string raw = slurp(g);
        const bool roundtrip = trace::encode_pcap(records) == Bytes(raw.begin(), raw.end());
        std::string why;
        const auto independent = pcapcheck::read(g.string(), &why);
        bool agree = independent && independent->linktype == 101 && independent->records.size() == records.size();
        for (std::size_t i = 0; agree && i < records.size(); ++i)
        {
            agree = Bytes(independent->records[i].data.begin(), independent->records[i].data.end()) == records[i].bytes;
        }
        const auto verdict = trace::trace_compare(trace::normalize(records), golden::expected());
        return {header_ok && roundtrip && agree && verdict.equal(),
                fmt("empty header %s, round trip %s, independent reader %s, golden handshake: %s",
                    header_ok ? "exact" : "WRONG", roundtrip ? "ok" : "FAILED", agree ? "agrees" : why.c_str(),
                    verdict.describe().c_str())};
    }

    Outcome checksum()
    {
        Rng rng(0xc0ffee);
        std::size_t mismatches = 0;
        for (int i = 0; i < 100'000; ++i)
        {
            std::vector<std::uint8_t> data(rng.below(1501));
            for (auto &b : data)
            {
                b = static_cast<std::uint8_t>(rng.next());
            }
            mismatches += internet_checksum(data) != naive::checksum(data) ? 1 : 0;
        }
        std::uint64_t packets = 0, bad = 0;
        scenario::RunOptions o;
        o.packet_observer = [&](SimTime, NodeId, ByteView p) {
            ++packets;
            bad += checksums_verify(p) ? 0 : 1;
        };
        scenario::run_scenario(scenario::preset("delayed-ack").at(0), o);
        return {mismatches == 0 && bad == 0 && packets > 0,
                fmt("1e5 random inputs, %zu mismatches; %llu emitted packets, %llu failing the fold check", mismatches,
                    (unsigned long long)packets, (unsigned long long)bad)};
    }

    Outcome corpus()
    {
        std::vector<fs::path> files;
        for (const auto &e : fs::directory_iterator(NSC_CORPUS_DIR))
        {
            if (e.path().extension() == ".c")
            {
                files.push_back(e.path());
            }
        }
        std::size_t disagree = 0, unstable = 0, sites = 0;
        std::string first_bad;
        for (const auto &path : files)
        {
            const std::string src = slurp(path);
            const oracle::Result want = oracle::analyze(src);
            glob::TransformConfig cfg;
            const auto tokens = glob::tokenize(src);
            const auto got = glob::globalize_source(src, cfg);
            std::set<std::string> names;
            std::map<std::string, std::size_t> per_symbol;
            for (const auto &r : got.rewrote)
            {
                names.insert(r.name);
                per_symbol[r.name] = r.sites;
            }
            std::set<std::pair<std::uint32_t, std::uint32_t>> at;
            for (auto i : got.reference_sites)
            {
                at.insert({tokens[i].line, tokens[i].col});
            }
            sites += at.size();
            if (names != want.virtualized || at != want.sites || per_symbol != want.sites_per_symbol)
            {
                ++disagree;
                first_bad = path.filename().string();
            }
            const auto again = glob::globalize_source(got.output, cfg);
            if (again.output != got.output || !again.rewrote.empty())
            {
                ++unstable;
                first_bad = path.filename().string();
            }
        }
        return {files.size() >= 30 && disagree == 0 && unstable == 0,
                fmt("%zu files, %zu rewritten sites, %zu disagreements, %zu unstable%s%s", files.size(), sites,
                    disagree, unstable, first_bad.empty() ? "" : ", e.g. ", first_bad.c_str())};
    }

    Outcome frag_sweep()
    {
        std::set<std::uint64_t> delivered;
        bool all_complete = true;
        for (const auto &s : scenario::preset("frag-sweep"))
        {
            const auto r = scenario::run_scenario(s);
            delivered.insert(r.flows.at(0).bytes_delivered);
            all_complete = all_complete && r.flows.at(0).bytes_delivered == s.apps.at(0).bytes_total;
        }
        constexpr double p = 0.1;
        std::string prr_text;
        bool prr_ok = true;
        for (const auto &s : scenario::preset("frag-sweep", {p, std::nullopt}))
        {
            const auto r = scenario::run_scenario(s);
            const auto &link = r.links.at(0);
            const double n = static_cast<double>(link.frames_sent);
            const double prr = static_cast<double>(link.frames_delivered) / n;
            const double sigma = std::sqrt(p * (1 - p) / n);
            const double z = std::abs(prr - (1 - p)) / sigma;
            prr_ok = prr_ok && n > 0 && z <= 3;
            prr_text += fmt(" %u:%.4f(n=%.0f,z=%.2f)", s.links[0].link.frag_threshold, prr, n, z);
        }
        return {delivered.size() == 1 && all_complete && prr_ok,
                fmt("lossless bytes delivered %s across 5 thresholds; PRR at p=0.1 vs 0.9 within 3 sigma:%s",
                    delivered.size() == 1 && all_complete ? "identical and complete" : "DIFFER", prr_text.c_str())};
    }

    Outcome hetero()
    {
        auto run_all = [] {
            std::string csv;
            std::vector<scenario::StatsFile> files;
            for (const auto &s : scenario::preset("hetero-prr"))
            {
                const std::string one = scenario::run_scenario(s).stats_csv();
                csv += one;
                files.push_back(scenario::parse_stats(one));
            }
            return std::make_pair(csv, files);
        };
        const auto [first, files] = run_all();
        const auto second = run_all().first;
        std::uint64_t retx_a = 0, retx_b = 0;
        for (const auto &f : files)
        {
            for (const auto &flow : f.flows)
            {
                (flow.variant == "A" ? retx_a : retx_b) += flow.retransmissions;
            }
        }
        const scenario::Report rep = scenario::make_report(files);
        const bool per_variant = rep.text.find("per variant") != std::string::npos;
        return {first == second && retx_a != retx_b && per_variant,
                fmt("reruns %s, retransmissions A=%llu B=%llu, per-variant PRR %s", first == second ? "identical" : "DIFFER",
                    (unsigned long long)retx_a, (unsigned long long)retx_b, per_variant ? "reported" : "missing")};
    }

    Outcome determinism()
    {
        std::vector<scenario::Scenario> all;
        for (const char *p : {"delayed-ack", "split-hack", "frag-sweep", "hetero-prr"})
        {
            for (auto &s : scenario::preset(p))
            {
                all.push_back(std::move(s));
            }
        }
        all.push_back(scenario::parse_scenario(golden::kScenario));
        for (std::uint64_t seed : {7, 8, 9})
        {
            auto s = randscn::make(seed);
            s.traces.push_back({0, s.name + ".pcap"});
            all.push_back(std::move(s));
        }
        std::size_t files = 0, differing = 0;
        const fs::path a = scratch("run-a"), b = scratch("run-b");
        for (const auto &s : all)
        {
            for (const fs::path &dir : {a, b})
            {
                scenario::RunOptions o;
                o.out_dir = dir;
                std::ofstream(dir / (s.name + ".csv"), std::ios::binary) << scenario::run_scenario(s, o).stats_csv();
            }
        }
        for (const auto &e : fs::directory_iterator(a))
        {
            ++files;
            const fs::path other = b / e.path().filename();
            differing += !fs::exists(other) || slurp(e.path()) != slurp(other) ? 1 : 0;
        }
        return {files > 0 && differing == 0,
                fmt("%zu scenarios, %zu CSV and pcap files compared, %zu differ", all.size(), files, differing)};
    }
}

int main()
{
    const std::vector<std::function<Outcome()>> criteria{conn_rewrite, delayed_ack, stop_and_wait, isolation_check, pcap,
                                                         checksum, corpus,      frag_sweep,    hetero,          determinism};
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        Outcome o;
        try
        {
            o = criteria[i]();
        }
        catch (const std::exception &e)
        {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::printf("criterion %zu: %s  %s\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
