#include "nsc/scenario.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace nsc::scenario
{
    namespace
    {
        std::string fixed(double v, int digits)
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.*f", digits, v);
            return buf;
        }

        std::string hex16(std::uint64_t v)
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
            return buf;
        }

        std::vector<std::string_view> split(std::string_view s, char sep)
        {
            std::vector<std::string_view> out;
            std::size_t pos = 0;
            while (true)
            {
                const auto at = s.find(sep, pos);
                out.push_back(s.substr(pos, at == s.npos ? s.npos : at - pos));
                if (at == s.npos)
                {
                    return out;
                }
                pos = at + 1;
            }
        }

        struct LineReader
        {
            const std::string &source;
            std::size_t line;

            [[noreturn]] void fail(const std::string &what) const
            {
                throw Error(Errc::SchemaMismatch, source + ":" + std::to_string(line) + ": " + what);
            }

            std::uint64_t u64(std::string_view field, std::string_view name) const
            {
                std::uint64_t v = 0;
                auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
                if (field.empty() || ec != std::errc{} || p != field.data() + field.size())
                {
                    fail(std::string(name) + ": expected an unsigned integer, got '" + std::string(field) + "'");
                }
                return v;
            }

            double real(std::string_view field, std::string_view name) const
            {
                const std::string copy(field);
                char *end = nullptr;
                const double v = std::strtod(copy.c_str(), &end);
                if (copy.empty() || end != copy.c_str() + copy.size())
                {
                    fail(std::string(name) + ": expected a number, got '" + copy + "'");
                }
                return v;
            }
        };

        AppRole role_from(const LineReader &r, std::string_view s)
        {
            for (AppRole role : {AppRole::BulkSender, AppRole::Sink, AppRole::Echo, AppRole::UdpBlast})
            {
                if (s == app_role_name(role))
                {
                    return role;
                }
            }
            r.fail("role: unknown role '" + std::string(s) + "'");
        }

        std::string pad(std::string s, std::size_t width)
        {
            if (s.size() < width)
            {
                s.insert(0, width - s.size(), ' ');
            }
            return s;
        }
    }

    std::string RunResult::stats_csv() const
    {
        std::ostringstream o;
        o << kStatsMagic << "\n# scenario=" << scenario << " seed=" << seed << " duration_us=" << duration.micros
          << " events=" << events << " digest=" << hex16(digest) << "\n"
          << kStatsHeader << "\n";
        for (const auto &f : flows)
        {
            o << f.flow << ',' << f.src_node << ',' << f.dst_node << ',' << app_role_name(f.role) << ',' << f.variant
              << ',' << f.bytes_acked << ',' << f.duration.micros << ',' << fixed(f.goodput_bps, 3) << ','
              << f.segments_sent << ',' << f.segments_acked << ',' << f.retransmissions << ','
              << f.segments_outstanding << ',' << f.frames_sent << ',' << f.frames_delivered << ','
              << fixed(f.prr, 6) << ',' << (f.timedout ? 1 : 0) << ',' << f.bytes_delivered << "\n";
        }
        return o.str();
    }

    StatsFile parse_stats(std::string_view text, const std::string &source)
    {
        StatsFile out;
        out.source = source;
        const auto lines = split(text, '\n');
        LineReader r{source, 1};
        if (lines.empty() || lines[0] != kStatsMagic)
        {
            r.fail("expected '" + std::string(kStatsMagic) + "'");
        }
        r.line = 2;
        if (lines.size() < 2 || !lines[1].starts_with("# "))
        {
            r.fail("expected the '# scenario=...' line");
        }
        for (std::string_view kv : split(lines[1].substr(2), ' '))
        {
            const auto eq = kv.find('=');
            if (eq == kv.npos)
            {
                r.fail("malformed field '" + std::string(kv) + "'");
            }
            const std::string_view key = kv.substr(0, eq), value = kv.substr(eq + 1);
            if (key == "scenario")
            {
                out.scenario = value;
            }
            else if (key == "seed")
            {
                out.seed = r.u64(value, key);
            }
        }
        if (out.scenario.empty())
        {
            r.fail("missing scenario=");
        }
        r.line = 3;
        if (lines.size() < 3 || lines[2] != kStatsHeader)
        {
            r.fail("header row does not match this version's columns");
        }
        const std::size_t columns = split(kStatsHeader, ',').size();
        for (std::size_t i = 3; i < lines.size(); ++i)
        {
            r.line = i + 1;
            if (lines[i].empty() && i + 1 == lines.size())
            {
                break;
            }
            const auto f = split(lines[i], ',');
            if (f.size() != columns)
            {
                r.fail("expected " + std::to_string(columns) + " fields, found " + std::to_string(f.size()));
            }
            FlowStats s;
            s.flow = r.u64(f[0], "flow");
            s.src_node = static_cast<NodeId>(r.u64(f[1], "src_node"));
            s.dst_node = static_cast<NodeId>(r.u64(f[2], "dst_node"));
            s.role = role_from(r, f[3]);
            s.variant = f[4];
            s.bytes_acked = r.u64(f[5], "bytes_acked");
            s.duration = SimTime::us(r.u64(f[6], "duration_us"));
            s.goodput_bps = r.real(f[7], "goodput_bps");
            s.segments_sent = r.u64(f[8], "segments_sent");
            s.segments_acked = r.u64(f[9], "segments_acked");
            s.retransmissions = r.u64(f[10], "retransmissions");
            s.segments_outstanding = r.u64(f[11], "segments_outstanding");
            s.frames_sent = r.u64(f[12], "frames_sent");
            s.frames_delivered = r.u64(f[13], "frames_delivered");
            s.prr = r.real(f[14], "prr");
            const std::uint64_t timedout = r.u64(f[15], "timedout");
            if (timedout > 1)
            {
                r.fail("timedout: expected 0 or 1");
            }
            s.timedout = timedout == 1;
            s.bytes_delivered = r.u64(f[16], "bytes_delivered");
            out.flows.push_back(std::move(s));
        }
        return out;
    }

    StatsFile load_stats(const std::filesystem::path &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
            throw Error(Errc::Io, "cannot open " + path.string());
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_stats(ss.str(), path.string());
    }

    Report make_report(const std::vector<StatsFile> &files)
    {
        Report rep;
        std::ostringstream text, csv;
        csv << "kind,scenario,flow,variant,goodput_bps,retransmissions,frames_sent,frames_delivered,prr,timedout\n";
        text << pad("scenario", 22) << pad("flow", 5) << pad("variant", 10) << pad("goodput_bps", 14)
             << pad("retx", 7) << pad("frames", 9) << pad("prr", 9) << pad("timedout", 9) << "\n";

        struct Aggregate
        {
            std::size_t flows = 0;
            double goodput = 0;
            std::uint64_t retransmissions = 0, frames_sent = 0, frames_delivered = 0;
        };
        std::map<std::string, Aggregate> variants;
        std::map<std::string, double> goodput_by_scenario;

        for (const auto &file : files)
        {
            for (const auto &f : file.flows)
            {
                text << pad(file.scenario, 22) << pad(std::to_string(f.flow), 5) << pad(f.variant, 10)
                     << pad(fixed(f.goodput_bps, 1), 14) << pad(std::to_string(f.retransmissions), 7)
                     << pad(std::to_string(f.frames_sent), 9) << pad(fixed(f.prr, 4), 9)
                     << pad(f.timedout ? "yes" : "no", 9) << "\n";
                csv << "flow," << file.scenario << ',' << f.flow << ',' << f.variant << ',' << fixed(f.goodput_bps, 3)
                    << ',' << f.retransmissions << ',' << f.frames_sent << ',' << f.frames_delivered << ','
                    << fixed(f.prr, 6) << ',' << (f.timedout ? 1 : 0) << "\n";
                Aggregate &a = variants[f.variant];
                ++a.flows;
                a.goodput += f.goodput_bps;
                a.retransmissions += f.retransmissions;
                a.frames_sent += f.frames_sent;
                a.frames_delivered += f.frames_delivered;
                goodput_by_scenario[file.scenario] += f.goodput_bps;
            }
        }

        if (variants.size() > 1)
        {
            text << "\nper variant:\n"
                 << pad("variant", 10) << pad("flows", 6) << pad("mean_goodput", 14) << pad("retx", 7)
                 << pad("prr", 9) << "\n";
            for (const auto &[name, a] : variants)
            {
                const double prr = a.frames_sent ? static_cast<double>(a.frames_delivered) / a.frames_sent : 0.0;
                const double mean = a.goodput / static_cast<double>(a.flows);
                text << pad(name, 10) << pad(std::to_string(a.flows), 6) << pad(fixed(mean, 1), 14)
                     << pad(std::to_string(a.retransmissions), 7) << pad(fixed(prr, 4), 9) << "\n";
                csv << "variant,," << a.flows << ',' << name << ',' << fixed(mean, 3) << ',' << a.retransmissions
                    << ',' << a.frames_sent << ',' << a.frames_delivered << ',' << fixed(prr, 6) << ",\n";
            }
        }

        const auto plain = goodput_by_scenario.find("delayed-ack");
        const auto split = goodput_by_scenario.find("split-hack");
        if (plain != goodput_by_scenario.end() && split != goodput_by_scenario.end() && plain->second > 0)
        {
            rep.split_ratio = split->second / plain->second;
            text << "\nsplit-hack / delayed-ack goodput ratio: " << fixed(*rep.split_ratio, 2) << "\n";
            csv << "ratio,split-hack/delayed-ack,,," << fixed(*rep.split_ratio, 6) << ",,,,,\n";
        }
        rep.text = text.str();
        rep.csv = csv.str();
        return rep;
    }
}
