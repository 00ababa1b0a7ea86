#include "nsc/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace nsc::scenario
{
    namespace
    {
        struct Entry
        {
            std::string key;
            std::string value;
            std::size_t line = 0;
        };

        struct Section
        {
            std::string name;
            std::size_t line = 0;
            std::vector<Entry> entries;
        };

        [[noreturn]] void parse_error(std::size_t line, const std::string &what)
        {
            throw Error(Errc::ParseError, "line " + std::to_string(line) + ": " + what);
        }

        std::string_view trim(std::string_view s)
        {
            const auto first = s.find_first_not_of(" \t\r");
            if (first == std::string_view::npos)
            {
                return {};
            }
            const auto last = s.find_last_not_of(" \t\r");
            return s.substr(first, last - first + 1);
        }

        std::uint64_t to_u64(const Entry &e)
        {
            std::uint64_t v = 0;
            const char *end = e.value.data() + e.value.size();
            auto [p, ec] = std::from_chars(e.value.data(), end, v);
            if (ec != std::errc{} || p != end || e.value.empty())
            {
                parse_error(e.line, e.key + ": expected an unsigned integer, got '" + e.value + "'");
            }
            return v;
        }

        std::uint32_t to_u32(const Entry &e)
        {
            const std::uint64_t v = to_u64(e);
            if (v > 0xffffffffULL)
            {
                parse_error(e.line, e.key + ": value " + e.value + " out of range");
            }
            return static_cast<std::uint32_t>(v);
        }

        std::uint16_t to_u16(const Entry &e)
        {
            const std::uint64_t v = to_u64(e);
            if (v > 0xffff)
            {
                parse_error(e.line, e.key + ": value " + e.value + " out of range");
            }
            return static_cast<std::uint16_t>(v);
        }

        double to_double(const Entry &e)
        {
            // strtod accepts forms from_chars in older libstdc++ does not, but
            // we still insist on consuming the whole value.
            char *end = nullptr;
            const double v = std::strtod(e.value.c_str(), &end);
            if (e.value.empty() || end != e.value.c_str() + e.value.size())
            {
                parse_error(e.line, e.key + ": expected a number, got '" + e.value + "'");
            }
            return v;
        }

        bool to_bool(const Entry &e)
        {
            static const std::map<std::string, bool, std::less<>> words = {
                {"1", true}, {"on", true}, {"true", true}, {"yes", true},
                {"0", false}, {"off", false}, {"false", false}, {"no", false},
            };
            const auto it = words.find(e.value);
            if (it == words.end())
            {
                parse_error(e.line, e.key + ": expected a boolean (on/off, true/false, 1/0), got '" + e.value + "'");
            }
            return it->second;
        }

        SimTime to_duration(const Entry &e)
        {
            std::string_view v = e.value;
            std::uint64_t scale = 1;
            if (v.ends_with("us"))
            {
                v.remove_suffix(2);
            }
            else if (v.ends_with("ms"))
            {
                v.remove_suffix(2);
                scale = 1000;
            }
            else if (v.ends_with("s"))
            {
                v.remove_suffix(1);
                scale = 1000000;
            }
            std::uint64_t n = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
            if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
            {
                parse_error(e.line, e.key + ": expected a duration like 250ms, got '" + e.value + "'");
            }
            if (n > SimTime::kMaxMicros / scale)
            {
                parse_error(e.line, e.key + ": duration " + e.value + " out of range");
            }
            return SimTime::us(n * scale);
        }

        std::string duration_text(SimTime t)
        {
            if (t.micros != 0 && t.micros % 1000000 == 0)
            {
                return std::to_string(t.micros / 1000000) + "s";
            }
            if (t.micros != 0 && t.micros % 1000 == 0)
            {
                return std::to_string(t.micros / 1000) + "ms";
            }
            return std::to_string(t.micros) + "us";
        }

        std::string double_text(double v)
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        }

        std::vector<Section> split_sections(std::string_view text)
        {
            std::vector<Section> out;
            std::size_t line_no = 0;
            std::size_t pos = 0;
            while (pos <= text.size())
            {
                const auto nl = text.find('\n', pos);
                const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
                pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
                ++line_no;
                const std::string_view line = trim(raw);
                if (line.empty() || line.front() == '#' || line.front() == ';')
                {
                    continue;
                }
                if (line.front() == '[')
                {
                    if (line.back() != ']')
                    {
                        parse_error(line_no, "unterminated section header");
                    }
                    const std::string name(trim(line.substr(1, line.size() - 2)));
                    static const std::set<std::string, std::less<>> known = {"scenario", "node", "link", "app",
                                                                             "trace"};
                    if (!known.contains(name))
                    {
                        parse_error(line_no, "unknown section [" + name + "]");
                    }
                    out.push_back(Section{name, line_no, {}});
                    continue;
                }
                const auto eq = line.find('=');
                if (eq == std::string_view::npos)
                {
                    parse_error(line_no, "expected key = value");
                }
                if (out.empty())
                {
                    parse_error(line_no, "key outside of any section");
                }
                Entry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
                if (e.key.empty())
                {
                    parse_error(line_no, "empty key");
                }
                for (const auto &prev : out.back().entries)
                {
                    if (prev.key == e.key)
                    {
                        parse_error(line_no, "duplicate key '" + e.key + "'");
                    }
                }
                out.back().entries.push_back(std::move(e));
            }
            return out;
        }

        const Entry *find(const Section &s, std::string_view key)
        {
            for (const auto &e : s.entries)
            {
                if (e.key == key)
                {
                    return &e;
                }
            }
            return nullptr;
        }

        const Entry &require_key(const Section &s, std::string_view key)
        {
            if (const Entry *e = find(s, key))
            {
                return *e;
            }
            parse_error(s.line, "[" + s.name + "] requires '" + std::string(key) + "'");
        }

        using Setter = void (*)(NodeSpec &, const Entry &);

        const std::map<std::string, Setter, std::less<>> &uip_keys()
        {
            static const std::map<std::string, Setter, std::less<>> keys = {
                {"max_connections", [](NodeSpec &n, const Entry &e) { n.uip.max_connections = to_u32(e); }},
                {"max_listen_ports", [](NodeSpec &n, const Entry &e) { n.uip.max_listen_ports = to_u32(e); }},
                {"max_udp_connections", [](NodeSpec &n, const Entry &e) { n.uip.max_udp_connections = to_u32(e); }},
                {"buffer_size", [](NodeSpec &n, const Entry &e) { n.uip.buffer_size = to_u32(e); }},
                {"packetbuf_size", [](NodeSpec &n, const Entry &e) { n.uip.packetbuf_size = to_u32(e); }},
                {"tcp", [](NodeSpec &n, const Entry &e) { n.uip.tcp_enabled = to_bool(e); }},
                {"udp", [](NodeSpec &n, const Entry &e) { n.uip.udp_enabled = to_bool(e); }},
                {"udp_checksums", [](NodeSpec &n, const Entry &e) { n.uip.udp_checksums = to_bool(e); }},
                {"tcp_split", [](NodeSpec &n, const Entry &e) { n.uip.tcp_split = to_bool(e); }},
                {"periodic_interval", [](NodeSpec &n, const Entry &e) { n.uip.periodic_interval = to_duration(e); }},
                {"max_retransmissions", [](NodeSpec &n, const Entry &e) { n.uip.max_retransmissions = to_u32(e); }},
                {"initial_rto", [](NodeSpec &n, const Entry &e) { n.uip.initial_rto = to_u32(e); }},
                {"max_rto", [](NodeSpec &n, const Entry &e) { n.uip.max_rto = to_u32(e); }},
                {"time_wait_periods", [](NodeSpec &n, const Entry &e) { n.uip.time_wait_periods = to_u32(e); }},
            };
            return keys;
        }

        const std::map<std::string, Setter, std::less<>> &full_keys()
        {
            static const std::map<std::string, Setter, std::less<>> keys = {
                {"recv_window", [](NodeSpec &n, const Entry &e) { n.full.recv_window = to_u32(e); }},
                {"delayed_ack_timeout",
                 [](NodeSpec &n, const Entry &e) { n.full.delayed_ack_timeout = to_duration(e); }},
                {"ack_every", [](NodeSpec &n, const Entry &e) { n.full.ack_every_n_full_segments = to_u32(e); }},
                {"initial_rto", [](NodeSpec &n, const Entry &e) { n.full.initial_rto = to_duration(e); }},
                {"max_rto", [](NodeSpec &n, const Entry &e) { n.full.max_rto = to_duration(e); }},
                {"max_retransmissions", [](NodeSpec &n, const Entry &e) { n.full.max_retransmissions = to_u32(e); }},
                {"mss", [](NodeSpec &n, const Entry &e) { n.full.mss = to_u16(e); }},
                {"time_wait", [](NodeSpec &n, const Entry &e) { n.full.time_wait = to_duration(e); }},
                {"reorder_capacity", [](NodeSpec &n, const Entry &e) { n.full.reorder_capacity = to_u32(e); }},
                {"isn_seed", [](NodeSpec &n, const Entry &e) { n.full.isn_seed = to_u64(e); }},
            };
            return keys;
        }

        void unknown_key(const Section &s, const Entry &e)
        {
            parse_error(e.line, "unknown key '" + e.key + "' in [" + s.name + "]");
        }

        NodeSpec parse_node(const Section &s)
        {
            NodeSpec n;
            n.id = to_u32(require_key(s, "id"));
            if (const Entry *e = find(s, "stack"))
            {
                if (e->value == "uip")
                {
                    n.stack = StackKind::Uip;
                }
                else if (e->value == "full")
                {
                    n.stack = StackKind::Full;
                }
                else
                {
                    throw Error(Errc::ValidationError, "line " + std::to_string(e->line) + ": node " +
                                                           std::to_string(n.id) + ": unknown stack kind \"" +
                                                           e->value + "\" (allowed: uip, full)");
                }
            }
            const auto &keys = n.stack == StackKind::Uip ? uip_keys() : full_keys();
            const auto &other = n.stack == StackKind::Uip ? full_keys() : uip_keys();
            for (const auto &e : s.entries)
            {
                if (e.key == "id" || e.key == "stack")
                {
                    continue;
                }
                if (e.key == "variant")
                {
                    n.variant = e.value;
                    continue;
                }
                if (const auto it = keys.find(e.key); it != keys.end())
                {
                    it->second(n, e);
                    continue;
                }
                if (other.contains(e.key))
                {
                    parse_error(e.line, "key '" + e.key + "' does not apply to stack " + stack_kind_name(n.stack));
                }
                unknown_key(s, e);
            }
            return n;
        }

        LinkSpec parse_link(const Section &s)
        {
            LinkSpec l;
            for (const auto &e : s.entries)
            {
                if (e.key == "a")
                {
                    l.a = to_u32(e);
                }
                else if (e.key == "b")
                {
                    l.b = to_u32(e);
                }
                else if (e.key == "latency")
                {
                    l.link.latency = to_duration(e);
                }
                else if (e.key == "bandwidth_bps")
                {
                    l.link.bandwidth_bps = to_u64(e);
                }
                else if (e.key == "loss_prob")
                {
                    l.link.loss_prob = to_double(e);
                }
                else if (e.key == "frag_threshold")
                {
                    l.link.frag_threshold = to_u32(e);
                }
                else
                {
                    unknown_key(s, e);
                }
            }
            require_key(s, "a");
            require_key(s, "b");
            return l;
        }

        AppRole parse_role(const Entry &e)
        {
            static const std::map<std::string, AppRole, std::less<>> roles = {
                {"bulk_sender", AppRole::BulkSender},
                {"sink", AppRole::Sink},
                {"echo", AppRole::Echo},
                {"udp_blast", AppRole::UdpBlast},
            };
            const auto it = roles.find(e.value);
            if (it == roles.end())
            {
                parse_error(e.line, "role: unknown role '" + e.value + "' (allowed: bulk_sender, sink, echo, udp_blast)");
            }
            return it->second;
        }

        AppSpec parse_app(const Section &s)
        {
            AppSpec a;
            a.node = to_u32(require_key(s, "node"));
            a.role = parse_role(require_key(s, "role"));
            for (const auto &e : s.entries)
            {
                if (e.key == "node" || e.key == "role")
                {
                    continue;
                }
                if (e.key == "peer")
                {
                    a.peer = to_u32(e);
                }
                else if (e.key == "port")
                {
                    a.port = to_u16(e);
                }
                else if (e.key == "bytes_total")
                {
                    a.bytes_total = to_u64(e);
                }
                else if (e.key == "start_time")
                {
                    a.start_time = to_duration(e);
                }
                else if (e.key == "datagram_size")
                {
                    a.datagram_size = to_u32(e);
                }
                else if (e.key == "interval")
                {
                    a.interval = to_duration(e);
                }
                else
                {
                    unknown_key(s, e);
                }
            }
            return a;
        }

        [[noreturn]] void invalid(const std::string &what)
        {
            throw Error(Errc::ValidationError, what);
        }
    }

    const char *stack_kind_name(StackKind kind) noexcept
    {
        return kind == StackKind::Uip ? "uip" : "full";
    }

    const char *app_role_name(AppRole role) noexcept
    {
        switch (role)
        {
        case AppRole::BulkSender:
            return "bulk_sender";
        case AppRole::Sink:
            return "sink";
        case AppRole::Echo:
            return "echo";
        case AppRole::UdpBlast:
            return "udp_blast";
        }
        return "?";
    }

    Ipv4Addr node_address(NodeId id)
    {
        return Ipv4Addr{0x0a000000u + id + 1};
    }

    const NodeSpec &Scenario::node(NodeId id) const
    {
        for (const auto &n : nodes)
        {
            if (n.id == id)
            {
                return n;
            }
        }
        throw Error(Errc::ValidationError, "no node " + std::to_string(id));
    }

    void Scenario::validate() const
    {
        if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
            }))
        {
            invalid("scenario name '" + name + "' must be non-empty and use only [A-Za-z0-9._-]");
        }
        if (duration.micros > SimTime::kMaxMicros)
        {
            invalid("duration exceeds the simulation time range");
        }
        std::set<NodeId> ids;
        for (const auto &n : nodes)
        {
            if (!ids.insert(n.id).second)
            {
                invalid("node ids must be unique (duplicate " + std::to_string(n.id) + ")");
            }
            // Addresses are 10.0.0.0 + id + 1 and must stay inside 10.0.0.0/8.
            if (n.id >= 0x00fffffe)
            {
                invalid("node " + std::to_string(n.id) + ": id too large");
            }
            try
            {
                if (n.stack == StackKind::Uip)
                {
                    n.uip.validate();
                }
                else
                {
                    n.full.validate();
                }
            }
            catch (const Error &e)
            {
                invalid("node " + std::to_string(n.id) + ": " + e.message());
            }
        }
        for (std::size_t i = 0; i < links.size(); ++i)
        {
            const LinkSpec &l = links[i];
            const std::string where = "link " + std::to_string(i) + ": ";
            if (!ids.contains(l.a) || !ids.contains(l.b))
            {
                invalid(where + "endpoint " + std::to_string(ids.contains(l.a) ? l.b : l.a) + " is not a node");
            }
            if (l.a == l.b)
            {
                invalid(where + "endpoints must differ");
            }
            for (std::size_t j = 0; j < i; ++j)
            {
                if ((links[j].a == l.a && links[j].b == l.b) || (links[j].a == l.b && links[j].b == l.a))
                {
                    invalid(where + "duplicates link " + std::to_string(j));
                }
            }
            try
            {
                l.link.validate();
            }
            catch (const Error &e)
            {
                invalid(where + e.message());
            }
        }
        for (std::size_t i = 0; i < apps.size(); ++i)
        {
            const AppSpec &a = apps[i];
            const std::string where = "app " + std::to_string(i) + ": ";
            if (!ids.contains(a.node))
            {
                invalid(where + "node " + std::to_string(a.node) + " does not exist");
            }
            if (a.peer && !ids.contains(*a.peer))
            {
                invalid(where + "peer " + std::to_string(*a.peer) + " does not exist");
            }
            const bool needs_peer = a.role == AppRole::BulkSender || a.role == AppRole::UdpBlast;
            if (needs_peer && !a.peer)
            {
                invalid(where + app_role_name(a.role) + " requires a peer");
            }
            if (a.peer && *a.peer == a.node)
            {
                invalid(where + "peer must differ from node");
            }
            if (a.port == 0)
            {
                invalid(where + "port must be nonzero");
            }
            if (a.role == AppRole::UdpBlast)
            {
                if (a.datagram_size == 0 || a.interval.micros == 0)
                {
                    invalid(where + "udp_blast needs a positive datagram_size and interval");
                }
                const NodeSpec &n = node(a.node);
                if (n.stack == StackKind::Uip && !n.uip.udp_enabled)
                {
                    invalid(where + "udp_blast on node " + std::to_string(n.id) + " with udp disabled");
                }
            }
            if (a.role != AppRole::UdpBlast && node(a.node).stack == StackKind::Uip &&
                !node(a.node).uip.tcp_enabled)
            {
                invalid(where + "TCP application on node " + std::to_string(a.node) + " with tcp disabled");
            }
        }
        for (std::size_t i = 0; i < traces.size(); ++i)
        {
            if (traces[i].link >= links.size())
            {
                invalid("trace " + std::to_string(i) + ": link " + std::to_string(traces[i].link) + " does not exist");
            }
            if (traces[i].path.empty())
            {
                invalid("trace " + std::to_string(i) + ": empty path");
            }
        }
    }

    Scenario parse_scenario(std::string_view text)
    {
        Scenario s;
        bool seen_header = false;
        for (const Section &sec : split_sections(text))
        {
            if (sec.name == "scenario")
            {
                if (seen_header)
                {
                    parse_error(sec.line, "more than one [scenario] section");
                }
                seen_header = true;
                for (const auto &e : sec.entries)
                {
                    if (e.key == "name")
                    {
                        s.name = e.value;
                    }
                    else if (e.key == "seed")
                    {
                        s.seed = to_u64(e);
                    }
                    else if (e.key == "duration")
                    {
                        s.duration = to_duration(e);
                    }
                    else
                    {
                        unknown_key(sec, e);
                    }
                }
            }
            else if (sec.name == "node")
            {
                s.nodes.push_back(parse_node(sec));
            }
            else if (sec.name == "link")
            {
                s.links.push_back(parse_link(sec));
            }
            else if (sec.name == "app")
            {
                s.apps.push_back(parse_app(sec));
            }
            else
            {
                TraceSpec t;
                t.link = to_u32(require_key(sec, "link"));
                t.path = require_key(sec, "path").value;
                for (const auto &e : sec.entries)
                {
                    if (e.key != "link" && e.key != "path")
                    {
                        unknown_key(sec, e);
                    }
                }
                s.traces.push_back(std::move(t));
            }
        }
        s.validate();
        return s;
    }

    Scenario load_scenario(const std::filesystem::path &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
            throw Error(Errc::Io, "cannot open " + path.string());
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        try
        {
            return parse_scenario(ss.str());
        }
        catch (const Error &e)
        {
            throw Error(e.code(), path.string() + ": " + e.message());
        }
    }

    std::string format_scenario(const Scenario &s)
    {
        std::ostringstream o;
        o << "[scenario]\nname = " << s.name << "\nseed = " << s.seed << "\nduration = " << duration_text(s.duration)
          << "\n";
        for (const auto &n : s.nodes)
        {
            o << "\n[node]\nid = " << n.id << "\nstack = " << stack_kind_name(n.stack) << "\n";
            if (!n.variant.empty())
            {
                o << "variant = " << n.variant << "\n";
            }
            if (n.stack == StackKind::Uip)
            {
                const uip::Config &c = n.uip;
                o << "max_connections = " << c.max_connections << "\nmax_listen_ports = " << c.max_listen_ports
                  << "\nmax_udp_connections = " << c.max_udp_connections << "\nbuffer_size = " << c.buffer_size
                  << "\npacketbuf_size = " << c.packetbuf_size << "\ntcp = " << (c.tcp_enabled ? "on" : "off")
                  << "\nudp = " << (c.udp_enabled ? "on" : "off")
                  << "\nudp_checksums = " << (c.udp_checksums ? "on" : "off")
                  << "\ntcp_split = " << (c.tcp_split ? "on" : "off")
                  << "\nperiodic_interval = " << duration_text(c.periodic_interval)
                  << "\nmax_retransmissions = " << c.max_retransmissions << "\ninitial_rto = " << c.initial_rto
                  << "\nmax_rto = " << c.max_rto << "\ntime_wait_periods = " << c.time_wait_periods << "\n";
            }
            else
            {
                const full::Config &c = n.full;
                o << "recv_window = " << c.recv_window
                  << "\ndelayed_ack_timeout = " << duration_text(c.delayed_ack_timeout)
                  << "\nack_every = " << c.ack_every_n_full_segments
                  << "\ninitial_rto = " << duration_text(c.initial_rto) << "\nmax_rto = " << duration_text(c.max_rto)
                  << "\nmax_retransmissions = " << c.max_retransmissions << "\nmss = " << c.mss
                  << "\ntime_wait = " << duration_text(c.time_wait) << "\nreorder_capacity = " << c.reorder_capacity
                  << "\nisn_seed = " << c.isn_seed << "\n";
            }
        }
        for (const auto &l : s.links)
        {
            o << "\n[link]\na = " << l.a << "\nb = " << l.b << "\nlatency = " << duration_text(l.link.latency)
              << "\nbandwidth_bps = " << l.link.bandwidth_bps << "\nloss_prob = " << double_text(l.link.loss_prob)
              << "\nfrag_threshold = " << l.link.frag_threshold << "\n";
        }
        for (const auto &a : s.apps)
        {
            o << "\n[app]\nnode = " << a.node << "\nrole = " << app_role_name(a.role) << "\n";
            if (a.peer)
            {
                o << "peer = " << *a.peer << "\n";
            }
            o << "port = " << a.port << "\nbytes_total = " << a.bytes_total
              << "\nstart_time = " << duration_text(a.start_time) << "\n";
            if (a.role == AppRole::UdpBlast)
            {
                o << "datagram_size = " << a.datagram_size << "\ninterval = " << duration_text(a.interval) << "\n";
            }
        }
        for (const auto &t : s.traces)
        {
            o << "\n[trace]\nlink = " << t.link << "\npath = " << t.path << "\n";
        }
        return o.str();
    }

    // Presets ---------------------------------------------------------------

    namespace
    {
        NodeSpec uip_node(NodeId id, bool split, std::string variant)
        {
            NodeSpec n;
            n.id = id;
            n.stack = StackKind::Uip;
            n.uip.tcp_split = split;
            n.variant = std::move(variant);
            return n;
        }

        NodeSpec full_node(NodeId id, std::string variant)
        {
            NodeSpec n;
            n.id = id;
            n.stack = StackKind::Full;
            n.variant = std::move(variant);
            return n;
        }

        LinkSpec link(NodeId a, NodeId b, SimTime latency, std::uint64_t bw, double loss, std::uint32_t threshold)
        {
            LinkSpec l;
            l.a = a;
            l.b = b;
            l.link.latency = latency;
            l.link.bandwidth_bps = bw;
            l.link.loss_prob = loss;
            l.link.frag_threshold = threshold;
            return l;
        }

        AppSpec app(NodeId node, AppRole role, std::optional<NodeId> peer, std::uint64_t bytes)
        {
            AppSpec a;
            a.node = node;
            a.role = role;
            a.peer = peer;
            a.bytes_total = bytes;
            return a;
        }

        // uIP bulk sender -> full sink over one link, RTT 10 ms.
        Scenario pair_scenario(std::string name, bool split, double loss)
        {
            Scenario s;
            s.name = std::move(name);
            s.duration = SimTime::sec(10);
            s.nodes.push_back(uip_node(0, split, split ? "split" : "nosplit"));
            s.nodes.push_back(full_node(1, "sink"));
            s.links.push_back(link(0, 1, SimTime::ms(5), 10'000'000, loss, 1500));
            s.apps.push_back(app(0, AppRole::BulkSender, 1, 1'000'000));
            s.apps.push_back(app(1, AppRole::Sink, std::nullopt, 0));
            s.traces.push_back(TraceSpec{0, s.name + ".pcap"});
            return s;
        }
    }

    std::vector<std::string> preset_names()
    {
        return {"delayed-ack", "split-hack", "frag-sweep", "hetero-prr"};
    }

    std::vector<Scenario> preset(std::string_view name, const PresetOptions &options)
    {
        const double loss = options.loss.value_or(0.0);
        std::vector<Scenario> out;
        if (name == "delayed-ack" || name == "split-hack")
        {
            out.push_back(pair_scenario(std::string(name), name == "split-hack", loss));
        }
        else if (name == "frag-sweep")
        {
            for (std::uint32_t threshold : {60u, 90u, 127u, 200u, 400u})
            {
                Scenario s = pair_scenario("frag-sweep-" + std::to_string(threshold), false, loss);
                s.duration = SimTime::sec(60);
                s.nodes[0].variant = "frag" + std::to_string(threshold);
                s.links[0].link.bandwidth_bps = 250'000;
                s.links[0].link.frag_threshold = threshold;
                s.apps[0].bytes_total = 20'000;
                out.push_back(std::move(s));
            }
        }
        else if (name == "hetero-prr")
        {
            std::vector<double> losses = {0.0, 0.05, 0.1, 0.2};
            if (options.loss)
            {
                losses = {*options.loss};
            }
            for (double p : losses)
            {
                char label[32];
                std::snprintf(label, sizeof label, "hetero-prr-p%.2f", p);
                Scenario s;
                s.name = label;
                s.duration = SimTime::sec(60);
                // Senders 0..3, gateway 4, server 5.
                for (NodeId i = 0; i < 4; ++i)
                {
                    const bool variant_a = i < 2;
                    s.nodes.push_back(uip_node(i, variant_a, variant_a ? "A" : "B"));
                }
                s.nodes.push_back(full_node(4, "gateway"));
                s.nodes.push_back(full_node(5, "server"));
                for (NodeId i = 0; i < 4; ++i)
                {
                    s.links.push_back(link(i, 4, SimTime::ms(5), 250'000, p, 127));
                }
                s.links.push_back(link(4, 5, SimTime::ms(1), 10'000'000, 0.0, 1500));
                for (NodeId i = 0; i < 4; ++i)
                {
                    s.apps.push_back(app(i, AppRole::BulkSender, 5, 20'000));
                }
                s.apps.push_back(app(5, AppRole::Sink, std::nullopt, 0));
                out.push_back(std::move(s));
            }
        }
        else
        {
            std::string names;
            for (const auto &n : preset_names())
            {
                names += (names.empty() ? "" : ", ") + n;
            }
            throw Error(Errc::UnknownPreset, "'" + std::string(name) + "' (known: " + names + ")");
        }
        for (auto &s : out)
        {
            if (options.seed)
            {
                s.seed = *options.seed;
            }
            s.validate();
        }
        return out;
    }
}
