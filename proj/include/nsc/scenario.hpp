#pragma once

// Scenario files, presets, the network runner and the stats CSV.
//
// Scenario file syntax: `[section]` headers (scenario, node, link, app, trace)
// followed by `key = value` lines; `#` and `;` start comments. Durations take
// an optional unit suffix (us, ms, s); bare numbers are microseconds. See the
// README for the full key list.

#include "nsc/full_tcp.hpp"
#include "nsc/sim.hpp"
#include "nsc/uip.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nsc::scenario
{
    enum class StackKind
    {
        Uip,
        Full,
    };

    const char *stack_kind_name(StackKind kind) noexcept;

    struct NodeSpec
    {
        NodeId id = 0;
        StackKind stack = StackKind::Uip;
        /// Free-form label carried into the stats (e.g. a stack variant).
        std::string variant;
        uip::Config uip;
        full::Config full;
    };

    struct LinkSpec
    {
        NodeId a = 0, b = 0;
        Link link;
    };

    enum class AppRole
    {
        BulkSender,
        Sink,
        Echo,
        UdpBlast,
    };

    const char *app_role_name(AppRole role) noexcept;

    struct AppSpec
    {
        NodeId node = 0;
        AppRole role = AppRole::Sink;
        std::optional<NodeId> peer;
        std::uint16_t port = 80;
        std::uint64_t bytes_total = 0;
        SimTime start_time{};
        /// udp_blast datagram size and spacing.
        std::uint32_t datagram_size = 100;
        SimTime interval = SimTime::ms(100);
    };

    struct TraceSpec
    {
        std::size_t link = 0;
        std::string path;
    };

    struct Scenario
    {
        std::string name = "scenario";
        std::uint64_t seed = 1;
        SimTime duration = SimTime::sec(10);
        std::vector<NodeSpec> nodes;
        std::vector<LinkSpec> links;
        std::vector<AppSpec> apps;
        std::vector<TraceSpec> traces;

        /// Throws ValidationError naming the failed invariant.
        void validate() const;
        const NodeSpec &node(NodeId id) const;
    };

    /// Node address: 10.0.x.y with x.y = id + 1.
    Ipv4Addr node_address(NodeId id);

    /// Throws ParseError (with line) or ValidationError.
    Scenario parse_scenario(std::string_view text);
    Scenario load_scenario(const std::filesystem::path &path);
    /// Inverse of parse_scenario for the keys this repo uses.
    std::string format_scenario(const Scenario &s);

    struct PresetOptions
    {
        std::optional<double> loss;
        std::optional<std::uint64_t> seed;
    };

    /// delayed-ack, split-hack, frag-sweep (5 variants), hetero-prr (one per
    /// loss level). Throws UnknownPreset.
    std::vector<Scenario> preset(std::string_view name, const PresetOptions &options = {});
    std::vector<std::string> preset_names();

    struct FlowStats
    {
        std::size_t flow = 0;
        NodeId src_node = 0, dst_node = 0;
        AppRole role = AppRole::BulkSender;
        std::string variant;
        std::uint64_t bytes_acked = 0;
        SimTime duration{};
        double goodput_bps = 0;
        std::uint64_t segments_sent = 0;
        std::uint64_t segments_acked = 0;
        std::uint64_t retransmissions = 0;
        std::uint64_t segments_outstanding = 0;
        std::uint64_t frames_sent = 0;
        std::uint64_t frames_delivered = 0;
        double prr = 0;
        bool timedout = false;
        /// Application bytes the peer received on this flow.
        std::uint64_t bytes_delivered = 0;
    };

    /// Per-instant stop-and-wait observation on uIP senders.
    struct InflightMonitor
    {
        std::uint64_t checks = 0;
        std::uint64_t violations = 0;
        std::uint32_t max_inflight_segments = 0;
    };

    struct LinkCounters
    {
        std::uint64_t frames_sent = 0;
        std::uint64_t frames_delivered = 0;
        std::uint64_t datagrams_sent = 0;
        std::uint64_t datagrams_delivered = 0;
    };

    struct RunResult
    {
        std::string scenario;
        std::uint64_t seed = 0;
        SimTime duration{};
        std::vector<FlowStats> flows;
        std::vector<LinkCounters> links;
        std::uint64_t events = 0;
        std::uint64_t digest = 0;
        InflightMonitor monitor;
        /// Every IP packet emitted by any node, in emission order.
        std::uint64_t packets_emitted = 0;
        std::uint64_t checksum_failures = 0;
        std::vector<std::filesystem::path> traces_written;

        std::string stats_csv() const;
    };

    struct RunOptions
    {
        /// Base directory for relative trace paths; traces are skipped when empty.
        std::optional<std::filesystem::path> out_dir;
        /// Observe every emitted packet (the checksum fold check and tests use this).
        std::function<void(SimTime, NodeId, ByteView)> packet_observer;
    };

    /// Pure function of (scenario, seed) apart from the trace files it writes.
    RunResult run_scenario(const Scenario &s, const RunOptions &options = {});

    inline constexpr std::string_view kStatsMagic = "# nsc-stats 1";
    inline constexpr std::string_view kStatsHeader =
        "flow,src_node,dst_node,role,variant,bytes_acked,duration_us,goodput_bps,segments_sent,segments_acked,"
        "retransmissions,segments_outstanding,frames_sent,frames_delivered,prr,timedout,bytes_delivered";

    struct StatsFile
    {
        std::string source;
        std::string scenario;
        std::uint64_t seed = 0;
        std::vector<FlowStats> flows;
    };

    /// Throws SchemaMismatch naming the source and line.
    StatsFile parse_stats(std::string_view text, const std::string &source = "<stats>");
    StatsFile load_stats(const std::filesystem::path &path);

    struct Report
    {
        std::string text;
        std::string csv;
        /// split-hack goodput over delayed-ack goodput, when both are present.
        std::optional<double> split_ratio;
    };

    Report make_report(const std::vector<StatsFile> &files);
}
