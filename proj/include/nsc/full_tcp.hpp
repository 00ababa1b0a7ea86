#pragma once

// Behavioral model of a full-scale TCP peer: sliding-window sender with
// timeout retransmission and an RFC 1122 delayed-ACK receiver (ACK at least
// every second full-sized segment, otherwise within the delayed-ACK timeout).
// No congestion control, Nagle, SACK, timestamps or window scaling.

#include "nsc/sim.hpp"
#include "nsc/wire.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace nsc::full
{
    struct Config
    {
        std::uint32_t recv_window = 65535;
        SimTime delayed_ack_timeout = SimTime::ms(200);
        std::uint32_t ack_every_n_full_segments = 2;
        SimTime initial_rto = SimTime::sec(1);
        SimTime max_rto = SimTime::sec(60);
        std::uint32_t max_retransmissions = 12;
        std::uint16_t mss = 1460;
        SimTime time_wait = SimTime::sec(1);
        /// Out-of-order segments held for reassembly, per connection.
        std::uint32_t reorder_capacity = 64;
        std::uint64_t isn_seed = 1;
        Ipv4Addr host_addr{0x0a000002};

        /// RFC 1122 caps the delayed-ACK timeout at 500 ms. Throws InvalidConfig.
        void validate() const;
    };

    using ConnId = std::uint32_t;

    enum class CloseReason
    {
        Normal,
        Reset,
        Timeout,
    };

    struct Connection
    {
        TcpState state = TcpState::Closed;
        Ipv4Addr remote_addr;
        std::uint16_t local_port = 0, remote_port = 0;
        std::uint32_t iss = 0, irs = 0;
        std::uint32_t snd_una = 0, snd_nxt = 0, snd_max = 0;
        std::uint32_t rcv_nxt = 0;
        std::uint32_t snd_wnd = 0;
        std::uint16_t eff_mss = 536;

        /// Bytes from snd_una onward not yet acknowledged (sent or unsent).
        Bytes send_buffer;
        bool close_requested = false;
        bool fin_sent = false;

        bool pending_ack = false;
        SimTime ack_deadline{};
        std::uint32_t unacked_full_segments = 0;
        /// Largest in-order segment seen, capped at our MSS; "full-sized" means
        /// at least this long.
        std::uint32_t rcv_mss = 0;
        std::map<std::uint32_t, Bytes> reorder;

        std::optional<SimTime> rto_deadline;
        SimTime rto{};
        std::uint32_t nrtx = 0;
        std::optional<SimTime> time_wait_deadline;

        std::uint64_t bytes_received = 0;
        std::uint64_t bytes_acked = 0;
        std::uint64_t data_segments_sent = 0;
        std::uint64_t data_segments_retransmitted = 0;
        std::uint64_t data_segments_acked = 0;
        std::uint64_t data_segments_received = 0;
        std::uint64_t acks_sent = 0;
        std::uint64_t immediate_acks = 0;
        std::uint64_t delayed_acks = 0;
        std::uint64_t duplicate_acks = 0;
        std::optional<CloseReason> close_reason;
        /// End sequence of each first transmission not yet acknowledged.
        std::deque<std::uint32_t> segment_ends;

        std::uint32_t bytes_in_flight() const { return snd_nxt - snd_una; }
    };

    struct Stats
    {
        std::uint64_t rx_packets = 0;
        std::uint64_t tx_packets = 0;
        std::uint64_t checksum_drops = 0;
        std::uint64_t malformed_drops = 0;
        std::uint64_t not_for_us_drops = 0;
        std::uint64_t rst_sent = 0;
        std::uint64_t udp_received = 0;
        std::uint64_t udp_bytes_received = 0;
        std::uint64_t udp_drops = 0;
    };

    class Stack;

    struct Callbacks
    {
        std::function<void(Stack &, ConnId)> connected;
        std::function<void(Stack &, ConnId, ByteView)> data;
        std::function<void(Stack &, ConnId, std::size_t)> acked;
        std::function<void(Stack &, ConnId)> peer_closed;
        std::function<void(Stack &, ConnId, CloseReason)> closed;
        std::function<void(Stack &, const UdpDatagram &)> udp;
    };

    class Stack
    {
    public:
        explicit Stack(Config config);

        const Config &config() const { return config_; }
        void set_output(std::function<void(ByteView)> sink) { output_ = std::move(sink); }
        void set_callbacks(Callbacks cb) { callbacks_ = std::move(cb); }

        void listen(std::uint16_t port);
        void udp_bind(std::uint16_t port);
        ConnId connect(Ipv4Addr addr, std::uint16_t port, SimTime now);

        /// Queues data and transmits as much as both windows allow.
        void send(ConnId id, ByteView data, SimTime now);
        void close(ConnId id, SimTime now);
        void send_udp(Ipv4Addr dst, std::uint16_t src_port, std::uint16_t dst_port, ByteView data);

        /// Parses and dispatches one received IP packet.
        void input(ByteView packet, SimTime now);
        /// Segment processing for an already-parsed, checksum-valid segment.
        void process_segment(ConnId id, const TcpSegment &seg, SimTime now);

        /// Emits the pending ACK if its deadline has passed. Returns whether an
        /// ACK went out.
        bool on_delayed_ack_timer(ConnId id, SimTime now);
        /// Runs every expired delayed-ACK deadline.
        void on_delayed_ack_timers(SimTime now);
        /// Runs every expired retransmission and TIME_WAIT deadline.
        void on_retransmit_timers(SimTime now);

        std::optional<SimTime> next_delayed_ack_deadline() const;
        std::optional<SimTime> next_retransmit_deadline() const;

        const Connection &connection(ConnId id) const { return conns_.at(id); }
        std::size_t connection_count() const { return conns_.size(); }
        const Stats &stats() const { return stats_; }

    private:
        std::optional<ConnId> find(const TcpSegment &seg) const;
        void accept_syn(const TcpSegment &seg, SimTime now);
        void try_send(ConnId id, SimTime now);
        void send_segment(Connection &c, std::uint32_t seq, std::uint8_t flags, ByteView payload, bool mss_opt);
        void send_ack(Connection &c);
        void send_reset(const TcpSegment &seg);
        void handle_data(ConnId id, const TcpSegment &seg, SimTime now);
        void handle_ack(ConnId id, const TcpSegment &seg, SimTime now);
        void enter_closed(ConnId id, CloseReason reason);
        void arm_rto(Connection &c, SimTime now);
        void retransmit(ConnId id, SimTime now);

        Config config_;
        Rng isn_rng_;
        std::vector<Connection> conns_;
        std::vector<std::uint16_t> listen_ports_;
        std::vector<std::uint16_t> udp_ports_;
        std::function<void(ByteView)> output_;
        Callbacks callbacks_;
        Stats stats_;
        std::uint16_t lastport_ = 49151;
        std::uint16_t ip_id_ = 0;
    };
}
