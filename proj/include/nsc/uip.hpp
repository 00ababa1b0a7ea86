#pragma once

// Model of the uIP micro TCP/IP stack: one shared packet buffer used for both
// input and output, at most one unacknowledged TCP segment per connection,
// retransmission driven by a periodic timer, and an event-callback
// application interface in which the application regenerates data on
// retransmission instead of the stack keeping a copy.

#include "nsc/sim.hpp"
#include "nsc/wire.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nsc::uip
{
    struct Config
    {
        std::uint32_t max_connections = 40;
        std::uint32_t max_listen_ports = 40;
        std::uint32_t max_udp_connections = 10;
        std::uint32_t buffer_size = 400;
        std::uint32_t packetbuf_size = 400;
        bool tcp_enabled = true;
        bool udp_enabled = true;
        bool udp_checksums = true;
        bool tcp_split = false;
        SimTime periodic_interval = SimTime::ms(500);
        std::uint32_t max_retransmissions = 8;
        /// In periodic intervals.
        std::uint32_t initial_rto = 3;
        std::uint32_t max_rto = 16;
        std::uint32_t time_wait_periods = 2;
        Ipv4Addr host_addr{0x0a000001};

        /// IPv4 (20) + TCP (20) headers, no options on data segments.
        std::uint32_t mss() const { return buffer_size - 40; }

        /// Throws InvalidConfig naming the first violated constraint.
        void validate() const;
    };

    using ConnHandle = std::uint16_t;
    using UdpHandle = std::uint16_t;

    enum class Cause
    {
        Input,
        Timer,
        Poll,
    };

    namespace app_flags
    {
        inline constexpr std::uint8_t connected = 0x01;
        inline constexpr std::uint8_t newdata = 0x02;
        inline constexpr std::uint8_t acked = 0x04;
        inline constexpr std::uint8_t rexmit = 0x08;
        inline constexpr std::uint8_t poll = 0x10;
        inline constexpr std::uint8_t closed = 0x20;
        inline constexpr std::uint8_t aborted = 0x40;
        inline constexpr std::uint8_t timedout = 0x80;
    }

    std::string app_flags_string(std::uint8_t flags);

    struct AppEvent
    {
        std::uint8_t flags = 0;
        /// Points into the packet buffer; valid only for the callback's duration
        /// and overwritten by app_send.
        ByteView data;
    };

    struct UdpAppEvent
    {
        std::uint8_t flags = 0;
        ByteView data;
        Ipv4Addr src;
        std::uint16_t src_port = 0;
    };

    struct PacketBuffer
    {
        Bytes data;
        std::size_t len = 0;

        ByteView view() const { return ByteView(data.data(), len); }
    };

    struct Connection
    {
        std::uint16_t local_port = 0, remote_port = 0;
        Ipv4Addr remote_addr;
        TcpState state = TcpState::Closed;
        /// Sequence number of the first unacknowledged byte we sent.
        std::uint32_t snd_nxt = 0;
        std::uint32_t rcv_nxt = 0;
        /// Unacknowledged sequence space: payload bytes, or 1 for SYN/FIN.
        std::uint16_t inflight_len = 0;
        /// Whether inflight_len counts payload (as opposed to a SYN or FIN).
        bool inflight_is_data = false;
        /// Wire segments carrying the in-flight payload: 1, or 2 when split.
        std::uint8_t inflight_segments = 0;
        std::uint32_t rto_periods = 0;
        /// Periods remaining before expiry (or elapsed, in TIME_WAIT/FIN_WAIT_2).
        std::uint32_t timer = 0;
        std::uint32_t nrtx = 0;
        std::uint16_t mss = 0;
        std::uint16_t initial_mss = 0;
        bool close_requested = false;

        // Per-connection accounting, in wire segments (split halves count as two).
        std::uint64_t data_segments_sent = 0;
        std::uint64_t data_segments_retransmitted = 0;
        std::uint64_t data_segments_acked = 0;
        std::uint64_t data_segments_abandoned = 0;
        std::uint64_t bytes_acked = 0;
        std::uint64_t bytes_received = 0;
        bool timed_out = false;

        bool outstanding() const { return inflight_len > 0; }
    };

    struct UdpConnection
    {
        bool used = false;
        Ipv4Addr remote_addr;
        std::uint16_t local_port = 0, remote_port = 0;
    };

    struct Stats
    {
        std::uint64_t rx_packets = 0;
        std::uint64_t tx_packets = 0;
        std::uint64_t checksum_drops = 0;
        std::uint64_t too_large_drops = 0;
        std::uint64_t malformed_drops = 0;
        std::uint64_t not_for_us_drops = 0;
        std::uint64_t syn_drops = 0;
        std::uint64_t out_of_order_drops = 0;
        std::uint64_t rst_sent = 0;
        std::uint64_t udp_drops = 0;
        std::uint64_t retransmissions = 0;
        std::uint64_t timeouts = 0;
    };

    class Stack;

    using TcpAppCallback = std::function<void(Stack &, ConnHandle, const AppEvent &)>;
    using UdpAppCallback = std::function<void(Stack &, UdpHandle, const UdpAppEvent &)>;
    /// Receives every outgoing IP packet (the link-layer output driver).
    using OutputSink = std::function<void(ByteView)>;

    class Stack
    {
    public:
        explicit Stack(Config config);

        Stack(const Stack &) = delete;
        Stack &operator=(const Stack &) = delete;

        const Config &config() const { return config_; }
        std::uint16_t mss() const { return static_cast<std::uint16_t>(config_.mss()); }

        void set_output(OutputSink sink) { output_ = std::move(sink); }
        void set_tcp_app(TcpAppCallback cb) { tcp_app_ = std::move(cb); }
        void set_udp_app(UdpAppCallback cb) { udp_app_ = std::move(cb); }

        /// The single shared packet buffer.
        PacketBuffer &buffer() { return buf_; }
        const PacketBuffer &buffer() const { return buf_; }

        /// One processing pass. Input consumes the buffer; Timer and Poll act on
        /// `conn`. Any output is left in the buffer (buffer().len > 0); returns
        /// whether there is output.
        bool process(Cause cause, ConnHandle conn = 0);
        bool process_udp(Cause cause, UdpHandle conn);

        /// Hands buffered output (split into two halves when configured) to the
        /// output sink and empties the buffer. Returns the number of packets.
        int flush();

        /// Copies `frame` into the buffer, processes it, flushes output.
        void input(ByteView frame, SimTime now);
        /// uip_periodic over every TCP connection then every UDP endpoint.
        void periodic(SimTime now);
        /// Polls one connection (also emits a pending SYN after tcp_connect).
        void poll(ConnHandle conn, SimTime now);
        void poll_udp(UdpHandle conn, SimTime now);

        ConnHandle tcp_connect(Ipv4Addr addr, std::uint16_t port);
        void tcp_listen(std::uint16_t port);
        void tcp_unlisten(std::uint16_t port);
        bool is_listening(std::uint16_t port) const;
        UdpHandle udp_new(Ipv4Addr addr, std::uint16_t remote_port);
        void udp_bind(UdpHandle conn, std::uint16_t local_port);
        void udp_remove(UdpHandle conn);

        // Application calls, valid only inside a callback for the current connection.

        /// Accepts min(len, mss) bytes when nothing is in flight; during a
        /// rexmit callback, refills the in-flight segment instead.
        std::size_t app_send(ConnHandle conn, ByteView data);
        void app_close(ConnHandle conn);
        void app_abort(ConnHandle conn);
        void udp_send(UdpHandle conn, ByteView data);

        const Connection &connection(ConnHandle conn) const;
        const UdpConnection &udp_connection(UdpHandle conn) const;
        std::size_t connection_slots() const { return conns_.size(); }
        std::size_t open_connections() const;
        std::size_t listener_count() const;
        const Stats &stats() const { return stats_; }
        Stats &stats() { return stats_; }
        std::uint32_t iss() const { return iss_; }
        SimTime now() const { return now_; }

    private:
        enum class Send
        {
            None,
            Syn,
            SynAck,
            Ack,
            Data,
            FinAck,
            RstAck,
        };

        bool process_input();
        bool process_tcp_input(const ParsedPacket &pkt, std::size_t payload_off, std::size_t payload_len);
        bool process_udp_input(const ParsedPacket &pkt, std::size_t payload_off, std::size_t payload_len);
        bool process_timer(ConnHandle c);
        bool process_poll(ConnHandle c);
        bool reset_reply(const TcpSegment &in, std::size_t payload_len);
        bool app_call_then_send(ConnHandle c, std::uint8_t flags, ByteView data);
        bool emit(ConnHandle c, Send what);
        bool emit_udp(UdpHandle u);
        bool retransmit(ConnHandle c);
        void write_header(const Connection &conn, std::uint32_t seq, std::uint8_t flags, std::size_t payload_len,
                          bool with_mss);
        std::optional<ConnHandle> alloc_connection();
        void invoke_tcp_app(ConnHandle c, std::uint8_t flags, ByteView data);
        void abandon_inflight(Connection &conn);

        Config config_;
        PacketBuffer buf_;
        std::vector<Connection> conns_;
        std::vector<std::uint16_t> listen_ports_;
        std::vector<UdpConnection> udp_conns_;
        OutputSink output_;
        TcpAppCallback tcp_app_;
        UdpAppCallback udp_app_;
        Stats stats_;
        std::uint32_t iss_ = 0;
        std::uint16_t lastport_ = 1024;
        std::uint16_t ip_id_ = 0;
        SimTime now_{};

        // Per-callback scratch, the uip_flags / uip_slen / uip_conn of uIP.
        std::optional<ConnHandle> current_;
        std::optional<UdpHandle> current_udp_;
        std::uint8_t app_flags_ = 0;
        std::size_t slen_ = 0;
        bool abort_requested_ = false;
        Ipv4Addr udp_reply_addr_;
        std::uint16_t udp_reply_port_ = 0;
        // TCP segment pending split in flush(); set by emit() for full data segments.
        bool split_pending_ = false;
    };
}
