#pragma once

#include "nsc/sim.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace nsc
{
    /// Ones-complement of the ones-complement sum of big-endian 16-bit words.
    /// An odd trailing byte is padded with zero. `initial` is an uncomplemented
    /// partial sum (e.g. of a pseudo-header) folded into the result.
    std::uint16_t internet_checksum(ByteView data, std::uint16_t initial = 0);

    /// Folded, uncomplemented 16-bit ones-complement sum. Feeding the result
    /// to internet_checksum as `initial` chains sums.
    std::uint16_t ones_complement_sum(ByteView data, std::uint16_t initial = 0);

    struct Ipv4Addr
    {
        std::uint32_t value = 0;

        static std::optional<Ipv4Addr> parse(std::string_view text);
        std::string to_string() const;

        constexpr auto operator<=>(const Ipv4Addr &) const = default;
    };

    namespace tcp_flags
    {
        inline constexpr std::uint8_t FIN = 0x01;
        inline constexpr std::uint8_t SYN = 0x02;
        inline constexpr std::uint8_t RST = 0x04;
        inline constexpr std::uint8_t PSH = 0x08;
        inline constexpr std::uint8_t ACK = 0x10;
        inline constexpr std::uint8_t URG = 0x20;
    }

    std::string tcp_flags_string(std::uint8_t flags);

    enum class TcpState : std::uint8_t
    {
        Closed,
        Listen,
        SynSent,
        SynRcvd,
        Established,
        FinWait1,
        FinWait2,
        Closing,
        TimeWait,
        LastAck,
        CloseWait,
    };

    const char *tcp_state_name(TcpState state) noexcept;

    /// Modular sequence-space comparisons.
    inline bool seq_lt(std::uint32_t a, std::uint32_t b) { return static_cast<std::int32_t>(a - b) < 0; }
    inline bool seq_leq(std::uint32_t a, std::uint32_t b) { return static_cast<std::int32_t>(a - b) <= 0; }

    inline constexpr std::uint8_t kProtoTcp = 6;
    inline constexpr std::uint8_t kProtoUdp = 17;
    inline constexpr std::size_t kIpv4HeaderLen = 20;
    inline constexpr std::size_t kTcpHeaderLen = 20;
    inline constexpr std::size_t kUdpHeaderLen = 8;

    struct TcpSegment
    {
        Ipv4Addr src, dst;
        std::uint16_t src_port = 0, dst_port = 0;
        std::uint32_t seq = 0, ack = 0;
        std::uint8_t flags = 0;
        std::uint16_t window = 0;
        std::optional<std::uint16_t> mss_option;
        Bytes payload;
    };

    struct UdpDatagram
    {
        Ipv4Addr src, dst;
        std::uint16_t src_port = 0, dst_port = 0;
        /// Raw checksum field as found on the wire (0 = not computed).
        std::uint16_t checksum = 0;
        Bytes payload;
    };

    struct IpHeader
    {
        Ipv4Addr src, dst;
        std::uint8_t protocol = 0;
        std::uint8_t ttl = 64;
        std::uint16_t id = 0;
        std::uint16_t total_len = 0;
    };

    /// Writes a complete IPv4+TCP packet into `out` and returns its length.
    /// Throws MalformedPacket if `out` is too small.
    std::size_t write_tcp_packet(std::span<std::uint8_t> out, const TcpSegment &seg, std::uint16_t ip_id);
    Bytes build_tcp_packet(const TcpSegment &seg, std::uint16_t ip_id = 0);

    std::size_t write_udp_packet(std::span<std::uint8_t> out, const UdpDatagram &dgram, std::uint16_t ip_id,
                                 bool with_checksum);
    Bytes build_udp_packet(const UdpDatagram &dgram, std::uint16_t ip_id = 0, bool with_checksum = true);

    struct ParsedPacket
    {
        IpHeader ip;
        std::optional<TcpSegment> tcp;
        std::optional<UdpDatagram> udp;
    };

    enum class ParseStatus
    {
        Ok,
        Malformed,
        BadChecksum,
        UnsupportedProtocol,
    };

    struct ParseResult
    {
        ParseStatus status = ParseStatus::Malformed;
        ParsedPacket packet;
    };

    /// Parses an IPv4 packet carrying TCP or UDP and verifies every checksum
    /// present (UDP checksum 0 means "none").
    ParseResult parse_packet(ByteView bytes);

    /// Pseudo-header partial sum for TCP/UDP checksums.
    std::uint16_t pseudo_header_sum(Ipv4Addr src, Ipv4Addr dst, std::uint8_t protocol, std::uint16_t length);

    /// True iff the IP header and the transport checksum (if any) fold to zero.
    bool checksums_verify(ByteView packet);

    inline std::uint16_t load16(ByteView b, std::size_t at)
    {
        return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
    }

    inline std::uint32_t load32(ByteView b, std::size_t at)
    {
        return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
               std::uint32_t{b[at + 3]};
    }

    inline void store16(std::span<std::uint8_t> b, std::size_t at, std::uint16_t v)
    {
        b[at] = static_cast<std::uint8_t>(v >> 8);
        b[at + 1] = static_cast<std::uint8_t>(v);
    }

    inline void store32(std::span<std::uint8_t> b, std::size_t at, std::uint32_t v)
    {
        b[at] = static_cast<std::uint8_t>(v >> 24);
        b[at + 1] = static_cast<std::uint8_t>(v >> 16);
        b[at + 2] = static_cast<std::uint8_t>(v >> 8);
        b[at + 3] = static_cast<std::uint8_t>(v);
    }
}
