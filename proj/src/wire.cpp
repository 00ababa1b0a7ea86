#include "nsc/wire.hpp"

#include <charconv>

namespace nsc
{
    std::uint16_t ones_complement_sum(ByteView data, std::uint16_t initial)
    {
        std::uint64_t sum = initial;
        std::size_t i = 0;
        for (; i + 1 < data.size(); i += 2)
        {
            sum += (std::uint32_t{data[i]} << 8) | data[i + 1];
        }
        if (i < data.size())
        {
            sum += std::uint32_t{data[i]} << 8;
        }
        while (sum >> 16)
        {
            sum = (sum & 0xffff) + (sum >> 16);
        }
        return static_cast<std::uint16_t>(sum);
    }

    std::uint16_t internet_checksum(ByteView data, std::uint16_t initial)
    {
        return static_cast<std::uint16_t>(~ones_complement_sum(data, initial));
    }

    std::optional<Ipv4Addr> Ipv4Addr::parse(std::string_view text)
    {
        std::uint32_t value = 0;
        const char *p = text.data();
        const char *end = text.data() + text.size();
        for (int octet = 0; octet < 4; ++octet)
        {
            unsigned v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{} || next == p || v > 255)
            {
                return std::nullopt;
            }
            value = (value << 8) | v;
            p = next;
            if (octet < 3)
            {
                if (p == end || *p != '.')
                {
                    return std::nullopt;
                }
                ++p;
            }
        }
        if (p != end)
        {
            return std::nullopt;
        }
        return Ipv4Addr{value};
    }

    std::string Ipv4Addr::to_string() const
    {
        return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xff) + "." +
               std::to_string((value >> 8) & 0xff) + "." + std::to_string(value & 0xff);
    }

    std::string tcp_flags_string(std::uint8_t flags)
    {
        static constexpr std::pair<std::uint8_t, const char *> names[] = {
            {tcp_flags::SYN, "SYN"}, {tcp_flags::FIN, "FIN"}, {tcp_flags::RST, "RST"},
            {tcp_flags::PSH, "PSH"}, {tcp_flags::ACK, "ACK"}, {tcp_flags::URG, "URG"},
        };
        std::string out;
        for (const auto &[bit, name] : names)
        {
            if (flags & bit)
            {
                if (!out.empty())
                {
                    out += '+';
                }
                out += name;
            }
        }
        return out.empty() ? "-" : out;
    }

    const char *tcp_state_name(TcpState state) noexcept
    {
        switch (state)
        {
        case TcpState::Closed: return "CLOSED";
        case TcpState::Listen: return "LISTEN";
        case TcpState::SynSent: return "SYN_SENT";
        case TcpState::SynRcvd: return "SYN_RCVD";
        case TcpState::Established: return "ESTABLISHED";
        case TcpState::FinWait1: return "FIN_WAIT_1";
        case TcpState::FinWait2: return "FIN_WAIT_2";
        case TcpState::Closing: return "CLOSING";
        case TcpState::TimeWait: return "TIME_WAIT";
        case TcpState::LastAck: return "LAST_ACK";
        case TcpState::CloseWait: return "CLOSE_WAIT";
        }
        return "?";
    }

    std::uint16_t pseudo_header_sum(Ipv4Addr src, Ipv4Addr dst, std::uint8_t protocol, std::uint16_t length)
    {
        std::uint8_t pseudo[12];
        std::span<std::uint8_t> p(pseudo);
        store32(p, 0, src.value);
        store32(p, 4, dst.value);
        pseudo[8] = 0;
        pseudo[9] = protocol;
        store16(p, 10, length);
        return ones_complement_sum(ByteView(pseudo, 12));
    }

    namespace
    {
        void write_ip_header(std::span<std::uint8_t> out, Ipv4Addr src, Ipv4Addr dst, std::uint8_t proto,
                             std::uint16_t total_len, std::uint16_t ip_id)
        {
            out[0] = 0x45;
            out[1] = 0;
            store16(out, 2, total_len);
            store16(out, 4, ip_id);
            store16(out, 6, 0);
            out[8] = 64;
            out[9] = proto;
            store16(out, 10, 0);
            store32(out, 12, src.value);
            store32(out, 16, dst.value);
            store16(out, 10, internet_checksum(ByteView(out.data(), kIpv4HeaderLen)));
        }
    }

    std::size_t write_tcp_packet(std::span<std::uint8_t> out, const TcpSegment &seg, std::uint16_t ip_id)
    {
        const std::size_t opt_len = seg.mss_option ? 4 : 0;
        const std::size_t tcp_len = kTcpHeaderLen + opt_len + seg.payload.size();
        const std::size_t total = kIpv4HeaderLen + tcp_len;
        if (out.size() < total || total > 0xffff)
        {
            throw Error(Errc::MalformedPacket, "TCP packet of " + std::to_string(total) + " bytes does not fit");
        }
        auto tcp = out.subspan(kIpv4HeaderLen, tcp_len);
        store16(tcp, 0, seg.src_port);
        store16(tcp, 2, seg.dst_port);
        store32(tcp, 4, seg.seq);
        store32(tcp, 8, seg.ack);
        tcp[12] = static_cast<std::uint8_t>(((kTcpHeaderLen + opt_len) / 4) << 4);
        tcp[13] = seg.flags;
        store16(tcp, 14, seg.window);
        store16(tcp, 16, 0);
        store16(tcp, 18, 0);
        if (seg.mss_option)
        {
            tcp[20] = 2;
            tcp[21] = 4;
            store16(tcp, 22, *seg.mss_option);
        }
        std::copy(seg.payload.begin(), seg.payload.end(), tcp.begin() + kTcpHeaderLen + opt_len);
        const auto pseudo = pseudo_header_sum(seg.src, seg.dst, kProtoTcp, static_cast<std::uint16_t>(tcp_len));
        store16(tcp, 16, internet_checksum(ByteView(tcp.data(), tcp.size()), pseudo));
        write_ip_header(out, seg.src, seg.dst, kProtoTcp, static_cast<std::uint16_t>(total), ip_id);
        return total;
    }

    Bytes build_tcp_packet(const TcpSegment &seg, std::uint16_t ip_id)
    {
        Bytes out(kIpv4HeaderLen + kTcpHeaderLen + (seg.mss_option ? 4 : 0) + seg.payload.size());
        write_tcp_packet(out, seg, ip_id);
        return out;
    }

    std::size_t write_udp_packet(std::span<std::uint8_t> out, const UdpDatagram &dgram, std::uint16_t ip_id,
                                 bool with_checksum)
    {
        const std::size_t udp_len = kUdpHeaderLen + dgram.payload.size();
        const std::size_t total = kIpv4HeaderLen + udp_len;
        if (out.size() < total || total > 0xffff)
        {
            throw Error(Errc::MalformedPacket, "UDP packet of " + std::to_string(total) + " bytes does not fit");
        }
        auto udp = out.subspan(kIpv4HeaderLen, udp_len);
        store16(udp, 0, dgram.src_port);
        store16(udp, 2, dgram.dst_port);
        store16(udp, 4, static_cast<std::uint16_t>(udp_len));
        store16(udp, 6, 0);
        std::copy(dgram.payload.begin(), dgram.payload.end(), udp.begin() + kUdpHeaderLen);
        if (with_checksum)
        {
            const auto pseudo =
                pseudo_header_sum(dgram.src, dgram.dst, kProtoUdp, static_cast<std::uint16_t>(udp_len));
            auto sum = internet_checksum(ByteView(udp.data(), udp.size()), pseudo);
            // A computed zero is transmitted as all ones; zero means "no checksum".
            store16(udp, 6, sum == 0 ? 0xffff : sum);
        }
        write_ip_header(out, dgram.src, dgram.dst, kProtoUdp, static_cast<std::uint16_t>(total), ip_id);
        return total;
    }

    Bytes build_udp_packet(const UdpDatagram &dgram, std::uint16_t ip_id, bool with_checksum)
    {
        Bytes out(kIpv4HeaderLen + kUdpHeaderLen + dgram.payload.size());
        write_udp_packet(out, dgram, ip_id, with_checksum);
        return out;
    }

    ParseResult parse_packet(ByteView bytes)
    {
        ParseResult r;
        if (bytes.size() < kIpv4HeaderLen || (bytes[0] >> 4) != 4)
        {
            return r;
        }
        const std::size_t ihl = std::size_t{bytes[0] & 0x0fu} * 4;
        const std::uint16_t total = load16(bytes, 2);
        if (ihl < kIpv4HeaderLen || total < ihl || total > bytes.size())
        {
            return r;
        }
        if (internet_checksum(bytes.first(ihl)) != 0)
        {
            r.status = ParseStatus::BadChecksum;
            return r;
        }
        auto &ip = r.packet.ip;
        ip.total_len = total;
        ip.id = load16(bytes, 4);
        ip.ttl = bytes[8];
        ip.protocol = bytes[9];
        ip.src.value = load32(bytes, 12);
        ip.dst.value = load32(bytes, 16);
        const auto body = bytes.subspan(ihl, total - ihl);

        if (ip.protocol == kProtoTcp)
        {
            if (body.size() < kTcpHeaderLen)
            {
                return r;
            }
            const std::size_t off = static_cast<std::size_t>(body[12] >> 4) * 4;
            if (off < kTcpHeaderLen || off > body.size())
            {
                return r;
            }
            const auto pseudo = pseudo_header_sum(ip.src, ip.dst, kProtoTcp, static_cast<std::uint16_t>(body.size()));
            if (internet_checksum(body, pseudo) != 0)
            {
                r.status = ParseStatus::BadChecksum;
                return r;
            }
            TcpSegment seg;
            seg.src = ip.src;
            seg.dst = ip.dst;
            seg.src_port = load16(body, 0);
            seg.dst_port = load16(body, 2);
            seg.seq = load32(body, 4);
            seg.ack = load32(body, 8);
            seg.flags = body[13] & 0x3f;
            seg.window = load16(body, 14);
            for (std::size_t i = kTcpHeaderLen; i < off;)
            {
                const auto kind = body[i];
                if (kind == 0)
                {
                    break;
                }
                if (kind == 1)
                {
                    ++i;
                    continue;
                }
                if (i + 1 >= off || body[i + 1] < 2 || i + body[i + 1] > off)
                {
                    return r;
                }
                if (kind == 2 && body[i + 1] == 4)
                {
                    seg.mss_option = load16(body, i + 2);
                }
                i += body[i + 1];
            }
            seg.payload.assign(body.begin() + off, body.end());
            r.packet.tcp = std::move(seg);
            r.status = ParseStatus::Ok;
            return r;
        }
        if (ip.protocol == kProtoUdp)
        {
            if (body.size() < kUdpHeaderLen || load16(body, 4) != body.size())
            {
                return r;
            }
            UdpDatagram d;
            d.src = ip.src;
            d.dst = ip.dst;
            d.src_port = load16(body, 0);
            d.dst_port = load16(body, 2);
            d.checksum = load16(body, 6);
            if (d.checksum != 0)
            {
                const auto pseudo =
                    pseudo_header_sum(ip.src, ip.dst, kProtoUdp, static_cast<std::uint16_t>(body.size()));
                if (internet_checksum(body, pseudo) != 0)
                {
                    r.status = ParseStatus::BadChecksum;
                    return r;
                }
            }
            d.payload.assign(body.begin() + kUdpHeaderLen, body.end());
            r.packet.udp = std::move(d);
            r.status = ParseStatus::Ok;
            return r;
        }
        r.status = ParseStatus::UnsupportedProtocol;
        return r;
    }

    bool checksums_verify(ByteView packet)
    {
        const auto r = parse_packet(packet);
        return r.status == ParseStatus::Ok || r.status == ParseStatus::UnsupportedProtocol;
    }
}
