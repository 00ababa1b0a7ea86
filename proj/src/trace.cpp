#include "nsc/trace.hpp"

#include <algorithm>
#include <iterator>
#include <tuple>

namespace nsc::trace
{
    namespace
    {
        void put32le(Bytes &out, std::uint32_t v)
        {
            for (int i = 0; i < 4; ++i)
            {
                out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
            }
        }

        void put16le(Bytes &out, std::uint16_t v)
        {
            out.push_back(static_cast<std::uint8_t>(v));
            out.push_back(static_cast<std::uint8_t>(v >> 8));
        }

        Bytes record_header(SimTime t, std::size_t len)
        {
            Bytes h;
            h.reserve(kRecordHeaderLen);
            put32le(h, static_cast<std::uint32_t>(t.micros / 1'000'000));
            put32le(h, static_cast<std::uint32_t>(t.micros % 1'000'000));
            put32le(h, static_cast<std::uint32_t>(len));
            put32le(h, static_cast<std::uint32_t>(len));
            return h;
        }

        std::uint32_t get32(ByteView b, std::size_t off, bool swapped)
        {
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i)
            {
                const std::size_t k = swapped ? off + 3 - i : off + i;
                v |= std::uint32_t{b[k]} << (8 * i);
            }
            return v;
        }

        const char *dir_name(Direction d)
        {
            return d == Direction::AtoB ? "A>B" : "B>A";
        }
    }

    Bytes pcap_global_header()
    {
        Bytes h;
        h.reserve(kGlobalHeaderLen);
        put32le(h, kPcapMagic);
        put16le(h, 2);
        put16le(h, 4);
        put32le(h, 0); // thiszone
        put32le(h, 0); // sigfigs
        put32le(h, kSnaplen);
        put32le(h, kLinktypeRaw);
        return h;
    }

    Bytes encode_pcap(const std::vector<Record> &records)
    {
        Bytes out = pcap_global_header();
        SimTime last{};
        for (std::size_t i = 0; i < records.size(); ++i)
        {
            const auto &r = records[i];
            if (r.time < last)
            {
                throw Error(Errc::NonMonotonicTimestamp, "record " + std::to_string(i) + " goes back in time");
            }
            last = r.time;
            const Bytes h = record_header(r.time, r.bytes.size());
            out.insert(out.end(), h.begin(), h.end());
            out.insert(out.end(), r.bytes.begin(), r.bytes.end());
        }
        return out;
    }

    PcapWriter::PcapWriter(const std::filesystem::path &path) : path_(path)
    {
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_)
        {
            throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
        }
        const Bytes h = pcap_global_header();
        out_.write(reinterpret_cast<const char *>(h.data()), static_cast<std::streamsize>(h.size()));
        open_ = true;
    }

    PcapWriter::~PcapWriter()
    {
        if (open_)
        {
            out_.close();
        }
    }

    void PcapWriter::write(SimTime time, ByteView packet)
    {
        if (!open_)
        {
            throw Error(Errc::Io, path_.string() + " is closed");
        }
        if (time < last_)
        {
            throw Error(Errc::NonMonotonicTimestamp, "write at " + std::to_string(time.micros) + " us after " +
                                                         std::to_string(last_.micros) + " us");
        }
        last_ = time;
        const Bytes h = record_header(time, packet.size());
        out_.write(reinterpret_cast<const char *>(h.data()), static_cast<std::streamsize>(h.size()));
        out_.write(reinterpret_cast<const char *>(packet.data()), static_cast<std::streamsize>(packet.size()));
        if (!out_)
        {
            throw Error(Errc::Io, "write to " + path_.string() + " failed");
        }
        ++records_;
    }

    void PcapWriter::close()
    {
        if (!open_)
        {
            return;
        }
        open_ = false;
        out_.flush();
        const bool ok = static_cast<bool>(out_);
        out_.close();
        if (!ok)
        {
            throw Error(Errc::Io, "flush of " + path_.string() + " failed");
        }
    }

    std::vector<Record> parse_pcap(ByteView file)
    {
        if (file.size() < kGlobalHeaderLen)
        {
            throw Error(Errc::BadMagic, "file shorter than a pcap global header");
        }
        bool swapped = false;
        const std::uint32_t magic = get32(file, 0, false);
        if (magic == 0xd4c3b2a1)
        {
            swapped = true;
        }
        else if (magic != kPcapMagic)
        {
            throw Error(Errc::BadMagic, "unrecognized magic");
        }
        const std::uint32_t linktype = get32(file, 20, swapped);
        if (linktype != kLinktypeRaw)
        {
            throw Error(Errc::UnsupportedLinktype, "linktype " + std::to_string(linktype) + ", expected 101");
        }

        std::vector<Record> out;
        std::size_t off = kGlobalHeaderLen;
        while (off < file.size())
        {
            const std::size_t index = out.size();
            if (file.size() - off < kRecordHeaderLen)
            {
                throw Error(Errc::TruncatedRecord, "record " + std::to_string(index) + ": header cut short");
            }
            const std::uint64_t sec = get32(file, off, swapped);
            const std::uint64_t usec = get32(file, off + 4, swapped);
            const std::size_t incl = get32(file, off + 8, swapped);
            off += kRecordHeaderLen;
            if (file.size() - off < incl)
            {
                throw Error(Errc::TruncatedRecord, "record " + std::to_string(index) + ": " +
                                                       std::to_string(file.size() - off) + " of " +
                                                       std::to_string(incl) + " bytes present");
            }
            Record r;
            r.time = SimTime::us(sec * 1'000'000 + usec);
            r.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(off),
                           file.begin() + static_cast<std::ptrdiff_t>(off + incl));
            off += incl;
            out.push_back(std::move(r));
        }
        return out;
    }

    std::vector<Record> trace_read(const std::filesystem::path &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
            throw Error(Errc::Io, "cannot open " + path.string());
        }
        const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return parse_pcap(data);
    }

    // Normalization ----------------------------------------------------------

    std::string NormalizedPacket::to_string() const
    {
        std::string s = dir_name(direction);
        s += proto == kProtoTcp ? " TCP " : " UDP ";
        if (proto == kProtoTcp)
        {
            s += tcp_flags_string(tcp_flags) + " seq=" + std::to_string(rel_seq) + " ack=" + std::to_string(rel_ack) +
                 " ";
        }
        s += "len=" + std::to_string(payload_len);
        s += src_port_class == PortClass::Ephemeral ? " sport=eph" : " sport=fixed";
        return s;
    }

    std::vector<NormalizedPacket> normalize(const std::vector<Record> &trace, std::optional<Ipv4Addr> endpoint_a)
    {
        struct Side
        {
            Ipv4Addr addr;
            std::uint16_t port = 0;
            std::optional<std::uint32_t> isn;
        };
        std::optional<std::uint8_t> proto;
        Side a, b;
        std::optional<Direction> initiator;
        std::vector<NormalizedPacket> out;
        out.reserve(trace.size());

        for (std::size_t i = 0; i < trace.size(); ++i)
        {
            const auto r = parse_packet(trace[i].bytes);
            if (r.status != ParseStatus::Ok)
            {
                throw Error(Errc::MalformedPacket, "record " + std::to_string(i) + " is not a valid TCP/UDP packet");
            }
            const auto &p = r.packet;
            const std::uint8_t pr = p.tcp ? kProtoTcp : kProtoUdp;
            const Ipv4Addr src = p.ip.src, dst = p.ip.dst;
            const std::uint16_t sport = p.tcp ? p.tcp->src_port : p.udp->src_port;
            const std::uint16_t dport = p.tcp ? p.tcp->dst_port : p.udp->dst_port;

            if (!proto)
            {
                proto = pr;
                const bool src_is_a = endpoint_a ? src == *endpoint_a : true;
                if (endpoint_a && !(src == *endpoint_a) && !(dst == *endpoint_a))
                {
                    throw Error(Errc::MultipleFlows, "record 0 does not involve " + endpoint_a->to_string());
                }
                a = src_is_a ? Side{src, sport, {}} : Side{dst, dport, {}};
                b = src_is_a ? Side{dst, dport, {}} : Side{src, sport, {}};
            }
            Direction dir;
            if (pr == *proto && src == a.addr && sport == a.port && dst == b.addr && dport == b.port)
            {
                dir = Direction::AtoB;
            }
            else if (pr == *proto && src == b.addr && sport == b.port && dst == a.addr && dport == a.port)
            {
                dir = Direction::BtoA;
            }
            else
            {
                throw Error(Errc::MultipleFlows, "record " + std::to_string(i) + " belongs to a second flow");
            }
            Side &me = dir == Direction::AtoB ? a : b;
            Side &peer = dir == Direction::AtoB ? b : a;

            NormalizedPacket n;
            n.direction = dir;
            n.proto = pr;
            if (p.tcp)
            {
                const auto &t = *p.tcp;
                if (!me.isn)
                {
                    me.isn = t.seq;
                }
                if (!initiator && (t.flags & (tcp_flags::SYN | tcp_flags::ACK)) == tcp_flags::SYN)
                {
                    initiator = dir;
                }
                n.tcp_flags = t.flags;
                n.rel_seq = t.seq - *me.isn;
                if (t.flags & tcp_flags::ACK)
                {
                    if (!peer.isn)
                    {
                        // Peer not yet seen: treat the acknowledged point as its ISN + 1.
                        peer.isn = t.ack - 1;
                    }
                    n.rel_ack = t.ack - *peer.isn;
                }
                n.payload_len = static_cast<std::uint32_t>(t.payload.size());
            }
            else
            {
                n.payload_len = static_cast<std::uint32_t>(p.udp->payload.size());
            }
            out.push_back(n);
        }
        // The connection initiator (or, lacking a SYN, the first sender) owns the ephemeral port.
        const Direction eph = initiator.value_or(Direction::AtoB);
        for (auto &n : out)
        {
            n.src_port_class = n.direction == eph ? PortClass::Ephemeral : PortClass::Fixed;
        }
        return out;
    }

    std::vector<Record> synthesize(const std::vector<NormalizedPacket> &packets)
    {
        const Ipv4Addr addr_a{0x0a000001}, addr_b{0x0a000002};
        std::vector<Record> out;
        std::uint16_t ip_id = 0;
        for (std::size_t i = 0; i < packets.size(); ++i)
        {
            const auto &n = packets[i];
            const bool ab = n.direction == Direction::AtoB;
            const bool src_eph = n.src_port_class == PortClass::Ephemeral;
            const std::uint16_t sport = src_eph ? 49152 : 80;
            const std::uint16_t dport = src_eph ? 80 : 49152;
            Record r;
            r.time = SimTime::us(i);
            if (n.proto == kProtoTcp)
            {
                TcpSegment s;
                s.src = ab ? addr_a : addr_b;
                s.dst = ab ? addr_b : addr_a;
                s.src_port = sport;
                s.dst_port = dport;
                s.seq = n.rel_seq;
                s.ack = n.rel_ack;
                s.flags = n.tcp_flags;
                s.window = 1000;
                s.payload.assign(n.payload_len, 0);
                r.bytes = build_tcp_packet(s, ip_id++);
            }
            else
            {
                UdpDatagram d;
                d.src = ab ? addr_a : addr_b;
                d.dst = ab ? addr_b : addr_a;
                d.src_port = sport;
                d.dst_port = dport;
                d.payload.assign(n.payload_len, 0);
                r.bytes = build_udp_packet(d, ip_id++, true);
            }
            out.push_back(std::move(r));
        }
        return out;
    }

    std::string Verdict::describe() const
    {
        switch (kind)
        {
        case Kind::Equal:
            return "equal (" + std::to_string(len_a) + " packets)";
        case Kind::FirstDivergence:
            return "first divergence at packet " + std::to_string(index) + ":\n  a: " + a->to_string() +
                   "\n  b: " + b->to_string();
        case Kind::LengthMismatch:
            return "length mismatch: a has " + std::to_string(len_a) + " packets, b has " + std::to_string(len_b);
        }
        return {};
    }

    Verdict trace_compare(const std::vector<NormalizedPacket> &a, const std::vector<NormalizedPacket> &b)
    {
        Verdict v;
        v.len_a = a.size();
        v.len_b = b.size();
        const std::size_t n = std::min(a.size(), b.size());
        for (std::size_t i = 0; i < n; ++i)
        {
            if (!(a[i] == b[i]))
            {
                v.kind = Verdict::Kind::FirstDivergence;
                v.index = i;
                v.a = a[i];
                v.b = b[i];
                return v;
            }
        }
        if (a.size() != b.size())
        {
            v.kind = Verdict::Kind::LengthMismatch;
            v.index = n;
        }
        return v;
    }
}
