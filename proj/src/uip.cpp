#include "nsc/uip.hpp"

#include <algorithm>
#include <cstring>

namespace nsc::uip
{
    namespace
    {
        constexpr std::size_t kTcpIpHeaderLen = kIpv4HeaderLen + kTcpHeaderLen;
        constexpr std::size_t kUdpIpHeaderLen = kIpv4HeaderLen + kUdpHeaderLen;
        constexpr std::uint8_t kCtlMask = 0x3f;

        void require(bool ok, const std::string &what)
        {
            if (!ok)
            {
                throw Error(Errc::InvalidConfig, what);
            }
        }

        // Rewrites the IP total length and both checksums of the packet at the
        // front of `buf`, whose transport header is already in place.
        void finalize(std::span<std::uint8_t> buf, std::size_t total, std::uint8_t proto, std::size_t csum_at)
        {
            store16(buf, 2, static_cast<std::uint16_t>(total));
            store16(buf, 10, 0);
            store16(buf, 10, internet_checksum(ByteView(buf.data(), kIpv4HeaderLen)));
            const Ipv4Addr src{load32(buf, 12)};
            const Ipv4Addr dst{load32(buf, 16)};
            const auto seg_len = static_cast<std::uint16_t>(total - kIpv4HeaderLen);
            store16(buf, kIpv4HeaderLen + csum_at, 0);
            const auto sum = internet_checksum(ByteView(buf.data() + kIpv4HeaderLen, seg_len),
                                               pseudo_header_sum(src, dst, proto, seg_len));
            store16(buf, kIpv4HeaderLen + csum_at, sum);
        }

        void write_ip(std::span<std::uint8_t> buf, Ipv4Addr src, Ipv4Addr dst, std::uint8_t proto, std::uint16_t id)
        {
            buf[0] = 0x45;
            buf[1] = 0;
            store16(buf, 4, id);
            store16(buf, 6, 0);
            buf[8] = 64;
            buf[9] = proto;
            store32(buf, 12, src.value);
            store32(buf, 16, dst.value);
        }
    }

    void Config::validate() const
    {
        require(buffer_size >= 60, "buffer_size must be >= 60 (IP+TCP headers plus 20 payload bytes)");
        require(buffer_size <= 0xffff, "buffer_size must fit a 16-bit IP length");
        require(packetbuf_size >= 60, "packetbuf_size must be >= 60");
        require(packetbuf_size <= 0xffff, "packetbuf_size must fit a 16-bit IP length");
        require(max_connections >= 1 && max_connections <= 0xffff, "max_connections must lie in [1, 65535]");
        require(max_listen_ports <= 0xffff, "max_listen_ports must be <= 65535");
        require(max_udp_connections <= 0xffff, "max_udp_connections must be <= 65535");
        require(periodic_interval.micros > 0, "periodic_interval must be positive");
        require(initial_rto >= 1, "initial_rto must be >= 1 period");
        require(max_rto >= initial_rto, "max_rto must be >= initial_rto");
        require(time_wait_periods >= 1, "time_wait_periods must be >= 1");
    }

    std::string app_flags_string(std::uint8_t flags)
    {
        static constexpr std::pair<std::uint8_t, const char *> names[] = {
            {app_flags::connected, "connected"}, {app_flags::newdata, "newdata"}, {app_flags::acked, "acked"},
            {app_flags::rexmit, "rexmit"},       {app_flags::poll, "poll"},       {app_flags::closed, "closed"},
            {app_flags::aborted, "aborted"},     {app_flags::timedout, "timedout"},
        };
        std::string out;
        for (const auto &[bit, name] : names)
        {
            if (flags & bit)
            {
                out += out.empty() ? "" : "|";
                out += name;
            }
        }
        return out;
    }

    Stack::Stack(Config config) : config_(std::move(config))
    {
        config_.validate();
        buf_.data.assign(config_.buffer_size, 0);
        conns_.resize(config_.max_connections);
        udp_conns_.resize(config_.max_udp_connections);
        listen_ports_.reserve(config_.max_listen_ports);
    }

    // Entry points -----------------------------------------------------------

    bool Stack::process(Cause cause, ConnHandle conn)
    {
        switch (cause)
        {
        case Cause::Input:
            return process_input();
        case Cause::Timer:
            if (conn >= conns_.size())
            {
                throw Error(Errc::InvalidConfig, "connection handle out of range");
            }
            buf_.len = 0;
            ++iss_;
            return process_timer(conn);
        case Cause::Poll:
            if (conn >= conns_.size())
            {
                throw Error(Errc::InvalidConfig, "connection handle out of range");
            }
            buf_.len = 0;
            return process_poll(conn);
        }
        return false;
    }

    bool Stack::process_udp(Cause cause, UdpHandle u)
    {
        buf_.len = 0;
        if (cause == Cause::Input || u >= udp_conns_.size() || !udp_conns_[u].used || !config_.udp_enabled)
        {
            return false;
        }
        udp_reply_addr_ = udp_conns_[u].remote_addr;
        udp_reply_port_ = udp_conns_[u].remote_port;
        current_udp_ = u;
        app_flags_ = app_flags::poll;
        slen_ = 0;
        if (udp_app_)
        {
            udp_app_(*this, u, UdpAppEvent{app_flags::poll, {}, {}, 0});
        }
        current_udp_.reset();
        return emit_udp(u);
    }

    void Stack::input(ByteView frame, SimTime now)
    {
        now_ = now;
        ++stats_.rx_packets;
        if (frame.size() > buf_.data.size())
        {
            ++stats_.too_large_drops;
            buf_.len = 0;
            return;
        }
        std::copy(frame.begin(), frame.end(), buf_.data.begin());
        buf_.len = frame.size();
        if (process(Cause::Input))
        {
            flush();
        }
        buf_.len = 0;
    }

    void Stack::periodic(SimTime now)
    {
        now_ = now;
        for (ConnHandle c = 0; c < conns_.size(); ++c)
        {
            if (process(Cause::Timer, c))
            {
                flush();
            }
        }
        for (UdpHandle u = 0; u < udp_conns_.size(); ++u)
        {
            if (udp_conns_[u].used && process_udp(Cause::Timer, u))
            {
                flush();
            }
        }
    }

    void Stack::poll(ConnHandle conn, SimTime now)
    {
        now_ = now;
        if (process(Cause::Poll, conn))
        {
            flush();
        }
    }

    void Stack::poll_udp(UdpHandle conn, SimTime now)
    {
        now_ = now;
        if (process_udp(Cause::Poll, conn))
        {
            flush();
        }
    }

    int Stack::flush()
    {
        if (buf_.len == 0)
        {
            return 0;
        }
        auto buf = std::span<std::uint8_t>(buf_.data);
        int sent = 0;
        if (split_pending_)
        {
            // Two back-to-back halves carved out of the one buffer.
            split_pending_ = false;
            const std::size_t payload = buf_.len - kTcpIpHeaderLen;
            const std::size_t first = (payload + 1) / 2;
            const std::size_t second = payload - first;
            finalize(buf, kTcpIpHeaderLen + first, kProtoTcp, 16);
            if (output_)
            {
                output_(ByteView(buf_.data.data(), kTcpIpHeaderLen + first));
            }
            std::memmove(buf_.data.data() + kTcpIpHeaderLen, buf_.data.data() + kTcpIpHeaderLen + first, second);
            store32(buf, kIpv4HeaderLen + 4, load32(buf, kIpv4HeaderLen + 4) + static_cast<std::uint32_t>(first));
            store16(buf, 4, ip_id_++);
            finalize(buf, kTcpIpHeaderLen + second, kProtoTcp, 16);
            if (output_)
            {
                output_(ByteView(buf_.data.data(), kTcpIpHeaderLen + second));
            }
            sent = 2;
        }
        else
        {
            if (output_)
            {
                output_(buf_.view());
            }
            sent = 1;
        }
        stats_.tx_packets += static_cast<std::uint64_t>(sent);
        buf_.len = 0;
        return sent;
    }

    // Input ------------------------------------------------------------------

    bool Stack::process_input()
    {
        const auto r = parse_packet(buf_.view());
        switch (r.status)
        {
        case ParseStatus::Ok:
            break;
        case ParseStatus::BadChecksum:
            ++stats_.checksum_drops;
            buf_.len = 0;
            return false;
        case ParseStatus::Malformed:
        case ParseStatus::UnsupportedProtocol:
            ++stats_.malformed_drops;
            buf_.len = 0;
            return false;
        }
        if (r.packet.ip.dst != config_.host_addr)
        {
            ++stats_.not_for_us_drops;
            buf_.len = 0;
            return false;
        }
        const std::size_t ihl = std::size_t{buf_.data[0] & 0x0fu} * 4;
        if (r.packet.tcp && config_.tcp_enabled)
        {
            const std::size_t off = ihl + static_cast<std::size_t>(buf_.data[ihl + 12] >> 4) * 4;
            const std::size_t len = r.packet.ip.total_len - off;
            return process_tcp_input(r.packet, off, len);
        }
        if (r.packet.udp && config_.udp_enabled)
        {
            const std::size_t off = ihl + kUdpHeaderLen;
            return process_udp_input(r.packet, off, r.packet.ip.total_len - off);
        }
        ++stats_.malformed_drops;
        buf_.len = 0;
        return false;
    }

    bool Stack::process_tcp_input(const ParsedPacket &pkt, std::size_t payload_off, std::size_t plen)
    {
        const TcpSegment &seg = *pkt.tcp;
        const std::uint8_t f = seg.flags;
        const ByteView data(buf_.data.data() + payload_off, plen);

        std::optional<ConnHandle> found;
        for (ConnHandle i = 0; i < conns_.size(); ++i)
        {
            const auto &c = conns_[i];
            if (c.state != TcpState::Closed && c.local_port == seg.dst_port && c.remote_port == seg.src_port &&
                c.remote_addr == seg.src)
            {
                found = i;
                break;
            }
        }

        if (!found)
        {
            if ((f & kCtlMask) == tcp_flags::SYN && is_listening(seg.dst_port))
            {
                const auto slot = alloc_connection();
                if (!slot)
                {
                    ++stats_.syn_drops;
                    buf_.len = 0;
                    return false;
                }
                Connection fresh;
                fresh.state = TcpState::SynRcvd;
                fresh.local_port = seg.dst_port;
                fresh.remote_port = seg.src_port;
                fresh.remote_addr = seg.src;
                fresh.rcv_nxt = seg.seq + 1;
                fresh.snd_nxt = iss_;
                fresh.inflight_len = 1;
                fresh.rto_periods = config_.initial_rto;
                fresh.timer = fresh.rto_periods;
                fresh.initial_mss = mss();
                if (seg.mss_option && *seg.mss_option < fresh.initial_mss)
                {
                    fresh.initial_mss = *seg.mss_option;
                }
                fresh.mss = fresh.initial_mss;
                conns_[*slot] = fresh;
                return emit(*slot, Send::SynAck);
            }
            if (f & tcp_flags::RST)
            {
                buf_.len = 0;
                return false;
            }
            return reset_reply(seg, plen);
        }

        const ConnHandle h = *found;
        Connection &c = conns_[h];

        if (f & tcp_flags::RST)
        {
            c.state = TcpState::Closed;
            abandon_inflight(c);
            invoke_tcp_app(h, app_flags::aborted, {});
            buf_.len = 0;
            return false;
        }

        const bool exempt =
            (c.state == TcpState::SynSent && (f & kCtlMask) == (tcp_flags::SYN | tcp_flags::ACK)) ||
            (c.state == TcpState::SynRcvd && (f & kCtlMask) == tcp_flags::SYN);
        if (!exempt && (plen > 0 || (f & (tcp_flags::SYN | tcp_flags::FIN))) && seg.seq != c.rcv_nxt)
        {
            ++stats_.out_of_order_drops;
            return emit(h, Send::Ack);
        }

        std::uint8_t flags = 0;
        if ((f & tcp_flags::ACK) && c.outstanding() && seg.ack == c.snd_nxt + c.inflight_len)
        {
            c.snd_nxt += c.inflight_len;
            if (c.inflight_is_data)
            {
                c.bytes_acked += c.inflight_len;
                c.data_segments_acked += c.inflight_segments;
            }
            c.inflight_len = 0;
            c.inflight_is_data = false;
            c.inflight_segments = 0;
            c.rto_periods = config_.initial_rto;
            c.timer = c.rto_periods;
            flags = app_flags::acked;
        }

        switch (c.state)
        {
        case TcpState::SynRcvd:
            if (flags & app_flags::acked)
            {
                c.state = TcpState::Established;
                flags = app_flags::connected;
                if (plen > 0)
                {
                    flags |= app_flags::newdata;
                    c.rcv_nxt += static_cast<std::uint32_t>(plen);
                    c.bytes_received += plen;
                }
                return app_call_then_send(h, flags, data);
            }
            if ((f & kCtlMask) == tcp_flags::SYN)
            {
                return emit(h, Send::SynAck);
            }
            buf_.len = 0;
            return false;

        case TcpState::SynSent:
            if ((flags & app_flags::acked) && (f & kCtlMask) == (tcp_flags::SYN | tcp_flags::ACK))
            {
                if (seg.mss_option && *seg.mss_option < c.initial_mss)
                {
                    c.initial_mss = *seg.mss_option;
                }
                c.mss = c.initial_mss;
                c.state = TcpState::Established;
                c.rcv_nxt = seg.seq + 1;
                // newdata makes the handshake-completing ACK go out.
                return app_call_then_send(h, app_flags::connected | app_flags::newdata, {});
            }
            c.state = TcpState::Closed;
            abandon_inflight(c);
            invoke_tcp_app(h, app_flags::aborted, {});
            return reset_reply(seg, plen);

        case TcpState::Established:
        {
            if (f & tcp_flags::FIN)
            {
                if (c.outstanding())
                {
                    buf_.len = 0;
                    return false;
                }
                c.rcv_nxt += static_cast<std::uint32_t>(plen) + 1;
                c.bytes_received += plen;
                std::uint8_t fin_flags = flags | app_flags::closed;
                if (plen > 0)
                {
                    fin_flags |= app_flags::newdata;
                }
                c.state = TcpState::LastAck;
                c.inflight_len = 1;
                c.inflight_is_data = false;
                c.nrtx = 0;
                c.rto_periods = config_.initial_rto;
                c.timer = c.rto_periods;
                invoke_tcp_app(h, fin_flags, data);
                return emit(h, Send::FinAck);
            }
            std::uint16_t window = seg.window;
            if (window > c.initial_mss || window == 0)
            {
                window = c.initial_mss;
            }
            c.mss = window;
            if (plen > 0)
            {
                flags |= app_flags::newdata;
                c.rcv_nxt += static_cast<std::uint32_t>(plen);
                c.bytes_received += plen;
            }
            if (flags & (app_flags::newdata | app_flags::acked))
            {
                return app_call_then_send(h, flags, data);
            }
            buf_.len = 0;
            return false;
        }

        case TcpState::LastAck:
            if (flags & app_flags::acked)
            {
                c.state = TcpState::Closed;
                invoke_tcp_app(h, app_flags::closed, {});
            }
            buf_.len = 0;
            return false;

        case TcpState::FinWait1:
            if (plen > 0)
            {
                c.rcv_nxt += static_cast<std::uint32_t>(plen);
            }
            if (f & tcp_flags::FIN)
            {
                if (flags & app_flags::acked)
                {
                    c.state = TcpState::TimeWait;
                    c.timer = 0;
                }
                else
                {
                    c.state = TcpState::Closing;
                }
                c.rcv_nxt += 1;
                invoke_tcp_app(h, app_flags::closed, {});
                return emit(h, Send::Ack);
            }
            if (flags & app_flags::acked)
            {
                c.state = TcpState::FinWait2;
                c.timer = 0;
            }
            if (plen > 0)
            {
                return emit(h, Send::Ack);
            }
            buf_.len = 0;
            return false;

        case TcpState::FinWait2:
            if (plen > 0)
            {
                c.rcv_nxt += static_cast<std::uint32_t>(plen);
            }
            if (f & tcp_flags::FIN)
            {
                c.state = TcpState::TimeWait;
                c.timer = 0;
                c.rcv_nxt += 1;
                invoke_tcp_app(h, app_flags::closed, {});
                return emit(h, Send::Ack);
            }
            if (plen > 0)
            {
                return emit(h, Send::Ack);
            }
            buf_.len = 0;
            return false;

        case TcpState::TimeWait:
            return emit(h, Send::Ack);

        case TcpState::Closing:
            if (flags & app_flags::acked)
            {
                c.state = TcpState::TimeWait;
                c.timer = 0;
            }
            buf_.len = 0;
            return false;

        default:
            buf_.len = 0;
            return false;
        }
    }

    bool Stack::process_udp_input(const ParsedPacket &pkt, std::size_t payload_off, std::size_t plen)
    {
        const UdpDatagram &d = *pkt.udp;
        for (UdpHandle u = 0; u < udp_conns_.size(); ++u)
        {
            const auto &uc = udp_conns_[u];
            if (uc.used && uc.local_port == d.dst_port && (uc.remote_port == 0 || uc.remote_port == d.src_port) &&
                (uc.remote_addr.value == 0 || uc.remote_addr == d.src))
            {
                udp_reply_addr_ = d.src;
                udp_reply_port_ = d.src_port;
                current_udp_ = u;
                app_flags_ = app_flags::newdata;
                slen_ = 0;
                if (udp_app_)
                {
                    udp_app_(*this, u,
                             UdpAppEvent{app_flags::newdata, ByteView(buf_.data.data() + payload_off, plen), d.src,
                                         d.src_port});
                }
                current_udp_.reset();
                return emit_udp(u);
            }
        }
        ++stats_.udp_drops;
        buf_.len = 0;
        return false;
    }

    // Timer and poll ---------------------------------------------------------

    bool Stack::process_timer(ConnHandle h)
    {
        Connection &c = conns_[h];
        if (c.state == TcpState::TimeWait || c.state == TcpState::FinWait2)
        {
            if (++c.timer >= config_.time_wait_periods)
            {
                c.state = TcpState::Closed;
            }
            return false;
        }
        if (c.state == TcpState::Closed)
        {
            return false;
        }
        if (c.outstanding())
        {
            if (c.timer > 0)
            {
                --c.timer;
            }
            if (c.timer > 0)
            {
                return false;
            }
            if (c.nrtx >= config_.max_retransmissions)
            {
                c.state = TcpState::Closed;
                c.timed_out = true;
                ++stats_.timeouts;
                abandon_inflight(c);
                invoke_tcp_app(h, app_flags::timedout, {});
                return emit(h, Send::RstAck);
            }
            ++c.nrtx;
            c.rto_periods = std::min(c.rto_periods * 2, config_.max_rto);
            c.timer = c.rto_periods;
            ++stats_.retransmissions;
            switch (c.state)
            {
            case TcpState::SynRcvd:
                return emit(h, Send::SynAck);
            case TcpState::SynSent:
                return emit(h, Send::Syn);
            case TcpState::Established:
                return retransmit(h);
            case TcpState::FinWait1:
            case TcpState::Closing:
            case TcpState::LastAck:
                return emit(h, Send::FinAck);
            default:
                return false;
            }
        }
        if (c.state == TcpState::Established)
        {
            return app_call_then_send(h, app_flags::poll, {});
        }
        return false;
    }

    bool Stack::process_poll(ConnHandle h)
    {
        Connection &c = conns_[h];
        if (c.state == TcpState::SynSent && c.outstanding())
        {
            return emit(h, Send::Syn);
        }
        if (c.state == TcpState::Established && !c.outstanding())
        {
            return app_call_then_send(h, app_flags::poll, {});
        }
        return false;
    }

    bool Stack::retransmit(ConnHandle h)
    {
        Connection &c = conns_[h];
        if (!c.inflight_is_data)
        {
            return false;
        }
        current_ = h;
        app_flags_ = app_flags::rexmit;
        slen_ = 0;
        abort_requested_ = false;
        if (tcp_app_)
        {
            tcp_app_(*this, h, AppEvent{app_flags::rexmit, {}});
        }
        current_.reset();
        if (abort_requested_)
        {
            abort_requested_ = false;
            c.state = TcpState::Closed;
            abandon_inflight(c);
            return emit(h, Send::RstAck);
        }
        if (slen_ == 0)
        {
            return false;
        }
        const bool ok = emit(h, Send::Data);
        c.data_segments_retransmitted += c.inflight_segments;
        return ok;
    }

    // Application interface --------------------------------------------------

    void Stack::invoke_tcp_app(ConnHandle h, std::uint8_t flags, ByteView data)
    {
        current_ = h;
        app_flags_ = flags;
        slen_ = 0;
        if (tcp_app_)
        {
            tcp_app_(*this, h, AppEvent{flags, data});
        }
        current_.reset();
        slen_ = 0;
    }

    bool Stack::app_call_then_send(ConnHandle h, std::uint8_t flags, ByteView data)
    {
        current_ = h;
        app_flags_ = flags;
        slen_ = 0;
        abort_requested_ = false;
        if (tcp_app_)
        {
            tcp_app_(*this, h, AppEvent{flags, data});
        }
        current_.reset();

        Connection &c = conns_[h];
        if (abort_requested_)
        {
            abort_requested_ = false;
            c.state = TcpState::Closed;
            abandon_inflight(c);
            return emit(h, Send::RstAck);
        }
        if (c.close_requested && !c.outstanding())
        {
            c.close_requested = false;
            c.state = TcpState::FinWait1;
            c.inflight_len = 1;
            c.inflight_is_data = false;
            c.nrtx = 0;
            c.rto_periods = config_.initial_rto;
            c.timer = c.rto_periods;
            return emit(h, Send::FinAck);
        }
        if (slen_ > 0)
        {
            c.nrtx = 0;
            c.timer = c.rto_periods;
            return emit(h, Send::Data);
        }
        if (flags & app_flags::newdata)
        {
            return emit(h, Send::Ack);
        }
        buf_.len = 0;
        return false;
    }

    std::size_t Stack::app_send(ConnHandle h, ByteView data)
    {
        if (!current_ || *current_ != h)
        {
            throw Error(Errc::NotInCallback, "app_send outside the connection's callback");
        }
        Connection &c = conns_[h];
        if (c.state != TcpState::Established)
        {
            throw Error(Errc::NotEstablished, std::string("app_send in state ") + tcp_state_name(c.state));
        }
        if (app_flags_ & app_flags::rexmit)
        {
            const std::size_t n = std::min<std::size_t>(data.size(), c.inflight_len);
            std::memmove(buf_.data.data() + kTcpIpHeaderLen, data.data(), n);
            slen_ = n;
            c.inflight_len = static_cast<std::uint16_t>(n);
            return n;
        }
        if (c.outstanding() || slen_ > 0)
        {
            throw Error(Errc::SendWhileInflight, "a segment is already unacknowledged");
        }
        const std::size_t n = std::min<std::size_t>(data.size(), c.mss);
        if (n == 0)
        {
            return 0;
        }
        std::memmove(buf_.data.data() + kTcpIpHeaderLen, data.data(), n);
        slen_ = n;
        c.inflight_len = static_cast<std::uint16_t>(n);
        c.inflight_is_data = true;
        return n;
    }

    void Stack::app_close(ConnHandle h)
    {
        if (!current_ || *current_ != h)
        {
            throw Error(Errc::NotInCallback, "app_close outside the connection's callback");
        }
        conns_[h].close_requested = true;
    }

    void Stack::app_abort(ConnHandle h)
    {
        if (!current_ || *current_ != h)
        {
            throw Error(Errc::NotInCallback, "app_abort outside the connection's callback");
        }
        abort_requested_ = true;
    }

    void Stack::udp_send(UdpHandle u, ByteView data)
    {
        if (!current_udp_ || *current_udp_ != u)
        {
            throw Error(Errc::NotInCallback, "udp_send outside the endpoint's callback");
        }
        const std::size_t n = std::min<std::size_t>(data.size(), buf_.data.size() - kUdpIpHeaderLen);
        std::memmove(buf_.data.data() + kUdpIpHeaderLen, data.data(), n);
        slen_ = n;
    }

    // Output -----------------------------------------------------------------

    void Stack::write_header(const Connection &c, std::uint32_t seq, std::uint8_t flags, std::size_t payload_len,
                             bool with_mss)
    {
        auto buf = std::span<std::uint8_t>(buf_.data);
        const std::size_t thl = kTcpHeaderLen + (with_mss ? 4 : 0);
        const std::size_t total = kIpv4HeaderLen + thl + payload_len;
        write_ip(buf, config_.host_addr, c.remote_addr, kProtoTcp, ip_id_++);
        auto tcp = buf.subspan(kIpv4HeaderLen);
        store16(tcp, 0, c.local_port);
        store16(tcp, 2, c.remote_port);
        store32(tcp, 4, seq);
        store32(tcp, 8, (flags & tcp_flags::ACK) ? c.rcv_nxt : 0);
        tcp[12] = static_cast<std::uint8_t>((thl / 4) << 4);
        tcp[13] = flags;
        store16(tcp, 14, mss());
        store16(tcp, 18, 0);
        if (with_mss)
        {
            tcp[20] = 2;
            tcp[21] = 4;
            store16(tcp, 22, mss());
        }
        finalize(buf, total, kProtoTcp, 16);
        buf_.len = total;
    }

    bool Stack::emit(ConnHandle h, Send what)
    {
        Connection &c = conns_[h];
        split_pending_ = false;
        switch (what)
        {
        case Send::None:
            buf_.len = 0;
            return false;
        case Send::Syn:
            write_header(c, c.snd_nxt, tcp_flags::SYN, 0, true);
            return true;
        case Send::SynAck:
            write_header(c, c.snd_nxt, tcp_flags::SYN | tcp_flags::ACK, 0, true);
            return true;
        case Send::Ack:
            write_header(c, c.snd_nxt, tcp_flags::ACK, 0, false);
            return true;
        case Send::FinAck:
            write_header(c, c.snd_nxt, tcp_flags::FIN | tcp_flags::ACK, 0, false);
            return true;
        case Send::RstAck:
            ++stats_.rst_sent;
            write_header(c, c.snd_nxt, tcp_flags::RST | tcp_flags::ACK, 0, false);
            return true;
        case Send::Data:
        {
            const std::size_t len = c.inflight_len;
            write_header(c, c.snd_nxt, tcp_flags::ACK | tcp_flags::PSH, len, false);
            split_pending_ = config_.tcp_split && len == c.mss && len >= 2;
            c.inflight_segments = split_pending_ ? 2 : 1;
            c.data_segments_sent += c.inflight_segments;
            return true;
        }
        }
        return false;
    }

    bool Stack::emit_udp(UdpHandle u)
    {
        split_pending_ = false;
        if (slen_ == 0)
        {
            buf_.len = 0;
            return false;
        }
        const UdpConnection &uc = udp_conns_[u];
        const Ipv4Addr dst = uc.remote_addr.value != 0 ? uc.remote_addr : udp_reply_addr_;
        const std::uint16_t dport = uc.remote_port != 0 ? uc.remote_port : udp_reply_port_;
        auto buf = std::span<std::uint8_t>(buf_.data);
        const std::size_t total = kUdpIpHeaderLen + slen_;
        write_ip(buf, config_.host_addr, dst, kProtoUdp, ip_id_++);
        auto udp = buf.subspan(kIpv4HeaderLen);
        store16(udp, 0, uc.local_port);
        store16(udp, 2, dport);
        store16(udp, 4, static_cast<std::uint16_t>(kUdpHeaderLen + slen_));
        store16(udp, 6, 0);
        finalize(buf, total, kProtoUdp, 6);
        if (!config_.udp_checksums)
        {
            store16(udp, 6, 0);
        }
        else if (load16(udp, 6) == 0)
        {
            store16(udp, 6, 0xffff);
        }
        slen_ = 0;
        buf_.len = total;
        return true;
    }

    bool Stack::reset_reply(const TcpSegment &in, std::size_t plen)
    {
        TcpSegment rst;
        rst.src = config_.host_addr;
        rst.dst = in.src;
        rst.src_port = in.dst_port;
        rst.dst_port = in.src_port;
        rst.flags = tcp_flags::RST | tcp_flags::ACK;
        rst.seq = (in.flags & tcp_flags::ACK) ? in.ack : 0;
        rst.ack = in.seq + static_cast<std::uint32_t>(plen) + ((in.flags & tcp_flags::SYN) ? 1 : 0) +
                  ((in.flags & tcp_flags::FIN) ? 1 : 0);
        split_pending_ = false;
        buf_.len = write_tcp_packet(buf_.data, rst, ip_id_++);
        ++stats_.rst_sent;
        return true;
    }

    void Stack::abandon_inflight(Connection &c)
    {
        if (c.inflight_is_data && c.inflight_len > 0)
        {
            c.data_segments_abandoned += c.inflight_segments;
        }
        c.inflight_len = 0;
        c.inflight_is_data = false;
        c.inflight_segments = 0;
    }

    // Tables -----------------------------------------------------------------

    std::optional<ConnHandle> Stack::alloc_connection()
    {
        for (ConnHandle i = 0; i < conns_.size(); ++i)
        {
            if (conns_[i].state == TcpState::Closed)
            {
                return i;
            }
        }
        return std::nullopt;
    }

    ConnHandle Stack::tcp_connect(Ipv4Addr addr, std::uint16_t port)
    {
        const auto slot = alloc_connection();
        if (!slot)
        {
            throw Error(Errc::ConnectionTableFull,
                        std::to_string(conns_.size()) + " connections already in use");
        }
        // Ephemeral port that no live connection uses.
        for (;;)
        {
            if (++lastport_ >= 32000)
            {
                lastport_ = 4096;
            }
            const bool taken = std::any_of(conns_.begin(), conns_.end(), [&](const Connection &c) {
                return c.state != TcpState::Closed && c.local_port == lastport_;
            });
            if (!taken)
            {
                break;
            }
        }
        Connection c;
        c.state = TcpState::SynSent;
        c.local_port = lastport_;
        c.remote_port = port;
        c.remote_addr = addr;
        c.snd_nxt = iss_;
        c.inflight_len = 1;
        c.rto_periods = config_.initial_rto;
        c.timer = c.rto_periods;
        c.initial_mss = mss();
        c.mss = c.initial_mss;
        conns_[*slot] = c;
        return *slot;
    }

    void Stack::tcp_listen(std::uint16_t port)
    {
        if (is_listening(port))
        {
            return;
        }
        if (listen_ports_.size() >= config_.max_listen_ports)
        {
            throw Error(Errc::ListenerTableFull, std::to_string(config_.max_listen_ports) + " listeners in use");
        }
        listen_ports_.push_back(port);
    }

    void Stack::tcp_unlisten(std::uint16_t port)
    {
        std::erase(listen_ports_, port);
    }

    bool Stack::is_listening(std::uint16_t port) const
    {
        return std::find(listen_ports_.begin(), listen_ports_.end(), port) != listen_ports_.end();
    }

    UdpHandle Stack::udp_new(Ipv4Addr addr, std::uint16_t remote_port)
    {
        for (UdpHandle u = 0; u < udp_conns_.size(); ++u)
        {
            if (!udp_conns_[u].used)
            {
                if (++lastport_ >= 32000)
                {
                    lastport_ = 4096;
                }
                udp_conns_[u] = UdpConnection{true, addr, lastport_, remote_port};
                return u;
            }
        }
        throw Error(Errc::ConnectionTableFull, "no free UDP endpoint");
    }

    void Stack::udp_bind(UdpHandle u, std::uint16_t local_port)
    {
        udp_conns_.at(u).local_port = local_port;
    }

    void Stack::udp_remove(UdpHandle u)
    {
        udp_conns_.at(u) = UdpConnection{};
    }

    const Connection &Stack::connection(ConnHandle h) const
    {
        return conns_.at(h);
    }

    const UdpConnection &Stack::udp_connection(UdpHandle u) const
    {
        return udp_conns_.at(u);
    }

    std::size_t Stack::open_connections() const
    {
        return static_cast<std::size_t>(std::count_if(
            conns_.begin(), conns_.end(), [](const Connection &c) { return c.state != TcpState::Closed; }));
    }

    std::size_t Stack::listener_count() const
    {
        return listen_ports_.size();
    }
}
