#include "nsc/full_tcp.hpp"

#include <algorithm>

namespace nsc::full
{
    namespace
    {
        bool synchronized_sender(TcpState s)
        {
            return s == TcpState::Established || s == TcpState::CloseWait || s == TcpState::FinWait1 ||
                   s == TcpState::Closing || s == TcpState::LastAck;
        }
    }

    void Config::validate() const
    {
        if (delayed_ack_timeout > SimTime::ms(500))
        {
            throw Error(Errc::InvalidConfig, "delayed_ack_timeout must be <= 500 ms");
        }
        if (ack_every_n_full_segments < 1)
        {
            throw Error(Errc::InvalidConfig, "ack_every_n_full_segments must be >= 1");
        }
        if (recv_window == 0 || recv_window > 0xffff)
        {
            throw Error(Errc::InvalidConfig, "recv_window must lie in [1, 65535]");
        }
        if (mss < 1)
        {
            throw Error(Errc::InvalidConfig, "mss must be positive");
        }
        if (initial_rto.micros == 0 || max_rto < initial_rto)
        {
            throw Error(Errc::InvalidConfig, "need 0 < initial_rto <= max_rto");
        }
    }

    Stack::Stack(Config config) : config_(std::move(config)), isn_rng_(config_.isn_seed)
    {
        config_.validate();
    }

    void Stack::listen(std::uint16_t port)
    {
        if (std::find(listen_ports_.begin(), listen_ports_.end(), port) == listen_ports_.end())
        {
            listen_ports_.push_back(port);
        }
    }

    void Stack::udp_bind(std::uint16_t port)
    {
        if (std::find(udp_ports_.begin(), udp_ports_.end(), port) == udp_ports_.end())
        {
            udp_ports_.push_back(port);
        }
    }

    ConnId Stack::connect(Ipv4Addr addr, std::uint16_t port, SimTime now)
    {
        Connection c;
        c.state = TcpState::SynSent;
        c.remote_addr = addr;
        c.remote_port = port;
        if (++lastport_ == 0)
        {
            lastport_ = 49152;
        }
        c.local_port = lastport_;
        c.iss = static_cast<std::uint32_t>(isn_rng_.next());
        c.snd_una = c.iss;
        c.snd_nxt = c.iss + 1;
        c.snd_max = c.snd_nxt;
        c.rto = config_.initial_rto;
        conns_.push_back(std::move(c));
        const ConnId id = static_cast<ConnId>(conns_.size() - 1);
        Connection &ref = conns_.back();
        send_segment(ref, ref.iss, tcp_flags::SYN, {}, true);
        arm_rto(ref, now);
        return id;
    }

    void Stack::send(ConnId id, ByteView data, SimTime now)
    {
        Connection &c = conns_.at(id);
        if (data.empty())
        {
            return;
        }
        if (c.close_requested || !(c.state == TcpState::Established || c.state == TcpState::CloseWait ||
                                   c.state == TcpState::SynSent || c.state == TcpState::SynRcvd))
        {
            throw Error(Errc::NotEstablished, std::string("send in state ") + tcp_state_name(c.state));
        }
        c.send_buffer.insert(c.send_buffer.end(), data.begin(), data.end());
        try_send(id, now);
    }

    void Stack::close(ConnId id, SimTime now)
    {
        Connection &c = conns_.at(id);
        if (c.state == TcpState::SynSent)
        {
            enter_closed(id, CloseReason::Normal);
            return;
        }
        c.close_requested = true;
        try_send(id, now);
    }

    void Stack::send_udp(Ipv4Addr dst, std::uint16_t src_port, std::uint16_t dst_port, ByteView data)
    {
        UdpDatagram d;
        d.src = config_.host_addr;
        d.dst = dst;
        d.src_port = src_port;
        d.dst_port = dst_port;
        d.payload.assign(data.begin(), data.end());
        const Bytes pkt = build_udp_packet(d, ip_id_++, true);
        ++stats_.tx_packets;
        if (output_)
        {
            output_(pkt);
        }
    }

    // Input ------------------------------------------------------------------

    void Stack::input(ByteView packet, SimTime now)
    {
        ++stats_.rx_packets;
        const auto r = parse_packet(packet);
        if (r.status == ParseStatus::BadChecksum)
        {
            ++stats_.checksum_drops;
            return;
        }
        if (r.status != ParseStatus::Ok)
        {
            ++stats_.malformed_drops;
            return;
        }
        if (r.packet.ip.dst != config_.host_addr)
        {
            ++stats_.not_for_us_drops;
            return;
        }
        if (r.packet.udp)
        {
            const auto &d = *r.packet.udp;
            if (std::find(udp_ports_.begin(), udp_ports_.end(), d.dst_port) == udp_ports_.end())
            {
                ++stats_.udp_drops;
                return;
            }
            ++stats_.udp_received;
            stats_.udp_bytes_received += d.payload.size();
            if (callbacks_.udp)
            {
                callbacks_.udp(*this, d);
            }
            return;
        }
        const TcpSegment &seg = *r.packet.tcp;
        if (const auto id = find(seg))
        {
            process_segment(*id, seg, now);
            return;
        }
        if ((seg.flags & 0x3f) == tcp_flags::SYN &&
            std::find(listen_ports_.begin(), listen_ports_.end(), seg.dst_port) != listen_ports_.end())
        {
            accept_syn(seg, now);
            return;
        }
        if (!(seg.flags & tcp_flags::RST))
        {
            send_reset(seg);
        }
    }

    std::optional<ConnId> Stack::find(const TcpSegment &seg) const
    {
        for (ConnId i = 0; i < conns_.size(); ++i)
        {
            const auto &c = conns_[i];
            if (c.state != TcpState::Closed && c.local_port == seg.dst_port && c.remote_port == seg.src_port &&
                c.remote_addr == seg.src)
            {
                return i;
            }
        }
        return std::nullopt;
    }

    void Stack::accept_syn(const TcpSegment &seg, SimTime now)
    {
        Connection c;
        c.state = TcpState::SynRcvd;
        c.remote_addr = seg.src;
        c.remote_port = seg.src_port;
        c.local_port = seg.dst_port;
        c.irs = seg.seq;
        c.rcv_nxt = seg.seq + 1;
        c.iss = static_cast<std::uint32_t>(isn_rng_.next());
        c.snd_una = c.iss;
        c.snd_nxt = c.iss + 1;
        c.snd_max = c.snd_nxt;
        c.snd_wnd = seg.window;
        c.eff_mss = std::min<std::uint16_t>(config_.mss, seg.mss_option.value_or(536));
        c.rto = config_.initial_rto;
        conns_.push_back(std::move(c));
        Connection &ref = conns_.back();
        send_segment(ref, ref.iss, tcp_flags::SYN | tcp_flags::ACK, {}, true);
        arm_rto(ref, now);
    }

    void Stack::process_segment(ConnId id, const TcpSegment &seg, SimTime now)
    {
        Connection &c = conns_.at(id);
        const std::uint8_t f = seg.flags;

        if (c.state == TcpState::SynSent)
        {
            const bool ack_ok = (f & tcp_flags::ACK) && seg.ack == c.iss + 1;
            if ((f & tcp_flags::ACK) && !ack_ok)
            {
                if (!(f & tcp_flags::RST))
                {
                    send_reset(seg);
                }
                return;
            }
            if (f & tcp_flags::RST)
            {
                if (ack_ok)
                {
                    enter_closed(id, CloseReason::Reset);
                }
                return;
            }
            if ((f & tcp_flags::SYN) && ack_ok)
            {
                c.irs = seg.seq;
                c.rcv_nxt = seg.seq + 1;
                c.snd_una = seg.ack;
                c.snd_wnd = seg.window;
                c.eff_mss = std::min<std::uint16_t>(config_.mss, seg.mss_option.value_or(536));
                c.state = TcpState::Established;
                c.nrtx = 0;
                c.rto = config_.initial_rto;
                c.rto_deadline.reset();
                send_ack(c);
                if (callbacks_.connected)
                {
                    callbacks_.connected(*this, id);
                }
                try_send(id, now);
            }
            return;
        }

        if (f & tcp_flags::RST)
        {
            enter_closed(id, CloseReason::Reset);
            return;
        }
        if (f & tcp_flags::SYN)
        {
            if (c.state == TcpState::SynRcvd && seg.seq == c.irs)
            {
                send_segment(c, c.iss, tcp_flags::SYN | tcp_flags::ACK, {}, true);
            }
            else
            {
                send_ack(c);
            }
            return;
        }
        if (!(f & tcp_flags::ACK))
        {
            return;
        }
        handle_ack(id, seg, now);
        const Connection &after = conns_[id];
        if (after.state == TcpState::Closed || after.state == TcpState::SynRcvd)
        {
            return;
        }
        if (!seg.payload.empty() || (f & tcp_flags::FIN))
        {
            handle_data(id, seg, now);
        }
    }

    void Stack::handle_ack(ConnId id, const TcpSegment &seg, SimTime now)
    {
        Connection &c = conns_[id];
        if (c.state == TcpState::SynRcvd)
        {
            if (seg.ack != c.iss + 1)
            {
                send_reset(seg);
                return;
            }
            c.state = TcpState::Established;
            c.snd_una = seg.ack;
            c.snd_wnd = seg.window;
            c.nrtx = 0;
            c.rto = config_.initial_rto;
            c.rto_deadline.reset();
            if (callbacks_.connected)
            {
                callbacks_.connected(*this, id);
            }
            try_send(id, now);
            return;
        }
        if (seq_lt(c.snd_max, seg.ack))
        {
            send_ack(c);
            return;
        }
        if (seq_lt(c.snd_una, seg.ack))
        {
            const std::uint32_t acked = seg.ack - c.snd_una;
            const std::size_t data = std::min<std::size_t>(acked, c.send_buffer.size());
            c.send_buffer.erase(c.send_buffer.begin(), c.send_buffer.begin() + static_cast<std::ptrdiff_t>(data));
            c.bytes_acked += data;
            c.snd_una = seg.ack;
            while (!c.segment_ends.empty() && seq_leq(c.segment_ends.front(), c.snd_una))
            {
                c.segment_ends.pop_front();
                ++c.data_segments_acked;
            }
            if (seq_lt(c.snd_nxt, c.snd_una))
            {
                c.snd_nxt = c.snd_una;
            }
            c.nrtx = 0;
            c.rto = config_.initial_rto;
            if (c.snd_una == c.snd_max)
            {
                c.rto_deadline.reset();
            }
            else
            {
                c.rto_deadline = now + c.rto;
            }
            c.snd_wnd = seg.window;
            if (data > 0 && callbacks_.acked)
            {
                callbacks_.acked(*this, id, data);
            }
            Connection &cc = conns_[id];
            if (cc.fin_sent && cc.snd_una == cc.snd_max)
            {
                switch (cc.state)
                {
                case TcpState::FinWait1:
                    cc.state = TcpState::FinWait2;
                    break;
                case TcpState::Closing:
                    cc.state = TcpState::TimeWait;
                    cc.time_wait_deadline = now + config_.time_wait;
                    break;
                case TcpState::LastAck:
                    enter_closed(id, CloseReason::Normal);
                    return;
                default:
                    break;
                }
            }
        }
        else
        {
            c.snd_wnd = seg.window;
        }
        try_send(id, now);
    }

    void Stack::handle_data(ConnId id, const TcpSegment &seg, SimTime now)
    {
        Connection &c = conns_[id];
        std::uint32_t seq = seg.seq;
        ByteView payload(seg.payload);
        const bool fin = seg.flags & tcp_flags::FIN;
        const std::uint32_t seg_end = seg.seq + static_cast<std::uint32_t>(seg.payload.size());

        if (!payload.empty())
        {
            if (seq_lt(seq, c.rcv_nxt))
            {
                const std::uint32_t overlap = c.rcv_nxt - seq;
                if (overlap >= payload.size())
                {
                    // Entirely old: acknowledge immediately (RFC 1122 duplicate handling).
                    ++c.duplicate_acks;
                    ++c.immediate_acks;
                    send_ack(c);
                    if (!(fin && seg_end == c.rcv_nxt))
                    {
                        return;
                    }
                    payload = {};
                }
                else
                {
                    payload = payload.subspan(overlap);
                    seq = c.rcv_nxt;
                }
            }
            if (!payload.empty() && seq != c.rcv_nxt)
            {
                if (c.reorder.size() < config_.reorder_capacity &&
                    seq_lt(seq, c.rcv_nxt + config_.recv_window))
                {
                    c.reorder.emplace(seq, Bytes(payload.begin(), payload.end()));
                }
                ++c.duplicate_acks;
                ++c.immediate_acks;
                send_ack(c);
                return;
            }
            if (!payload.empty())
            {
                std::vector<Bytes> delivered;
                delivered.emplace_back(payload.begin(), payload.end());
                c.rcv_nxt += static_cast<std::uint32_t>(payload.size());
                ++c.data_segments_received;
                const std::uint32_t len = static_cast<std::uint32_t>(payload.size());

                bool filled_gap = false;
                for (auto it = c.reorder.begin(); it != c.reorder.end();)
                {
                    const std::uint32_t s = it->first;
                    const std::uint32_t e = s + static_cast<std::uint32_t>(it->second.size());
                    if (seq_leq(e, c.rcv_nxt))
                    {
                        it = c.reorder.erase(it);
                        continue;
                    }
                    if (seq_leq(s, c.rcv_nxt))
                    {
                        const std::uint32_t skip = c.rcv_nxt - s;
                        delivered.emplace_back(it->second.begin() + skip, it->second.end());
                        c.rcv_nxt = e;
                        filled_gap = true;
                        it = c.reorder.erase(it);
                        it = c.reorder.begin();
                        continue;
                    }
                    ++it;
                }

                c.rcv_mss = std::max(c.rcv_mss, std::min<std::uint32_t>(len, config_.mss));
                if (len >= c.rcv_mss)
                {
                    ++c.unacked_full_segments;
                }
                const bool fin_now = fin && seg_end == c.rcv_nxt;
                if (filled_gap || fin_now || c.unacked_full_segments >= config_.ack_every_n_full_segments)
                {
                    ++c.immediate_acks;
                    if (!fin_now)
                    {
                        send_ack(c);
                    }
                }
                else if (!c.pending_ack)
                {
                    c.pending_ack = true;
                    c.ack_deadline = now + config_.delayed_ack_timeout;
                }
                for (const auto &chunk : delivered)
                {
                    c.bytes_received += chunk.size();
                    if (callbacks_.data)
                    {
                        callbacks_.data(*this, id, chunk);
                    }
                }
            }
        }

        Connection &cc = conns_[id];
        if (fin && seg_end == cc.rcv_nxt)
        {
            cc.rcv_nxt += 1;
            send_ack(cc);
            switch (cc.state)
            {
            case TcpState::Established:
                cc.state = TcpState::CloseWait;
                if (callbacks_.peer_closed)
                {
                    callbacks_.peer_closed(*this, id);
                }
                break;
            case TcpState::FinWait1:
                cc.state = TcpState::Closing;
                break;
            case TcpState::FinWait2:
                cc.state = TcpState::TimeWait;
                cc.time_wait_deadline = now + config_.time_wait;
                if (callbacks_.closed)
                {
                    callbacks_.closed(*this, id, CloseReason::Normal);
                }
                break;
            default:
                break;
            }
        }
        else if (fin && seq_lt(seg_end, cc.rcv_nxt))
        {
            // Retransmitted FIN we already consumed.
            send_ack(cc);
        }
    }

    // Output -----------------------------------------------------------------

    void Stack::try_send(ConnId id, SimTime now)
    {
        Connection &c = conns_[id];
        if (!synchronized_sender(c.state))
        {
            return;
        }
        for (;;)
        {
            const std::uint32_t sent_off = c.snd_nxt - c.snd_una;
            if (sent_off >= c.send_buffer.size())
            {
                break;
            }
            const std::uint32_t unsent = static_cast<std::uint32_t>(c.send_buffer.size()) - sent_off;
            const std::uint32_t wnd_edge = c.snd_una + c.snd_wnd;
            const std::uint32_t wnd_left = seq_lt(c.snd_nxt, wnd_edge) ? wnd_edge - c.snd_nxt : 0;
            std::uint32_t n = std::min({unsent, wnd_left, std::uint32_t{c.eff_mss}});
            const bool resend = seq_lt(c.snd_nxt, c.snd_max);
            if (resend)
            {
                // A retransmission never carries bytes beyond snd_max.
                n = std::min(n, c.snd_max - c.snd_nxt);
            }
            if (n == 0)
            {
                break;
            }
            if (resend)
            {
                ++c.data_segments_retransmitted;
            }
            else
            {
                c.segment_ends.push_back(c.snd_nxt + n);
            }
            ++c.data_segments_sent;
            send_segment(c, c.snd_nxt, tcp_flags::ACK | tcp_flags::PSH,
                         ByteView(c.send_buffer.data() + sent_off, n), false);
            c.snd_nxt += n;
            if (seq_lt(c.snd_max, c.snd_nxt))
            {
                c.snd_max = c.snd_nxt;
            }
            arm_rto(c, now);
        }
        if (c.close_requested && !c.fin_sent && c.snd_nxt == c.snd_una + c.send_buffer.size())
        {
            send_segment(c, c.snd_nxt, tcp_flags::FIN | tcp_flags::ACK, {}, false);
            c.snd_nxt += 1;
            if (seq_lt(c.snd_max, c.snd_nxt))
            {
                c.snd_max = c.snd_nxt;
            }
            c.fin_sent = true;
            if (c.state == TcpState::Established)
            {
                c.state = TcpState::FinWait1;
            }
            else if (c.state == TcpState::CloseWait)
            {
                c.state = TcpState::LastAck;
            }
            arm_rto(c, now);
        }
    }

    void Stack::send_segment(Connection &c, std::uint32_t seq, std::uint8_t flags, ByteView payload, bool mss_opt)
    {
        TcpSegment seg;
        seg.src = config_.host_addr;
        seg.dst = c.remote_addr;
        seg.src_port = c.local_port;
        seg.dst_port = c.remote_port;
        seg.seq = seq;
        seg.flags = flags;
        if (flags & tcp_flags::ACK)
        {
            seg.ack = c.rcv_nxt;
            c.pending_ack = false;
            c.unacked_full_segments = 0;
            ++c.acks_sent;
        }
        seg.window = static_cast<std::uint16_t>(config_.recv_window);
        if (mss_opt)
        {
            seg.mss_option = config_.mss;
        }
        seg.payload.assign(payload.begin(), payload.end());
        const Bytes pkt = build_tcp_packet(seg, ip_id_++);
        ++stats_.tx_packets;
        if (output_)
        {
            output_(pkt);
        }
    }

    void Stack::send_ack(Connection &c)
    {
        send_segment(c, c.snd_nxt, tcp_flags::ACK, {}, false);
    }

    void Stack::send_reset(const TcpSegment &in)
    {
        TcpSegment rst;
        rst.src = config_.host_addr;
        rst.dst = in.src;
        rst.src_port = in.dst_port;
        rst.dst_port = in.src_port;
        if (in.flags & tcp_flags::ACK)
        {
            rst.seq = in.ack;
            rst.flags = tcp_flags::RST;
        }
        else
        {
            rst.seq = 0;
            rst.ack = in.seq + static_cast<std::uint32_t>(in.payload.size()) +
                      ((in.flags & tcp_flags::SYN) ? 1 : 0) + ((in.flags & tcp_flags::FIN) ? 1 : 0);
            rst.flags = tcp_flags::RST | tcp_flags::ACK;
        }
        const Bytes pkt = build_tcp_packet(rst, ip_id_++);
        ++stats_.rst_sent;
        ++stats_.tx_packets;
        if (output_)
        {
            output_(pkt);
        }
    }

    // Timers -----------------------------------------------------------------

    bool Stack::on_delayed_ack_timer(ConnId id, SimTime now)
    {
        Connection &c = conns_.at(id);
        if (!c.pending_ack || now < c.ack_deadline || c.state == TcpState::Closed)
        {
            return false;
        }
        ++c.delayed_acks;
        send_ack(c);
        return true;
    }

    void Stack::on_delayed_ack_timers(SimTime now)
    {
        for (ConnId i = 0; i < conns_.size(); ++i)
        {
            on_delayed_ack_timer(i, now);
        }
    }

    void Stack::on_retransmit_timers(SimTime now)
    {
        for (ConnId i = 0; i < conns_.size(); ++i)
        {
            Connection &c = conns_[i];
            if (c.time_wait_deadline && *c.time_wait_deadline <= now)
            {
                c.time_wait_deadline.reset();
                c.state = TcpState::Closed;
                c.rto_deadline.reset();
                continue;
            }
            if (c.state != TcpState::Closed && c.rto_deadline && *c.rto_deadline <= now)
            {
                retransmit(i, now);
            }
        }
    }

    std::optional<SimTime> Stack::next_delayed_ack_deadline() const
    {
        std::optional<SimTime> best;
        for (const auto &c : conns_)
        {
            if (c.pending_ack && c.state != TcpState::Closed && (!best || c.ack_deadline < *best))
            {
                best = c.ack_deadline;
            }
        }
        return best;
    }

    std::optional<SimTime> Stack::next_retransmit_deadline() const
    {
        std::optional<SimTime> best;
        for (const auto &c : conns_)
        {
            for (const auto &d : {c.rto_deadline, c.time_wait_deadline})
            {
                if (d && c.state != TcpState::Closed && (!best || *d < *best))
                {
                    best = d;
                }
            }
        }
        return best;
    }

    void Stack::arm_rto(Connection &c, SimTime now)
    {
        if (!c.rto_deadline)
        {
            c.rto_deadline = now + c.rto;
        }
    }

    void Stack::retransmit(ConnId id, SimTime now)
    {
        Connection &c = conns_[id];
        if (c.nrtx >= config_.max_retransmissions)
        {
            send_segment(c, c.snd_nxt, tcp_flags::RST | tcp_flags::ACK, {}, false);
            ++stats_.rst_sent;
            enter_closed(id, CloseReason::Timeout);
            return;
        }
        ++c.nrtx;
        c.rto = std::min(SimTime{c.rto.micros * 2}, config_.max_rto);
        c.rto_deadline = now + c.rto;
        switch (c.state)
        {
        case TcpState::SynSent:
            send_segment(c, c.iss, tcp_flags::SYN, {}, true);
            return;
        case TcpState::SynRcvd:
            send_segment(c, c.iss, tcp_flags::SYN | tcp_flags::ACK, {}, true);
            return;
        default:
            break;
        }
        // Go back to the first unacknowledged byte.
        c.snd_nxt = c.snd_una;
        if (c.fin_sent && c.snd_una != c.snd_max)
        {
            c.fin_sent = false;
        }
        const auto saved_state = c.state;
        try_send(id, now);
        // A resent FIN must not advance the state machine a second time.
        Connection &cc = conns_[id];
        if (saved_state == TcpState::FinWait1 || saved_state == TcpState::Closing ||
            saved_state == TcpState::LastAck)
        {
            cc.state = saved_state;
        }
    }

    void Stack::enter_closed(ConnId id, CloseReason reason)
    {
        Connection &c = conns_[id];
        c.state = TcpState::Closed;
        c.rto_deadline.reset();
        c.time_wait_deadline.reset();
        c.pending_ack = false;
        c.close_reason = reason;
        if (callbacks_.closed)
        {
            callbacks_.closed(*this, id, reason);
        }
    }
}
