// Scenario runner: nodes, routed point-to-point links, applications.

#include "nsc/cradle.hpp"
#include "nsc/scenario.hpp"
#include "nsc/trace.hpp"

#include <deque>
#include <map>
#include <memory>
#include <set>

namespace nsc::scenario
{
    namespace
    {
        // Incomplete datagrams are dropped after this long.
        constexpr SimTime kReassemblyTimeout = SimTime::sec(30);

        struct Route
        {
            std::size_t link = 0;
            int dir = 0;
        };

        struct NodeRt
        {
            const NodeSpec *spec = nullptr;
            Ipv4Addr addr;
            std::optional<cradle::StackId> uip_id;
            std::unique_ptr<full::Stack> full;
            std::map<NodeId, Route> routes;
            std::map<uip::ConnHandle, std::size_t> uip_conn_app;
            std::map<full::ConnId, std::size_t> full_conn_app;
            std::map<uip::UdpHandle, std::size_t> uip_udp_app;
            // Listening application per local port.
            std::map<std::uint16_t, std::size_t> listeners;
            std::set<std::pair<SimTime, EventKind>> armed;
        };

        struct LinkRt
        {
            const LinkSpec *spec = nullptr;
            Rng rng;
            SimTime busy_until[2]{};
            std::uint16_t next_id[2]{};
            LinkCounters counters;
            std::vector<trace::PcapWriter *> traces;
        };

        struct Counters
        {
            std::uint64_t sent = 0, acked = 0, retransmitted = 0, outstanding = 0, bytes_acked = 0;
            bool timedout = false;
        };

        struct EchoState
        {
            Bytes pending;
            std::size_t inflight = 0;
        };

        struct AppRt
        {
            const AppSpec *spec = nullptr;
            std::size_t node = 0;
            std::optional<std::size_t> peer;
            bool started = false;
            std::optional<uip::ConnHandle> uip_conn;
            std::optional<full::ConnId> full_conn;
            std::optional<uip::UdpHandle> udp;
            std::uint16_t local_port = 0;
            std::uint64_t offset = 0;
            std::size_t inflight = 0;
            std::optional<SimTime> completed;
            bool terminated = false;
            bool snapshot_pending = false;
            std::optional<Counters> snapshot;
            std::uint64_t bytes_delivered = 0;
            std::uint64_t datagrams_sent = 0;
            std::uint64_t datagrams_delivered = 0;
            std::map<uip::ConnHandle, EchoState> echo;
        };

        struct FlowKey
        {
            std::size_t node;
            std::uint32_t src;
            std::uint16_t src_port, dst_port;

            auto operator<=>(const FlowKey &) const = default;
        };

        struct Pending
        {
            SimTime first;
            std::vector<Fragment> fragments;
        };

        std::uint8_t pattern_byte(std::size_t app, std::uint64_t i)
        {
            return static_cast<std::uint8_t>((i * 131 + app * 17 + (i >> 8)) & 0xff);
        }

        class Runner
        {
        public:
            Runner(const Scenario &s, const RunOptions &options)
                : s_(s), options_(options), registry_(count_uip(s))
            {
                s_.validate();
                engine_.set_handler([this](Engine &, const Event &ev) { dispatch(ev); });
                build_nodes();
                build_links();
                build_routes();
                build_apps();
                open_traces();
            }

            RunResult run()
            {
                if (s_.duration.micros > 0)
                {
                    engine_.run_until(s_.duration);
                }
                for (auto &w : writers_)
                {
                    w->close();
                }
                return collect();
            }

        private:
            static std::size_t count_uip(const Scenario &s)
            {
                std::size_t n = 0;
                for (const auto &node : s.nodes)
                {
                    n += node.stack == StackKind::Uip ? 1 : 0;
                }
                return n;
            }

            SimTime now() const { return engine_.now(); }

            std::string node_label(std::size_t i) const { return "node " + std::to_string(nodes_[i].spec->id); }

            // Setup -----------------------------------------------------------

            void build_nodes()
            {
                const Rng isn_root = Rng(s_.seed).fork(2);
                nodes_.resize(s_.nodes.size());
                for (std::size_t i = 0; i < s_.nodes.size(); ++i)
                {
                    const NodeSpec &spec = s_.nodes[i];
                    NodeRt &n = nodes_[i];
                    n.spec = &spec;
                    n.addr = node_address(spec.id);
                    index_[spec.id] = i;
                    if (spec.stack == StackKind::Uip)
                    {
                        uip::Config cfg = spec.uip;
                        cfg.host_addr = n.addr;
                        n.uip_id = registry_.create_instance(cfg);
                        registry_.with_instance(*n.uip_id, [this, i](uip::Stack &st) {
                            st.set_tcp_app([this, i](uip::Stack &stk, uip::ConnHandle h, const uip::AppEvent &ev) {
                                on_uip_tcp(i, stk, h, ev);
                            });
                            st.set_udp_app([this, i](uip::Stack &stk, uip::UdpHandle u, const uip::UdpAppEvent &ev) {
                                on_uip_udp(i, stk, u, ev);
                            });
                        });
                        if (spec.uip.periodic_interval <= s_.duration)
                        {
                            engine_.schedule(spec.uip.periodic_interval, spec.id, EventKind::PeriodicTimer);
                        }
                    }
                    else
                    {
                        full::Config cfg = spec.full;
                        cfg.host_addr = n.addr;
                        cfg.isn_seed ^= isn_root.fork(spec.id).next();
                        n.full = std::make_unique<full::Stack>(cfg);
                        n.full->set_output([this, i](ByteView pkt) { emit(i, pkt); });
                        n.full->set_callbacks(full_callbacks(i));
                    }
                }
            }

            void build_links()
            {
                const Rng link_root = Rng(s_.seed).fork(1);
                links_.resize(s_.links.size());
                for (std::size_t i = 0; i < s_.links.size(); ++i)
                {
                    links_[i].spec = &s_.links[i];
                    links_[i].rng = link_root.fork(i);
                }
            }

            // Breadth-first next hops; ties go to the lower link index.
            void build_routes()
            {
                for (std::size_t src = 0; src < nodes_.size(); ++src)
                {
                    std::map<std::size_t, Route> first_hop;
                    std::deque<std::size_t> queue{src};
                    std::set<std::size_t> seen{src};
                    while (!queue.empty())
                    {
                        const std::size_t at = queue.front();
                        queue.pop_front();
                        for (std::size_t li = 0; li < links_.size(); ++li)
                        {
                            const LinkSpec &l = *links_[li].spec;
                            const std::size_t a = index_.at(l.a), b = index_.at(l.b);
                            std::size_t next;
                            int dir;
                            if (a == at)
                            {
                                next = b;
                                dir = 0;
                            }
                            else if (b == at)
                            {
                                next = a;
                                dir = 1;
                            }
                            else
                            {
                                continue;
                            }
                            if (!seen.insert(next).second)
                            {
                                continue;
                            }
                            first_hop[next] = at == src ? Route{li, dir} : first_hop.at(at);
                            queue.push_back(next);
                        }
                    }
                    for (const auto &[dst, r] : first_hop)
                    {
                        nodes_[src].routes[nodes_[dst].spec->id] = r;
                    }
                }
            }

            void build_apps()
            {
                apps_.resize(s_.apps.size());
                for (std::size_t i = 0; i < s_.apps.size(); ++i)
                {
                    const AppSpec &spec = s_.apps[i];
                    AppRt &a = apps_[i];
                    a.spec = &spec;
                    a.node = index_.at(spec.node);
                    if (spec.peer)
                    {
                        a.peer = index_.at(*spec.peer);
                    }
                    NodeRt &n = nodes_[a.node];
                    switch (spec.role)
                    {
                    case AppRole::Sink:
                    case AppRole::Echo:
                        if (n.listeners.contains(spec.port))
                        {
                            throw Error(Errc::ValidationError, node_label(a.node) + ": two listeners on port " +
                                                                   std::to_string(spec.port));
                        }
                        n.listeners[spec.port] = i;
                        if (n.uip_id)
                        {
                            registry_.with_instance(*n.uip_id, [&](uip::Stack &st) { st.tcp_listen(spec.port); });
                        }
                        else
                        {
                            n.full->listen(spec.port);
                        }
                        break;
                    case AppRole::UdpBlast:
                        bind_udp_receiver(*a.peer, spec.port);
                        [[fallthrough]];
                    case AppRole::BulkSender:
                        if (spec.start_time <= s_.duration)
                        {
                            engine_.schedule(spec.start_time, spec.node, EventKind::ScenarioAction, i);
                        }
                        break;
                    }
                }
            }

            void bind_udp_receiver(std::size_t node, std::uint16_t port)
            {
                NodeRt &n = nodes_[node];
                if (!udp_bound_.insert({node, port}).second)
                {
                    return;
                }
                if (n.uip_id)
                {
                    registry_.with_instance(*n.uip_id, [&](uip::Stack &st) {
                        const uip::UdpHandle u = st.udp_new(Ipv4Addr{0}, 0);
                        st.udp_bind(u, port);
                    });
                }
                else
                {
                    n.full->udp_bind(port);
                }
            }

            void open_traces()
            {
                if (!options_.out_dir)
                {
                    return;
                }
                std::filesystem::create_directories(*options_.out_dir);
                for (const auto &t : s_.traces)
                {
                    std::filesystem::path p = t.path;
                    if (p.is_relative())
                    {
                        p = *options_.out_dir / p;
                    }
                    writers_.push_back(std::make_unique<trace::PcapWriter>(p));
                    links_[t.link].traces.push_back(writers_.back().get());
                    traces_written_.push_back(p);
                }
            }

            // Event dispatch --------------------------------------------------

            void dispatch(const Event &ev)
            {
                const std::size_t node = index_.at(ev.target);
                try
                {
                    switch (ev.kind)
                    {
                    case EventKind::FrameArrival:
                        on_frame(node, static_cast<std::size_t>(ev.tag), ev.payload);
                        break;
                    case EventKind::PeriodicTimer:
                        on_periodic(node);
                        break;
                    case EventKind::DelayedAckTimer:
                        nodes_[node].armed.erase({now(), ev.kind});
                        nodes_[node].full->on_delayed_ack_timers(now());
                        break;
                    case EventKind::ScenarioAction:
                        start_app(static_cast<std::size_t>(ev.tag));
                        break;
                    case EventKind::AppPoll:
                        udp_tick(static_cast<std::size_t>(ev.tag));
                        break;
                    }
                }
                catch (const Error &e)
                {
                    throw Error(e.code(), node_label(node) + " at " + std::to_string(now().micros) +
                                              "us: " + e.message());
                }
                take_snapshots();
                arm_full_timers();
                monitor();
            }

            void on_periodic(std::size_t node)
            {
                NodeRt &n = nodes_[node];
                if (n.uip_id)
                {
                    route_all(node, registry_.tick(*n.uip_id, now()));
                    const SimTime next = now() + n.spec->uip.periodic_interval;
                    if (next <= s_.duration)
                    {
                        engine_.schedule(next, n.spec->id, EventKind::PeriodicTimer);
                    }
                    return;
                }
                n.armed.erase({now(), EventKind::PeriodicTimer});
                n.full->on_retransmit_timers(now());
            }

            void arm_full_timers()
            {
                for (auto &n : nodes_)
                {
                    if (!n.full)
                    {
                        continue;
                    }
                    const std::pair<std::optional<SimTime>, EventKind> deadlines[] = {
                        {n.full->next_delayed_ack_deadline(), EventKind::DelayedAckTimer},
                        {n.full->next_retransmit_deadline(), EventKind::PeriodicTimer},
                    };
                    for (const auto &[when, kind] : deadlines)
                    {
                        if (!when)
                        {
                            continue;
                        }
                        const SimTime t = std::max(*when, now());
                        if (t > s_.duration || !n.armed.insert({t, kind}).second)
                        {
                            continue;
                        }
                        engine_.schedule(t, n.spec->id, kind);
                    }
                }
            }

            void monitor()
            {
                for (const auto &n : nodes_)
                {
                    if (!n.uip_id)
                    {
                        continue;
                    }
                    const uip::Stack &st = registry_.stack(*n.uip_id);
                    const std::uint32_t limit = st.config().tcp_split ? 2 : 1;
                    for (uip::ConnHandle h = 0; h < st.connection_slots(); ++h)
                    {
                        const uip::Connection &c = st.connection(h);
                        const std::uint32_t inflight = c.inflight_is_data ? c.inflight_segments : 0;
                        ++monitor_.checks;
                        monitor_.max_inflight_segments = std::max(monitor_.max_inflight_segments, inflight);
                        if (inflight > limit)
                        {
                            ++monitor_.violations;
                        }
                    }
                }
            }

            // Links -----------------------------------------------------------

            void route_all(std::size_t node, const std::vector<cradle::OutFrame> &frames)
            {
                for (const auto &f : frames)
                {
                    emit(node, f.bytes);
                }
            }

            void emit(std::size_t node, ByteView packet)
            {
                ++packets_emitted_;
                if (!checksums_verify(packet))
                {
                    ++checksum_failures_;
                }
                if (options_.packet_observer)
                {
                    options_.packet_observer(now(), nodes_[node].spec->id, packet);
                }
                forward(node, packet);
            }

            void forward(std::size_t node, ByteView packet)
            {
                if (packet.size() < kIpv4HeaderLen)
                {
                    return;
                }
                const std::uint32_t dst = load32(packet, 16);
                const auto it = nodes_[node].routes.find(dst - 0x0a000001u);
                if (dst < 0x0a000001u || it == nodes_[node].routes.end())
                {
                    ++unroutable_;
                    return;
                }
                transmit(it->second, packet);
            }

            void transmit(const Route &r, ByteView datagram)
            {
                LinkRt &l = links_[r.link];
                const Link &spec = l.spec->link;
                ++l.counters.datagrams_sent;
                for (auto *w : l.traces)
                {
                    w->write(now(), datagram);
                }
                const NodeId receiver = r.dir == 0 ? l.spec->b : l.spec->a;
                for (const Fragment &frag : fragment(datagram, spec.frag_threshold, l.next_id[r.dir]++))
                {
                    Bytes frame = frag.encode();
                    const SimTime depart = std::max(now(), l.busy_until[r.dir]);
                    l.busy_until[r.dir] = depart + serialization_time(frame.size(), spec.bandwidth_bps);
                    ++l.counters.frames_sent;
                    if (const auto arrival = link_transmit(spec, frame, depart, l.rng))
                    {
                        ++l.counters.frames_delivered;
                        engine_.schedule(*arrival, receiver, EventKind::FrameArrival, r.link * 2 + r.dir,
                                         std::move(frame));
                    }
                }
            }

            void on_frame(std::size_t node, std::size_t tag, ByteView frame)
            {
                purge_reassembly();
                auto frag = Fragment::decode(frame);
                if (!frag)
                {
                    return;
                }
                if (frag->offset == 0 && frag->payload.size() == frag->total_len)
                {
                    deliver(node, tag / 2, frag->payload);
                    return;
                }
                const auto key = std::make_pair(tag, frag->datagram_id);
                auto [it, fresh] = reassembly_.try_emplace(key, Pending{now(), {}});
                if (fresh)
                {
                    expiry_.emplace_back(now(), key);
                }
                it->second.fragments.push_back(std::move(*frag));
                std::optional<Bytes> whole;
                try
                {
                    whole = reassemble(it->second.fragments);
                }
                catch (const Error &)
                {
                    // Stale fragments under a reused id; start over.
                    reassembly_.erase(it);
                    return;
                }
                if (whole)
                {
                    reassembly_.erase(it);
                    deliver(node, tag / 2, *whole);
                }
            }

            void purge_reassembly()
            {
                while (!expiry_.empty() && expiry_.front().first + kReassemblyTimeout <= now())
                {
                    const auto [t, key] = expiry_.front();
                    expiry_.pop_front();
                    const auto it = reassembly_.find(key);
                    if (it != reassembly_.end() && it->second.first == t)
                    {
                        reassembly_.erase(it);
                    }
                }
            }

            void deliver(std::size_t node, std::size_t link, ByteView datagram)
            {
                ++links_[link].counters.datagrams_delivered;
                NodeRt &n = nodes_[node];
                if (datagram.size() < kIpv4HeaderLen)
                {
                    return;
                }
                if (load32(datagram, 16) != n.addr.value)
                {
                    forward(node, datagram);
                    return;
                }
                if (n.uip_id)
                {
                    route_all(node, registry_.inject_frame(*n.uip_id, datagram, now()));
                }
                else
                {
                    n.full->input(datagram, now());
                }
            }

            // Applications ----------------------------------------------------

            void register_flow(std::size_t app, std::uint16_t local_port)
            {
                AppRt &a = apps_[app];
                a.local_port = local_port;
                flows_[FlowKey{*a.peer, nodes_[a.node].addr.value, local_port, a.spec->port}] = app;
            }

            AppRt *flow_for(std::size_t node, Ipv4Addr src, std::uint16_t src_port, std::uint16_t dst_port)
            {
                const auto it = flows_.find(FlowKey{node, src.value, src_port, dst_port});
                return it == flows_.end() ? nullptr : &apps_[it->second];
            }

            void start_app(std::size_t i)
            {
                AppRt &a = apps_[i];
                NodeRt &n = nodes_[a.node];
                const Ipv4Addr peer = nodes_[*a.peer].addr;
                a.started = true;
                if (a.spec->role == AppRole::UdpBlast)
                {
                    if (n.uip_id)
                    {
                        registry_.with_instance(*n.uip_id, [&](uip::Stack &st) {
                            a.udp = st.udp_new(peer, a.spec->port);
                            n.uip_udp_app[*a.udp] = i;
                            register_flow(i, st.udp_connection(*a.udp).local_port);
                        });
                    }
                    else
                    {
                        register_flow(i, static_cast<std::uint16_t>(40000 + i % 20000));
                    }
                    udp_tick(i);
                    return;
                }
                if (n.uip_id)
                {
                    registry_.with_instance(*n.uip_id, [&](uip::Stack &st) {
                        a.uip_conn = st.tcp_connect(peer, a.spec->port);
                        n.uip_conn_app[*a.uip_conn] = i;
                        register_flow(i, st.connection(*a.uip_conn).local_port);
                    });
                    route_all(a.node, registry_.poll(*n.uip_id, *a.uip_conn, now()));
                }
                else
                {
                    // The SYN goes out inside connect(), so the flow must be known first.
                    a.full_conn = n.full->connect(peer, a.spec->port, now());
                    n.full_conn_app[*a.full_conn] = i;
                    register_flow(i, n.full->connection(*a.full_conn).local_port);
                }
            }

            void udp_tick(std::size_t i)
            {
                AppRt &a = apps_[i];
                const std::uint64_t total = a.spec->bytes_total;
                const std::uint64_t sent = a.offset;
                if (sent >= total && total > 0)
                {
                    return;
                }
                const std::size_t len =
                    total == 0 ? a.spec->datagram_size
                               : static_cast<std::size_t>(std::min<std::uint64_t>(a.spec->datagram_size, total - sent));
                Bytes payload(len);
                for (std::size_t k = 0; k < len; ++k)
                {
                    payload[k] = pattern_byte(i, sent + k);
                }
                NodeRt &n = nodes_[a.node];
                if (n.uip_id)
                {
                    udp_payload_ = &payload;
                    registry_.with_instance(*n.uip_id, [&](uip::Stack &st) { st.poll_udp(*a.udp, now()); });
                    udp_payload_ = nullptr;
                    route_all(a.node, registry_.take_output(*n.uip_id));
                }
                else
                {
                    n.full->send_udp(nodes_[*a.peer].addr, a.local_port, a.spec->port, payload);
                }
                a.offset += len;
                ++a.datagrams_sent;
                if ((total == 0 || a.offset < total) && now() + a.spec->interval <= s_.duration)
                {
                    engine_.schedule(now() + a.spec->interval, a.spec->node, EventKind::AppPoll, i);
                }
                else if (total > 0 && a.offset >= total)
                {
                    a.completed = now();
                }
            }

            void on_uip_udp(std::size_t node, uip::Stack &st, uip::UdpHandle u, const uip::UdpAppEvent &ev)
            {
                if (ev.flags & uip::app_flags::poll)
                {
                    if (udp_payload_ && nodes_[node].uip_udp_app.contains(u))
                    {
                        st.udp_send(u, *udp_payload_);
                    }
                    return;
                }
                if (ev.flags & uip::app_flags::newdata)
                {
                    if (AppRt *a = flow_for(node, ev.src, ev.src_port, st.udp_connection(u).local_port))
                    {
                        a->bytes_delivered += ev.data.size();
                        ++a->datagrams_delivered;
                    }
                }
            }

            void on_uip_tcp(std::size_t node, uip::Stack &st, uip::ConnHandle h, const uip::AppEvent &ev)
            {
                NodeRt &n = nodes_[node];
                const uip::Connection &c = st.connection(h);
                if (const auto it = n.uip_conn_app.find(h); it != n.uip_conn_app.end())
                {
                    uip_sender(it->second, st, h, ev);
                    return;
                }
                const auto lt = n.listeners.find(c.local_port);
                if (lt == n.listeners.end())
                {
                    return;
                }
                if (ev.flags & uip::app_flags::newdata)
                {
                    if (AppRt *f = flow_for(node, c.remote_addr, c.remote_port, c.local_port))
                    {
                        f->bytes_delivered += ev.data.size();
                    }
                }
                if (apps_[lt->second].spec->role == AppRole::Echo)
                {
                    uip_echo(apps_[lt->second], st, h, ev);
                }
            }

            void uip_sender(std::size_t i, uip::Stack &st, uip::ConnHandle h, const uip::AppEvent &ev)
            {
                using namespace uip::app_flags;
                AppRt &a = apps_[i];
                const uip::Connection &c = st.connection(h);
                if (ev.flags & (closed | aborted | timedout))
                {
                    a.terminated = true;
                    a.snapshot_pending = true;
                    return;
                }
                if ((ev.flags & acked) && a.inflight > 0)
                {
                    a.offset += a.inflight;
                    a.inflight = 0;
                    if (a.offset >= a.spec->bytes_total && !a.completed)
                    {
                        a.completed = now();
                    }
                }
                if (ev.flags & rexmit)
                {
                    const Bytes chunk = make_chunk(i, a.offset, a.inflight);
                    st.app_send(h, chunk);
                    return;
                }
                if ((ev.flags & (connected | acked | poll)) && c.state == TcpState::Established && !c.outstanding() &&
                    !c.close_requested)
                {
                    if (a.offset < a.spec->bytes_total)
                    {
                        const std::uint64_t want = std::min<std::uint64_t>(a.spec->bytes_total - a.offset, c.mss);
                        a.inflight = st.app_send(h, make_chunk(i, a.offset, static_cast<std::size_t>(want)));
                    }
                    else
                    {
                        st.app_close(h);
                    }
                }
            }

            void uip_echo(AppRt &a, uip::Stack &st, uip::ConnHandle h, const uip::AppEvent &ev)
            {
                using namespace uip::app_flags;
                if (ev.flags & (closed | aborted | timedout))
                {
                    a.echo.erase(h);
                    return;
                }
                EchoState &e = a.echo[h];
                if ((ev.flags & acked) && e.inflight > 0)
                {
                    e.pending.erase(e.pending.begin(), e.pending.begin() + static_cast<std::ptrdiff_t>(e.inflight));
                    e.inflight = 0;
                }
                if (ev.flags & newdata)
                {
                    e.pending.insert(e.pending.end(), ev.data.begin(), ev.data.end());
                }
                if (ev.flags & rexmit)
                {
                    st.app_send(h, ByteView(e.pending.data(), e.inflight));
                    return;
                }
                const uip::Connection &c = st.connection(h);
                if (!e.pending.empty() && c.state == TcpState::Established && !c.outstanding())
                {
                    e.inflight = st.app_send(h, e.pending);
                }
            }

            Bytes make_chunk(std::size_t app, std::uint64_t offset, std::size_t len) const
            {
                Bytes out(len);
                for (std::size_t k = 0; k < len; ++k)
                {
                    out[k] = pattern_byte(app, offset + k);
                }
                return out;
            }

            full::Callbacks full_callbacks(std::size_t node)
            {
                full::Callbacks cb;
                cb.connected = [this, node](full::Stack &st, full::ConnId id) {
                    const auto it = nodes_[node].full_conn_app.find(id);
                    if (it == nodes_[node].full_conn_app.end())
                    {
                        return;
                    }
                    const std::size_t i = it->second;
                    const std::uint64_t total = apps_[i].spec->bytes_total;
                    if (total > 0)
                    {
                        st.send(id, make_chunk(i, 0, static_cast<std::size_t>(total)), now());
                    }
                    st.close(id, now());
                };
                cb.acked = [this, node](full::Stack &st, full::ConnId id, std::size_t) {
                    const auto it = nodes_[node].full_conn_app.find(id);
                    if (it == nodes_[node].full_conn_app.end())
                    {
                        return;
                    }
                    AppRt &a = apps_[it->second];
                    if (!a.completed && st.connection(id).bytes_acked >= a.spec->bytes_total)
                    {
                        a.completed = now();
                    }
                };
                cb.data = [this, node](full::Stack &st, full::ConnId id, ByteView data) {
                    const full::Connection &c = st.connection(id);
                    if (AppRt *f = flow_for(node, c.remote_addr, c.remote_port, c.local_port))
                    {
                        f->bytes_delivered += data.size();
                    }
                    const auto lt = nodes_[node].listeners.find(c.local_port);
                    if (lt != nodes_[node].listeners.end() && apps_[lt->second].spec->role == AppRole::Echo &&
                        !nodes_[node].full_conn_app.contains(id))
                    {
                        st.send(id, data, now());
                    }
                };
                cb.peer_closed = [this, node](full::Stack &st, full::ConnId id) {
                    if (!nodes_[node].full_conn_app.contains(id))
                    {
                        st.close(id, now());
                    }
                };
                cb.udp = [this, node](full::Stack &, const UdpDatagram &d) {
                    if (AppRt *f = flow_for(node, d.src, d.src_port, d.dst_port))
                    {
                        f->bytes_delivered += d.payload.size();
                        ++f->datagrams_delivered;
                    }
                };
                return cb;
            }

            // Results ---------------------------------------------------------

            Counters uip_counters(const uip::Connection &c) const
            {
                Counters k;
                k.sent = c.data_segments_sent;
                k.acked = c.data_segments_acked;
                k.retransmitted = c.data_segments_retransmitted;
                k.outstanding = (c.inflight_is_data ? c.inflight_segments : 0) + c.data_segments_abandoned;
                k.bytes_acked = c.bytes_acked;
                k.timedout = c.timed_out;
                return k;
            }

            void take_snapshots()
            {
                for (auto &a : apps_)
                {
                    if (!a.snapshot_pending)
                    {
                        continue;
                    }
                    a.snapshot_pending = false;
                    NodeRt &n = nodes_[a.node];
                    a.snapshot = uip_counters(registry_.stack(*n.uip_id).connection(*a.uip_conn));
                    n.uip_conn_app.erase(*a.uip_conn);
                }
            }

            RunResult collect()
            {
                RunResult r;
                r.scenario = s_.name;
                r.seed = s_.seed;
                r.duration = s_.duration;
                r.events = engine_.dispatched();
                r.digest = engine_.digest();
                r.monitor = monitor_;
                r.packets_emitted = packets_emitted_;
                r.checksum_failures = checksum_failures_;
                r.traces_written = traces_written_;
                for (const auto &l : links_)
                {
                    r.links.push_back(l.counters);
                }
                if (s_.duration.micros == 0)
                {
                    return r;
                }
                for (std::size_t i = 0; i < apps_.size(); ++i)
                {
                    const AppRt &a = apps_[i];
                    if (a.spec->role != AppRole::BulkSender && a.spec->role != AppRole::UdpBlast)
                    {
                        continue;
                    }
                    FlowStats f;
                    f.flow = r.flows.size();
                    f.src_node = a.spec->node;
                    f.dst_node = *a.spec->peer;
                    f.role = a.spec->role;
                    f.variant = nodes_[a.node].spec->variant;
                    f.bytes_delivered = a.bytes_delivered;
                    Counters k;
                    const NodeRt &n = nodes_[a.node];
                    if (a.spec->role == AppRole::UdpBlast)
                    {
                        k.sent = a.datagrams_sent;
                        k.acked = a.datagrams_delivered;
                        k.outstanding = a.datagrams_sent - a.datagrams_delivered;
                        k.bytes_acked = a.bytes_delivered;
                    }
                    else if (a.snapshot)
                    {
                        k = *a.snapshot;
                    }
                    else if (a.uip_conn)
                    {
                        k = uip_counters(registry_.stack(*n.uip_id).connection(*a.uip_conn));
                    }
                    else if (a.full_conn)
                    {
                        const full::Connection &c = n.full->connection(*a.full_conn);
                        k.sent = c.data_segments_sent;
                        k.acked = c.data_segments_acked;
                        k.retransmitted = c.data_segments_retransmitted;
                        k.outstanding = c.segment_ends.size();
                        k.bytes_acked = c.bytes_acked;
                        k.timedout = c.close_reason == full::CloseReason::Timeout;
                    }
                    f.bytes_acked = k.bytes_acked;
                    f.segments_sent = k.sent;
                    f.segments_acked = k.acked;
                    f.retransmissions = k.retransmitted;
                    f.segments_outstanding = k.outstanding;
                    f.timedout = k.timedout;
                    if (a.started)
                    {
                        const SimTime end = a.completed.value_or(s_.duration);
                        f.duration = end - a.spec->start_time;
                    }
                    if (f.duration.micros > 0)
                    {
                        f.goodput_bps = static_cast<double>(f.bytes_acked) * 8e6 / static_cast<double>(f.duration.micros);
                    }
                    if (const auto rt = n.routes.find(f.dst_node); rt != n.routes.end())
                    {
                        const LinkCounters &lc = links_[rt->second.link].counters;
                        f.frames_sent = lc.frames_sent;
                        f.frames_delivered = lc.frames_delivered;
                        if (lc.frames_sent > 0)
                        {
                            f.prr = static_cast<double>(lc.frames_delivered) / static_cast<double>(lc.frames_sent);
                        }
                    }
                    r.flows.push_back(std::move(f));
                }
                return r;
            }

            const Scenario &s_;
            const RunOptions &options_;
            Engine engine_;
            cradle::StackRegistry registry_;
            std::vector<NodeRt> nodes_;
            std::map<NodeId, std::size_t> index_;
            std::vector<LinkRt> links_;
            std::vector<AppRt> apps_;
            std::map<FlowKey, std::size_t> flows_;
            std::set<std::pair<std::size_t, std::uint16_t>> udp_bound_;
            std::map<std::pair<std::size_t, std::uint16_t>, Pending> reassembly_;
            std::deque<std::pair<SimTime, std::pair<std::size_t, std::uint16_t>>> expiry_;
            std::vector<std::unique_ptr<trace::PcapWriter>> writers_;
            std::vector<std::filesystem::path> traces_written_;
            const Bytes *udp_payload_ = nullptr;
            InflightMonitor monitor_;
            std::uint64_t packets_emitted_ = 0;
            std::uint64_t checksum_failures_ = 0;
            std::uint64_t unroutable_ = 0;
        };
    }

    RunResult run_scenario(const Scenario &s, const RunOptions &options)
    {
        Runner runner(s, options);
        return runner.run();
    }
}
