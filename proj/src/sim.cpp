#include "nsc/sim.hpp"

#include <algorithm>
#include <string>

namespace nsc
{
    SimTime operator+(SimTime a, SimTime b)
    {
        if (a.micros > SimTime::kMaxMicros || b.micros > SimTime::kMaxMicros ||
            a.micros + b.micros > SimTime::kMaxMicros)
        {
            throw Error(Errc::SimTimeOverflow, "time sum exceeds 2^62 us");
        }
        return SimTime{a.micros + b.micros};
    }

    SimTime operator-(SimTime a, SimTime b)
    {
        return SimTime{a.micros >= b.micros ? a.micros - b.micros : 0};
    }

    // Rng

    namespace
    {
        constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

        std::uint64_t mix64(std::uint64_t z)
        {
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
            return z ^ (z >> 31);
        }
    }

    std::uint64_t Rng::next()
    {
        state_ += kGolden;
        return mix64(state_);
    }

    double Rng::uniform()
    {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    std::uint64_t Rng::below(std::uint64_t bound)
    {
        // Rejection keeps the draw unbiased.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t v;
        do
        {
            v = next();
        } while (v >= limit);
        return v % bound;
    }

    Rng Rng::fork(std::uint64_t index) const
    {
        return Rng(mix64(state_ ^ mix64(index + kGolden)));
    }

    const char *event_kind_name(EventKind kind) noexcept
    {
        switch (kind)
        {
        case EventKind::FrameArrival: return "FrameArrival";
        case EventKind::PeriodicTimer: return "PeriodicTimer";
        case EventKind::AppPoll: return "AppPoll";
        case EventKind::DelayedAckTimer: return "DelayedAckTimer";
        case EventKind::ScenarioAction: return "ScenarioAction";
        }
        return "?";
    }

    // Engine

    std::uint64_t Engine::schedule(Event event)
    {
        if (event.time.micros > SimTime::kMaxMicros)
        {
            throw Error(Errc::SimTimeOverflow, "event time " + std::to_string(event.time.micros));
        }
        if (event.time < now_)
        {
            throw Error(Errc::SchedulingInPast, "event at " + std::to_string(event.time.micros) +
                                                    "us while now is " + std::to_string(now_.micros) + "us");
        }
        event.seq = next_seq_++;
        const auto seq = event.seq;
        queue_.push(std::move(event));
        return seq;
    }

    std::uint64_t Engine::schedule(SimTime time, NodeId target, EventKind kind, std::uint64_t tag, Bytes payload)
    {
        Event e;
        e.time = time;
        e.target = target;
        e.kind = kind;
        e.tag = tag;
        e.payload = std::move(payload);
        return schedule(std::move(e));
    }

    std::uint64_t Engine::run_until(SimTime t)
    {
        if (t.micros > SimTime::kMaxMicros)
        {
            throw Error(Errc::SimTimeOverflow, "run_until " + std::to_string(t.micros));
        }
        if (t < now_)
        {
            throw Error(Errc::SchedulingInPast, "run_until target precedes now");
        }
        std::uint64_t count = 0;
        while (!queue_.empty() && queue_.top().time <= t)
        {
            Event event = queue_.top();
            queue_.pop();
            now_ = event.time;
            absorb(event);
            ++count;
            ++dispatched_;
            if (handler_)
            {
                handler_(*this, event);
            }
        }
        now_ = t;
        return count;
    }

    void Engine::absorb(const Event &event)
    {
        auto feed = [this](std::uint64_t v, int bytes) {
            for (int i = 0; i < bytes; ++i)
            {
                digest_ ^= (v >> (8 * i)) & 0xff;
                digest_ *= 0x100000001b3ULL;
            }
        };
        feed(event.time.micros, 8);
        feed(event.seq, 8);
        feed(event.target, 4);
        feed(static_cast<std::uint64_t>(event.kind), 1);
        feed(event.tag, 8);
        feed(event.payload.size(), 4);
        for (auto b : event.payload)
        {
            feed(b, 1);
        }
    }

    // Link

    void Link::validate() const
    {
        if (bandwidth_bps == 0)
        {
            throw Error(Errc::InvalidLink, "bandwidth_bps must be positive");
        }
        if (!(loss_prob >= 0.0 && loss_prob <= 1.0))
        {
            throw Error(Errc::InvalidLink, "loss_prob must lie in [0,1]");
        }
        if (frag_threshold < Fragment::kHeaderSize + 1)
        {
            throw Error(Errc::InvalidLink, "frag_threshold must be >= 9");
        }
        if (latency.micros > SimTime::kMaxMicros)
        {
            throw Error(Errc::InvalidLink, "latency exceeds run cap");
        }
    }

    SimTime serialization_time(std::size_t bytes, std::uint64_t bandwidth_bps)
    {
        __extension__ using u128 = unsigned __int128;
        const u128 bits = static_cast<u128>(bytes) * 8u * 1000000u;
        const u128 us = (bits + bandwidth_bps - 1) / bandwidth_bps;
        if (us > SimTime::kMaxMicros)
        {
            throw Error(Errc::SimTimeOverflow, "serialization time");
        }
        return SimTime{static_cast<std::uint64_t>(us)};
    }

    std::optional<SimTime> link_transmit(const Link &link, ByteView frame, SimTime depart, Rng &rng)
    {
        if (frame.size() > link.frag_threshold)
        {
            throw Error(Errc::FrameTooLarge, std::to_string(frame.size()) + " bytes exceeds threshold " +
                                                 std::to_string(link.frag_threshold));
        }
        const double draw = rng.uniform();
        if (draw < link.loss_prob)
        {
            return std::nullopt;
        }
        return depart + serialization_time(frame.size(), link.bandwidth_bps) + link.latency;
    }

    // Fragmentation

    namespace
    {
        void put16(Bytes &out, std::uint16_t v)
        {
            out.push_back(static_cast<std::uint8_t>(v >> 8));
            out.push_back(static_cast<std::uint8_t>(v & 0xff));
        }

        std::uint16_t get16(ByteView in, std::size_t at)
        {
            return static_cast<std::uint16_t>((in[at] << 8) | in[at + 1]);
        }
    }

    Bytes Fragment::encode() const
    {
        Bytes out;
        out.reserve(kHeaderSize + payload.size());
        put16(out, datagram_id);
        put16(out, offset);
        put16(out, total_len);
        put16(out, 0);
        out.insert(out.end(), payload.begin(), payload.end());
        return out;
    }

    std::optional<Fragment> Fragment::decode(ByteView frame)
    {
        if (frame.size() < kHeaderSize)
        {
            return std::nullopt;
        }
        Fragment f;
        f.datagram_id = get16(frame, 0);
        f.offset = get16(frame, 2);
        f.total_len = get16(frame, 4);
        f.payload.assign(frame.begin() + kHeaderSize, frame.end());
        if (std::size_t{f.offset} + f.payload.size() > f.total_len)
        {
            return std::nullopt;
        }
        return f;
    }

    std::vector<Fragment> fragment(ByteView datagram, std::uint32_t threshold, std::uint16_t id)
    {
        if (datagram.size() > 0xffff)
        {
            throw Error(Errc::DatagramTooLarge, std::to_string(datagram.size()) + " bytes");
        }
        if (threshold < Fragment::kHeaderSize + 1)
        {
            throw Error(Errc::InvalidLink, "threshold leaves no room for payload");
        }
        const std::size_t effective = threshold - Fragment::kHeaderSize;
        const auto total = static_cast<std::uint16_t>(datagram.size());
        std::vector<Fragment> out;
        std::size_t offset = 0;
        do
        {
            const std::size_t n = std::min(effective, datagram.size() - offset);
            Fragment f;
            f.datagram_id = id;
            f.offset = static_cast<std::uint16_t>(offset);
            f.total_len = total;
            f.payload.assign(datagram.begin() + offset, datagram.begin() + offset + n);
            out.push_back(std::move(f));
            offset += n;
        } while (offset < datagram.size());
        return out;
    }

    std::optional<Bytes> reassemble(std::span<const Fragment> fragments)
    {
        if (fragments.empty())
        {
            return std::nullopt;
        }
        const auto id = fragments.front().datagram_id;
        const auto total = fragments.front().total_len;
        Bytes data(total, 0);
        std::vector<bool> have(total, false);
        std::size_t covered = 0;
        for (const auto &f : fragments)
        {
            if (f.datagram_id != id || f.total_len != total)
            {
                throw Error(Errc::InconsistentFragments, "fragments disagree on datagram id or total_len");
            }
            if (std::size_t{f.offset} + f.payload.size() > total)
            {
                throw Error(Errc::InconsistentFragments, "fragment overruns total_len");
            }
            for (std::size_t i = 0; i < f.payload.size(); ++i)
            {
                const std::size_t at = f.offset + i;
                if (have[at])
                {
                    if (data[at] != f.payload[i])
                    {
                        throw Error(Errc::InconsistentFragments,
                                    "overlapping fragments disagree at byte " + std::to_string(at));
                    }
                    continue;
                }
                have[at] = true;
                data[at] = f.payload[i];
                ++covered;
            }
        }
        if (covered != total)
        {
            return std::nullopt;
        }
        return data;
    }
}
