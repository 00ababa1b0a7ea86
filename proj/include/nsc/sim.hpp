#pragma once

#include "nsc/error.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <span>
#include <vector>

namespace nsc
{
    using Bytes = std::vector<std::uint8_t>;
    using ByteView = std::span<const std::uint8_t>;

    /// Simulation time in integer microseconds since the start of a run.
    struct SimTime
    {
        /// Runs are capped here so sums of two in-range times never overflow.
        static constexpr std::uint64_t kMaxMicros = std::uint64_t{1} << 62;

        std::uint64_t micros = 0;

        static constexpr SimTime us(std::uint64_t v) { return SimTime{v}; }
        static constexpr SimTime ms(std::uint64_t v) { return SimTime{v * 1000}; }
        static constexpr SimTime sec(std::uint64_t v) { return SimTime{v * 1000000}; }

        constexpr auto operator<=>(const SimTime &) const = default;

        double seconds() const { return static_cast<double>(micros) / 1e6; }
    };

    /// Checked addition; throws SimTimeOverflow past the run cap.
    SimTime operator+(SimTime a, SimTime b);
    SimTime operator-(SimTime a, SimTime b);

    /// SplitMix64. The state advances by the golden-ratio increment
    /// 0x9E3779B97F4A7C15 and each output is the state passed through the
    /// xor-shift/multiply finalizer (30/0xBF58476D1CE4E5B9, 27/0x94D049BB133111EB, 31).
    /// Only integer ops, so sequences are identical on every platform.
    class Rng
    {
    public:
        explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

        std::uint64_t next();

        /// Uniform in [0, 1) with 53 bits of resolution.
        double uniform();

        /// Uniform in [0, bound); bound must be nonzero.
        std::uint64_t below(std::uint64_t bound);

        /// Independent stream derived from this generator's seed and an index.
        /// Does not advance this generator.
        Rng fork(std::uint64_t index) const;

        std::uint64_t state() const { return state_; }

    private:
        std::uint64_t state_;
    };

    using NodeId = std::uint32_t;

    enum class EventKind : std::uint8_t
    {
        FrameArrival,
        PeriodicTimer,
        AppPoll,
        DelayedAckTimer,
        ScenarioAction,
    };

    const char *event_kind_name(EventKind kind) noexcept;

    struct Event
    {
        SimTime time;
        std::uint64_t seq = 0;
        NodeId target = 0;
        EventKind kind = EventKind::ScenarioAction;
        /// Small kind-specific datum (link index, connection slot, ...).
        std::uint64_t tag = 0;
        Bytes payload;
    };

    /// Single-threaded discrete-event engine. Events dispatch in (time, seq)
    /// order; seq is the insertion counter, so equal times are FIFO.
    class Engine
    {
    public:
        using Handler = std::function<void(Engine &, const Event &)>;

        Engine() = default;
        explicit Engine(Handler handler) : handler_(std::move(handler)) {}

        void set_handler(Handler handler) { handler_ = std::move(handler); }

        /// Queues an event. Its seq field is assigned here and returned.
        std::uint64_t schedule(Event event);
        std::uint64_t schedule(SimTime time, NodeId target, EventKind kind, std::uint64_t tag = 0,
                               Bytes payload = {});

        /// Dispatches every event with time <= t, including ones scheduled by
        /// handlers during this call, then sets now() = t.
        std::uint64_t run_until(SimTime t);

        SimTime now() const { return now_; }
        std::size_t pending() const { return queue_.size(); }
        std::uint64_t dispatched() const { return dispatched_; }

        /// FNV-1a over every dispatched (time, seq, target, kind, tag, payload).
        std::uint64_t digest() const { return digest_; }

    private:
        struct Later
        {
            bool operator()(const Event &a, const Event &b) const
            {
                if (a.time != b.time)
                {
                    return a.time > b.time;
                }
                return a.seq > b.seq;
            }
        };

        void absorb(const Event &event);

        Handler handler_;
        std::priority_queue<Event, std::vector<Event>, Later> queue_;
        SimTime now_{};
        std::uint64_t next_seq_ = 0;
        std::uint64_t dispatched_ = 0;
        std::uint64_t digest_ = 0xcbf29ce484222325ULL;
    };

    struct Link
    {
        SimTime latency{};
        std::uint64_t bandwidth_bps = 1;
        double loss_prob = 0.0;
        /// Maximum link-frame size in bytes, fragment header included.
        std::uint32_t frag_threshold = 1500;

        /// Throws InvalidLink when a field is out of range.
        void validate() const;
    };

    /// ceil(bytes * 8 * 1e6 / bandwidth) microseconds.
    SimTime serialization_time(std::size_t bytes, std::uint64_t bandwidth_bps);

    /// One Bernoulli loss draw per call (always consumed). Returns the arrival
    /// time, or nullopt when the frame is dropped.
    std::optional<SimTime> link_transmit(const Link &link, ByteView frame, SimTime depart, Rng &rng);

    /// Link-layer fragment. On the wire: id, offset, total_len, reserved (all
    /// 16-bit big-endian), then payload.
    struct Fragment
    {
        static constexpr std::size_t kHeaderSize = 8;

        std::uint16_t datagram_id = 0;
        std::uint16_t offset = 0;
        std::uint16_t total_len = 0;
        Bytes payload;

        Bytes encode() const;
        /// nullopt for frames shorter than the header or whose payload overruns total_len.
        static std::optional<Fragment> decode(ByteView frame);

        bool operator==(const Fragment &) const = default;
    };

    std::vector<Fragment> fragment(ByteView datagram, std::uint32_t threshold, std::uint16_t id);

    /// Returns the datagram once the fragments cover [0, total_len); nullopt
    /// while incomplete. Identical duplicates are tolerated.
    std::optional<Bytes> reassemble(std::span<const Fragment> fragments);
}
