#pragma once

// Instance registry for hosting many uIP stacks in one process. Exactly one
// instance is active at a time; all traffic between the simulator and an
// instance passes through five exchangeable netstack driver slots, and stack
// output is captured by the MAC slot and handed back to the caller.

#include "nsc/uip.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nsc::cradle
{
    using StackId = std::uint32_t;

    /// Rewrites a frame in place; returning false drops it.
    using Transform = std::function<bool(Bytes &)>;

    struct Driver
    {
        std::string name;
        Transform input;
        Transform output;

        static Driver identity(std::string name);
    };

    struct NetstackDrivers
    {
        std::optional<Driver> mac;
        std::optional<Driver> rdc;
        std::optional<Driver> radio;
        std::optional<Driver> framer;
        std::optional<Driver> network;

        /// nsc_mac_driver, nullrdc_driver, nullradio_driver, framer_nullmac, uip_driver.
        static NetstackDrivers defaults();
        bool all_bound() const;
    };

    struct StubTable
    {
        std::function<SimTime()> clock;
        std::function<std::uint64_t()> random;
        std::function<void(std::string_view)> log;
    };

    struct OutFrame
    {
        StackId from = 0;
        Bytes bytes;

        bool operator==(const OutFrame &) const = default;
    };

    struct InstanceStats
    {
        std::uint64_t frames_in = 0;
        std::uint64_t frames_out = 0;
        std::uint64_t packetbuf_drops = 0;
        std::uint64_t driver_drops = 0;
    };

    class StackRegistry
    {
    public:
        explicit StackRegistry(std::size_t num_stacks);

        StackRegistry(const StackRegistry &) = delete;
        StackRegistry &operator=(const StackRegistry &) = delete;

        /// Lowest free id. Throws RegistryFull, InvalidConfig, UnboundDriver.
        StackId create_instance(const uip::Config &config, NetstackDrivers drivers = NetstackDrivers::defaults(),
                                std::optional<StubTable> stubs = std::nullopt);
        void destroy_instance(StackId id);

        /// Activates `id` for the duration of `action(stack)`. Frames the stack
        /// emits meanwhile are queued and returned by take_output().
        template <class F>
        decltype(auto) with_instance(StackId id, F &&action)
        {
            Slot &slot = activate(id);
            struct Guard
            {
                StackRegistry *r;
                ~Guard() { r->current_.reset(); }
            } guard{this};
            return std::forward<F>(action)(*slot.stack);
        }

        /// Simulator upcall: radio, rdc, framer, mac, network, then uIP input.
        std::vector<OutFrame> inject_frame(StackId id, ByteView frame, SimTime now);
        /// Periodic processing for every connection of the instance.
        std::vector<OutFrame> tick(StackId id, SimTime now);
        std::vector<OutFrame> poll(StackId id, uip::ConnHandle conn, SimTime now);
        /// Drains frames produced inside with_instance().
        std::vector<OutFrame> take_output(StackId id);

        /// The active instance. Throws NoActiveInstance.
        StackId get_stack_id() const;
        std::optional<StackId> current() const { return current_; }

        bool exists(StackId id) const;
        std::size_t capacity() const { return slots_.size(); }
        std::size_t size() const;
        const uip::Stack &stack(StackId id) const;
        const InstanceStats &stats(StackId id) const;
        const StubTable &stubs(StackId id) const;

    private:
        struct Slot
        {
            std::unique_ptr<uip::Stack> stack;
            NetstackDrivers drivers;
            StubTable stubs;
            InstanceStats stats;
            std::vector<OutFrame> output;
            SimTime clock{};
            Rng rng{0};
        };

        Slot &slot_at(StackId id);
        const Slot &slot_at(StackId id) const;
        Slot &activate(StackId id);
        void capture(StackId id, ByteView packet);

        std::vector<Slot> slots_;
        std::optional<StackId> current_;
    };
}
