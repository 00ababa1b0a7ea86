#include "nsc/cradle.hpp"

namespace nsc::cradle
{
    namespace
    {
        constexpr std::uint64_t kStubRandomSeed = 0x6e73632d72616e64ULL;

        bool run(const std::optional<Driver> &d, bool input, Bytes &frame)
        {
            const Transform &t = input ? d->input : d->output;
            return !t || t(frame);
        }
    }

    Driver Driver::identity(std::string name)
    {
        return Driver{std::move(name), {}, {}};
    }

    NetstackDrivers NetstackDrivers::defaults()
    {
        NetstackDrivers d;
        d.mac = Driver::identity("nsc_mac_driver");
        d.rdc = Driver::identity("nullrdc_driver");
        d.radio = Driver::identity("nullradio_driver");
        d.framer = Driver::identity("framer_nullmac");
        d.network = Driver::identity("uip_driver");
        return d;
    }

    bool NetstackDrivers::all_bound() const
    {
        return mac && rdc && radio && framer && network;
    }

    StackRegistry::StackRegistry(std::size_t num_stacks) : slots_(num_stacks)
    {
    }

    StackId StackRegistry::create_instance(const uip::Config &config, NetstackDrivers drivers,
                                           std::optional<StubTable> stubs)
    {
        if (!drivers.all_bound())
        {
            throw Error(Errc::UnboundDriver, "all five netstack slots (mac, rdc, radio, framer, network) must be bound");
        }
        config.validate();
        for (StackId id = 0; id < slots_.size(); ++id)
        {
            Slot &s = slots_[id];
            if (s.stack)
            {
                continue;
            }
            s = Slot{};
            s.stack = std::make_unique<uip::Stack>(config);
            s.drivers = std::move(drivers);
            s.rng = Rng(kStubRandomSeed).fork(id);
            if (stubs)
            {
                s.stubs = std::move(*stubs);
            }
            if (!s.stubs.clock)
            {
                s.stubs.clock = [&s] { return s.clock; };
            }
            if (!s.stubs.random)
            {
                s.stubs.random = [&s] { return s.rng.next(); };
            }
            if (!s.stubs.log)
            {
                s.stubs.log = [](std::string_view) {};
            }
            s.stack->set_output([this, id](ByteView pkt) { capture(id, pkt); });
            return id;
        }
        throw Error(Errc::RegistryFull, "all " + std::to_string(slots_.size()) + " stack slots in use");
    }

    void StackRegistry::destroy_instance(StackId id)
    {
        slot_at(id);
        if (current_ == id)
        {
            throw Error(Errc::NestedActivation, "cannot destroy the active instance");
        }
        slots_[id] = Slot{};
    }

    StackRegistry::Slot &StackRegistry::slot_at(StackId id)
    {
        if (id >= slots_.size() || !slots_[id].stack)
        {
            throw Error(Errc::UnknownStackId, "no instance " + std::to_string(id));
        }
        return slots_[id];
    }

    const StackRegistry::Slot &StackRegistry::slot_at(StackId id) const
    {
        if (id >= slots_.size() || !slots_[id].stack)
        {
            throw Error(Errc::UnknownStackId, "no instance " + std::to_string(id));
        }
        return slots_[id];
    }

    StackRegistry::Slot &StackRegistry::activate(StackId id)
    {
        if (current_)
        {
            throw Error(Errc::NestedActivation,
                        "instance " + std::to_string(*current_) + " already active, cannot activate " +
                            std::to_string(id));
        }
        Slot &s = slot_at(id);
        current_ = id;
        return s;
    }

    void StackRegistry::capture(StackId id, ByteView packet)
    {
        Slot &s = slots_[id];
        Bytes frame(packet.begin(), packet.end());
        for (const auto *d : {&s.drivers.network, &s.drivers.mac, &s.drivers.rdc, &s.drivers.framer, &s.drivers.radio})
        {
            if (!run(*d, false, frame))
            {
                ++s.stats.driver_drops;
                return;
            }
        }
        ++s.stats.frames_out;
        s.output.push_back(OutFrame{id, std::move(frame)});
    }

    std::vector<OutFrame> StackRegistry::inject_frame(StackId id, ByteView frame, SimTime now)
    {
        with_instance(id, [&](uip::Stack &stack) {
            Slot &s = slots_[id];
            s.clock = now;
            ++s.stats.frames_in;
            if (frame.size() > stack.config().packetbuf_size)
            {
                ++s.stats.packetbuf_drops;
                ++stack.stats().too_large_drops;
                s.stubs.log("frame of " + std::to_string(frame.size()) + " bytes exceeds packetbuf");
                return;
            }
            Bytes f(frame.begin(), frame.end());
            for (const auto *d : {&s.drivers.radio, &s.drivers.rdc, &s.drivers.framer, &s.drivers.mac,
                                  &s.drivers.network})
            {
                if (!run(*d, true, f))
                {
                    ++s.stats.driver_drops;
                    return;
                }
            }
            stack.input(f, now);
        });
        return take_output(id);
    }

    std::vector<OutFrame> StackRegistry::tick(StackId id, SimTime now)
    {
        with_instance(id, [&](uip::Stack &stack) {
            slots_[id].clock = now;
            stack.periodic(now);
        });
        return take_output(id);
    }

    std::vector<OutFrame> StackRegistry::poll(StackId id, uip::ConnHandle conn, SimTime now)
    {
        with_instance(id, [&](uip::Stack &stack) {
            slots_[id].clock = now;
            stack.poll(conn, now);
        });
        return take_output(id);
    }

    std::vector<OutFrame> StackRegistry::take_output(StackId id)
    {
        return std::exchange(slot_at(id).output, {});
    }

    StackId StackRegistry::get_stack_id() const
    {
        if (!current_)
        {
            throw Error(Errc::NoActiveInstance, "no stack instance is active");
        }
        return *current_;
    }

    bool StackRegistry::exists(StackId id) const
    {
        return id < slots_.size() && slots_[id].stack != nullptr;
    }

    std::size_t StackRegistry::size() const
    {
        std::size_t n = 0;
        for (const auto &s : slots_)
        {
            n += s.stack ? 1 : 0;
        }
        return n;
    }

    const uip::Stack &StackRegistry::stack(StackId id) const
    {
        return *slot_at(id).stack;
    }

    const InstanceStats &StackRegistry::stats(StackId id) const
    {
        return slot_at(id).stats;
    }

    const StubTable &StackRegistry::stubs(StackId id) const
    {
        return slot_at(id).stubs;
    }
}
