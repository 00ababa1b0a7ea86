#pragma once

#include <stdexcept>
#include <string>

namespace nsc
{
    enum class Errc
    {
        // sim-core
        SchedulingInPast,
        SimTimeOverflow,
        FrameTooLarge,
        DatagramTooLarge,
        InconsistentFragments,
        InvalidLink,
        // cradle
        RegistryFull,
        NestedActivation,
        UnknownStackId,
        NoActiveInstance,
        UnboundDriver,
        // stack-uip
        InvalidConfig,
        ConnectionTableFull,
        ListenerTableFull,
        SendWhileInflight,
        NotInCallback,
        NotEstablished,
        // trace
        NonMonotonicTimestamp,
        BadMagic,
        TruncatedRecord,
        UnsupportedLinktype,
        MultipleFlows,
        MalformedPacket,
        Io,
        // globalizer
        UnterminatedString,
        UnterminatedComment,
        UnsupportedInitializer,
        // cli
        ParseError,
        ValidationError,
        UnknownPreset,
        SchemaMismatch,
    };

    const char *errc_name(Errc code) noexcept;

    class Error : public std::runtime_error
    {
    public:
        Error(Errc code, const std::string &what)
            : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), message_(what)
        {
        }

        Errc code() const noexcept { return code_; }
        /// what() without the code name.
        const std::string &message() const noexcept { return message_; }

    private:
        Errc code_;
        std::string message_;
    };
}
