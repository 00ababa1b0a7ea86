#include "nsc/error.hpp"

namespace nsc
{
    const char *errc_name(Errc code) noexcept
    {
        switch (code)
        {
        case Errc::SchedulingInPast: return "SchedulingInPast";
        case Errc::SimTimeOverflow: return "SimTimeOverflow";
        case Errc::FrameTooLarge: return "FrameTooLarge";
        case Errc::DatagramTooLarge: return "DatagramTooLarge";
        case Errc::InconsistentFragments: return "InconsistentFragments";
        case Errc::InvalidLink: return "InvalidLink";
        case Errc::RegistryFull: return "RegistryFull";
        case Errc::NestedActivation: return "NestedActivation";
        case Errc::UnknownStackId: return "UnknownStackId";
        case Errc::NoActiveInstance: return "NoActiveInstance";
        case Errc::UnboundDriver: return "UnboundDriver";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::ConnectionTableFull: return "ConnectionTableFull";
        case Errc::ListenerTableFull: return "ListenerTableFull";
        case Errc::SendWhileInflight: return "SendWhileInflight";
        case Errc::NotInCallback: return "NotInCallback";
        case Errc::NotEstablished: return "NotEstablished";
        case Errc::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
        case Errc::BadMagic: return "BadMagic";
        case Errc::TruncatedRecord: return "TruncatedRecord";
        case Errc::UnsupportedLinktype: return "UnsupportedLinktype";
        case Errc::MultipleFlows: return "MultipleFlows";
        case Errc::MalformedPacket: return "MalformedPacket";
        case Errc::Io: return "Io";
        case Errc::UnterminatedString: return "UnterminatedString";
        case Errc::UnterminatedComment: return "UnterminatedComment";
        case Errc::UnsupportedInitializer: return "UnsupportedInitializer";
        case Errc::ParseError: return "ParseError";
        case Errc::ValidationError: return "ValidationError";
        case Errc::UnknownPreset: return "UnknownPreset";
        case Errc::SchemaMismatch: return "SchemaMismatch";
        }
        return "Unknown";
    }
}
