#pragma once

// Classic libpcap files (linktype 101, raw IPv4) and behavioral comparison of
// single-conversation traces with ISNs, ports and timestamps erased.

#include "nsc/sim.hpp"
#include "nsc/wire.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace nsc::trace
{
    inline constexpr std::uint32_t kPcapMagic = 0xa1b2c3d4;
    inline constexpr std::uint32_t kLinktypeRaw = 101;
    inline constexpr std::uint32_t kSnaplen = 65535;
    inline constexpr std::size_t kGlobalHeaderLen = 24;
    inline constexpr std::size_t kRecordHeaderLen = 16;

    struct Record
    {
        SimTime time;
        Bytes bytes;

        bool operator==(const Record &) const = default;
    };

    /// The 24-byte little-endian global header.
    Bytes pcap_global_header();
    /// Whole file image for `records`. Throws NonMonotonicTimestamp.
    Bytes encode_pcap(const std::vector<Record> &records);

    class PcapWriter
    {
    public:
        /// Creates or truncates `path` and writes the global header. Throws Io.
        explicit PcapWriter(const std::filesystem::path &path);
        ~PcapWriter();

        PcapWriter(const PcapWriter &) = delete;
        PcapWriter &operator=(const PcapWriter &) = delete;

        /// Throws NonMonotonicTimestamp, Io.
        void write(SimTime time, ByteView packet);
        void close();

        std::size_t records() const { return records_; }

    private:
        std::filesystem::path path_;
        std::ofstream out_;
        SimTime last_{};
        std::size_t records_ = 0;
        bool open_ = false;
    };

    /// Accepts either byte order. Throws BadMagic, TruncatedRecord, UnsupportedLinktype.
    std::vector<Record> parse_pcap(ByteView file);
    std::vector<Record> trace_read(const std::filesystem::path &path);

    enum class Direction
    {
        AtoB,
        BtoA,
    };

    enum class PortClass
    {
        Fixed,
        Ephemeral,
    };

    struct NormalizedPacket
    {
        Direction direction = Direction::AtoB;
        std::uint8_t proto = kProtoTcp;
        std::uint8_t tcp_flags = 0;
        std::uint32_t rel_seq = 0;
        std::uint32_t rel_ack = 0;
        std::uint32_t payload_len = 0;
        PortClass src_port_class = PortClass::Fixed;

        bool operator==(const NormalizedPacket &) const = default;
        std::string to_string() const;
    };

    /// Rebases sequence numbers to each side's ISN and erases ports and time.
    /// Without `endpoint_a`, A is the source of the first packet.
    /// Throws MultipleFlows, MalformedPacket.
    std::vector<NormalizedPacket> normalize(const std::vector<Record> &trace,
                                            std::optional<Ipv4Addr> endpoint_a = std::nullopt);

    /// Builds a concrete trace (ISNs 0, canonical addresses and ports) whose
    /// normalization is `packets`.
    std::vector<Record> synthesize(const std::vector<NormalizedPacket> &packets);

    struct Verdict
    {
        enum class Kind
        {
            Equal,
            FirstDivergence,
            LengthMismatch,
        };

        Kind kind = Kind::Equal;
        std::size_t index = 0;
        std::optional<NormalizedPacket> a, b;
        std::size_t len_a = 0, len_b = 0;

        bool equal() const { return kind == Kind::Equal; }
        std::string describe() const;
    };

    Verdict trace_compare(const std::vector<NormalizedPacket> &a, const std::vector<NormalizedPacket> &b);
}
