#include "naive_checksum.hpp"

namespace naive
{
    std::uint16_t checksum(const std::vector<std::uint8_t> &data)
    {
        std::uint64_t sum = 0;
        for (std::size_t i = 0; i < data.size(); i += 2)
        {
            std::uint64_t word = static_cast<std::uint64_t>(data[i]) << 8;
            if (i + 1 < data.size())
            {
                word |= data[i + 1];
            }
            sum += word;
        }
        while (sum > 0xffff)
        {
            sum = (sum & 0xffff) + (sum >> 16);
        }
        return static_cast<std::uint16_t>(~sum & 0xffff);
    }
}
