#pragma once

// Independent reference for the globalizer's rewrite decisions on a plain C
// subset: its own lexer, a declaration scanner, and brute-force resolution
// (each use is matched against every declaration whose scope covers it).
// Default configuration only (prefix global_, no include/exclude lists).

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>

namespace oracle
{
    struct Result
    {
        /// Names that become per-stack arrays: x for file scope, fn::x for statics.
        std::set<std::string> virtualized;
        /// (line, column) of every rewritten use, declarations excluded.
        std::set<std::pair<std::uint32_t, std::uint32_t>> sites;
        std::map<std::string, std::size_t> sites_per_symbol;
    };

    /// Throws std::runtime_error on input outside the supported subset.
    Result analyze(std::string_view source, const std::string &prefix = "global_");
}
