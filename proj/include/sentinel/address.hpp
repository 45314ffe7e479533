#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sentinel {

/// A kernel-space virtual address. Zero is the distinguished null address;
/// the allocator never hands out zero.
struct KernelAddress {
    std::uint64_t value = 0;

    [[nodiscard]] constexpr bool is_null() const noexcept { return value == 0; }
    auto operator<=>(const KernelAddress&) const = default;
};

inline constexpr KernelAddress kNullAddress{};

/// Lowercase hexadecimal, no 0x prefix, no digit grouping ("ffff800000000100").
std::string format_address(KernelAddress addr);

/// Lowercase hexadecimal rendering of an arbitrary integer (pids, codes).
std::string format_hex(std::uint64_t value);

/// Tolerant address reader. Accepts mixed case, an optional 0x prefix and
/// optional backticks splitting the digits (debugger output prints
/// "fffffc302`48239a80"). Inputs longer than 16 digits are reduced to their
/// low 64 bits; captured logs occasionally carry mangled addresses and the
/// low bits are the recoverable part.
std::optional<KernelAddress> parse_address(std::string_view text);

}  // namespace sentinel
