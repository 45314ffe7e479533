#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sentinel/kernel_model.hpp"

namespace sentinel {

// ---------------------------------------------------------------------------
// Parsed record types for the debugger text surfaces. The grammar is
// documented in docs/formats.md.
// ---------------------------------------------------------------------------

struct ServerConnectionLine {
    KernelAddress server_comm_port;
    std::uint64_t flag_a = 0;
    KernelAddress client_comm_port;
    std::uint64_t flag_b = 0;
    KernelAddress client_process_address;
    std::optional<std::string> client_image;

    bool operator==(const ServerConnectionLine&) const = default;
};

struct ClientConnectionLine {
    KernelAddress client_comm_port;
    std::uint64_t flag_a = 0;
    KernelAddress connection_port_address;
    std::optional<std::string> connection_port_name;
    std::uint64_t flag_b = 0;
    KernelAddress server_process_address;
    std::optional<std::string> server_image;

    bool operator==(const ClientConnectionLine&) const = default;
};

struct WrongPortLine {
    KernelAddress comm_info_address;
    KernelAddress wrong_port_address;
    // Connection port block the line appeared under; informational only,
    // detection is position-independent.
    std::optional<KernelAddress> under_port_address;

    bool operator==(const WrongPortLine&) const = default;
};

struct CreatedPortBlock {
    KernelAddress port_address;
    std::string name;
    std::uint64_t queue_count = 0;
    std::uint64_t connection_count = 0;  // declared in the header line
    std::vector<ServerConnectionLine> connections;

    [[nodiscard]] bool count_mismatch() const { return connection_count != connections.size(); }
    bool operator==(const CreatedPortBlock&) const = default;
};

struct AlpcLppDump {
    KernelAddress process_address;
    std::vector<CreatedPortBlock> created_ports;
    std::vector<ClientConnectionLine> connected_lines;
    std::vector<WrongPortLine> wrong_port_lines;

    bool operator==(const AlpcLppDump&) const = default;
};

struct ProcessListEntry {
    KernelAddress address;
    std::uint64_t pid = 0;
    std::string image_name;

    bool operator==(const ProcessListEntry&) const = default;
};

struct ProcessListDump {
    std::vector<ProcessListEntry> entries;
    std::size_t skipped_lines = 0;  // blank / non-matching lines on parse

    bool operator==(const ProcessListDump&) const = default;
};

struct ProcessMetadata {
    std::optional<std::string> user;
    std::optional<std::vector<std::string>> command_path;

    bool operator==(const ProcessMetadata&) const = default;
};

/// One captured system view: the process list plus a per-process dump.
struct SnapshotBundle {
    ProcessListDump process_list;
    std::map<KernelAddress, AlpcLppDump> dumps;
    std::map<KernelAddress, ProcessMetadata> process_metadata;

    bool operator==(const SnapshotBundle&) const = default;
};

struct ParseError {
    std::size_t line_number = 0;  // 1-based
    std::string line;
    std::string message;
};

/// Minimal result carrier: exactly one of value/error is set. Parsers never
/// throw on malformed input.
template <typename T>
struct ParseResult {
    std::optional<T> value;
    std::optional<ParseError> error;

    [[nodiscard]] bool ok() const { return value.has_value(); }
    [[nodiscard]] const T& operator*() const { return *value; }
    [[nodiscard]] const T* operator->() const { return &*value; }

    static ParseResult success(T v) { return ParseResult{std::move(v), std::nullopt}; }
    static ParseResult failure(ParseError e) { return ParseResult{std::nullopt, std::move(e)}; }
};

// ---------------------------------------------------------------------------
// Emission (byte-stable for equal states) and tolerant parsing.
// ---------------------------------------------------------------------------

/// Renders the per-process connection dump: created connection ports with
/// their registered connections (wrong-port diagnostics first, one per
/// mismatching CommunicationInfo copy), then the process's own client
/// connections. Throws SimulationError for a dead or unknown process.
std::string emit_alpc_lpp(const SystemState& state, KernelAddress process);

ParseResult<AlpcLppDump> parse_alpc_lpp(std::string_view text);

/// One line per alive process, address order: "<address> <pid-hex> <image>".
std::string emit_dml_proc(const SystemState& state);

ParseResult<ProcessListDump> parse_dml_proc(std::string_view text);

/// The canonical on-disk capture format: a dml_proc section followed by a
/// delimited per-process metadata/dump section for every alive process.
/// UTF-8, LF line endings, lowercase hex.
std::string emit_snapshot(const SystemState& state);

ParseResult<SnapshotBundle> parse_snapshot(std::string_view text);

/// Wraps a bare single-process dump into a one-entry bundle (for feeding
/// hand-captured `!alpc /lpp` output straight to the detector).
SnapshotBundle bundle_from_dump(AlpcLppDump dump);

}  // namespace sentinel
