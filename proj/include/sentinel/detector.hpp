#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/windbg_text.hpp"

namespace sentinel {

struct ProcessInfo {
    KernelAddress address;
    std::uint64_t pid = 0;
    std::string image;

    bool operator==(const ProcessInfo&) const = default;
};

struct ClientProcessInfo {
    KernelAddress address;
    std::uint64_t pid = 0;
    std::string image;
    std::optional<std::string> user;
    std::optional<std::vector<std::string>> command_path;

    bool operator==(const ClientProcessInfo&) const = default;
};

/// The client-side view of one connection, as reported by the client
/// process's own dump.
struct ClientConnectionRecord {
    ClientProcessInfo client;
    KernelAddress client_comm_port;
    KernelAddress connection_port_address;
    std::optional<std::string> connection_port_name;
    KernelAddress server_process_address;
    std::optional<std::string> server_image;

    bool operator==(const ClientConnectionRecord&) const = default;
};

/// The server-side view of one connection, derived from a created-port block.
struct ServerConnectionRecord {
    ProcessInfo server;
    KernelAddress connection_port_address;
    std::string connection_port_name;
    KernelAddress server_comm_port;
    KernelAddress client_comm_port;
    KernelAddress client_process_address;

    bool operator==(const ServerConnectionRecord&) const = default;
};

struct PortConnectionEntry {
    KernelAddress client_process_address;
    KernelAddress client_comm_port;

    bool operator==(const PortConnectionEntry&) const = default;
};

/// Everything a snapshot reveals about one connection port, keyed by its
/// address; used to resolve names, owners and queue statistics in reports.
struct PortSummary {
    KernelAddress address;
    std::string name;
    std::optional<ProcessInfo> owner;
    std::uint64_t queue_count = 0;
    std::uint64_t connection_count = 0;  // as declared in the block header
    std::vector<PortConnectionEntry> connections;

    bool operator==(const PortSummary&) const = default;
};

using PortDirectory = std::map<KernelAddress, PortSummary>;

/// The hard attack identifier: a "points to wrong port" diagnostic.
struct WrongPortAlert {
    KernelAddress reporting_process_address;
    KernelAddress comm_info_address;
    KernelAddress wrong_port_address;
    std::optional<KernelAddress> registered_port_address;  // block it appeared under

    // Context filled in by detect():
    std::optional<ProcessInfo> reporting_process;
    std::optional<std::string> resolved_wrong_port_name;
    std::optional<ProcessInfo> resolved_owner;
    std::optional<std::string> registered_port_name;
    std::optional<ClientProcessInfo> client;
    std::vector<PortConnectionEntry> registered_port_connections;
    std::vector<PortConnectionEntry> wrong_port_connections;

    bool operator==(const WrongPortAlert&) const = default;
};

enum class MismatchReason {
    no_matching_server_record,
    server_denotes_different_client,
};

std::string_view to_string(MismatchReason reason);

/// The soft identifier: a client-side connection no server-side record
/// corroborates. May be a benign transient; rescanning separates the two.
struct SuspiciousConnection {
    ClientConnectionRecord client;
    std::optional<std::string> believed_port_name;
    KernelAddress believed_port_address;
    std::optional<ProcessInfo> believed_server;
    std::optional<ProcessInfo> resolved_actual_owner;
    std::optional<std::uint64_t> queue_count;
    std::optional<std::uint64_t> active_connection_count;
    std::vector<PortConnectionEntry> active_connections;
    MismatchReason reason = MismatchReason::no_matching_server_record;

    bool operator==(const SuspiciousConnection&) const = default;
};

struct ProcessDisplayInfo {
    std::uint64_t pid = 0;
    std::string image;
    std::optional<std::string> user;
    std::optional<std::vector<std::string>> command_path;

    bool operator==(const ProcessDisplayInfo&) const = default;
};

struct ExtractedRecords {
    std::vector<ClientConnectionRecord> clients;
    std::vector<ServerConnectionRecord> servers;
    std::vector<WrongPortAlert> alerts;
    std::map<KernelAddress, ProcessDisplayInfo> process_index;

    bool operator==(const ExtractedRecords&) const = default;
};

struct DetectionReport {
    bool attack_detected = false;  // true iff alerts is non-empty
    std::vector<WrongPortAlert> alerts;
    std::vector<SuspiciousConnection> suspicious;
    std::uint64_t scanned_processes = 0;
    std::uint64_t scanned_connections = 0;

    bool operator==(const DetectionReport&) const = default;
};

/// Flattens every connection line and wrong-port diagnostic in the bundle
/// into records, joining client records with process metadata.
ExtractedRecords extract_records(const SnapshotBundle& bundle);

PortDirectory build_port_directory(const SnapshotBundle& bundle);

/// The server record corroborating this client record: equal connection
/// port, equal client process and — when both sides carry one — equal
/// client communication port.
std::optional<ServerConnectionRecord> match_client(const ClientConnectionRecord& client,
                                                   const std::vector<ServerConnectionRecord>& servers);

/// Core detection over already-extracted records.
DetectionReport detect(const ExtractedRecords& records,
                       const PortDirectory& ports,
                       std::uint64_t scanned_processes);

DetectionReport detect(const SnapshotBundle& bundle);

/// Unions the alerts and intersects the suspicious connections of several
/// scans; a connection that persists across scans is worth attention.
DetectionReport intersect_reports(const std::vector<DetectionReport>& reports);

std::string render_report(const DetectionReport& report, bool color = false);

/// Machine-readable rendering with a stable key order.
std::string render_report_json(const DetectionReport& report, int indent = 2);

/// Structured rendering of a parsed snapshot (inspection aid for `parse`).
std::string render_bundle_json(const SnapshotBundle& bundle, int indent = 2);

}  // namespace sentinel
