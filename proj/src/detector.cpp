#include "sentinel/detector.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace sentinel {

namespace {

using ordered_json = nlohmann::ordered_json;

const ProcessDisplayInfo* find_display(const std::map<KernelAddress, ProcessDisplayInfo>& index,
                                       KernelAddress address) {
    auto it = index.find(address);
    return it == index.end() ? nullptr : &it->second;
}

ClientProcessInfo make_client_info(const std::map<KernelAddress, ProcessDisplayInfo>& index,
                                   KernelAddress address) {
    ClientProcessInfo info;
    info.address = address;
    if (const ProcessDisplayInfo* d = find_display(index, address)) {
        info.pid = d->pid;
        info.image = d->image;
        info.user = d->user;
        info.command_path = d->command_path;
    }
    return info;
}

using SuspiciousKey = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>;

SuspiciousKey key_of(const SuspiciousConnection& s) {
    return {s.client.client.address.value, s.client.client_comm_port.value,
            s.believed_port_address.value};
}

using AlertKey = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>;

AlertKey key_of(const WrongPortAlert& a) {
    return {a.reporting_process_address.value, a.comm_info_address.value, a.wrong_port_address.value};
}

std::string python_list(const std::vector<std::string>& items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i != 0) {
            out += ", ";
        }
        out += '\'';
        for (const char c : items[i]) {
            if (c == '\\' || c == '\'') {
                out += '\\';
            }
            out += c;
        }
        out += '\'';
    }
    out += "]";
    return out;
}

std::string image_or_unknown(const std::string& image) {
    return image.empty() ? "unknown" : image;
}

void append_connection_list(std::string& out, KernelAddress port,
                            const std::vector<PortConnectionEntry>& entries) {
    out += "Active connections of the " + format_address(port) + " :\n";
    for (const PortConnectionEntry& e : entries) {
        out += format_address(e.client_process_address) + " via Client Communication Port " +
               format_address(e.client_comm_port) + "\n";
    }
}

void append_client_details(std::string& out, const ClientProcessInfo& client) {
    if (client.user || client.command_path) {
        out += "Client process belongs to user " + (client.user ? *client.user : std::string("unknown")) +
               " , path: " +
               (client.command_path ? python_list(*client.command_path) : std::string("[]")) + "\n";
    }
}

ordered_json address_json(KernelAddress addr) {
    return format_address(addr);
}

ordered_json process_json(const ProcessInfo& info) {
    ordered_json j;
    j["address"] = address_json(info.address);
    j["pid"] = info.pid;
    j["image"] = info.image;
    return j;
}

ordered_json client_process_json(const ClientProcessInfo& info) {
    ordered_json j;
    j["address"] = address_json(info.address);
    j["pid"] = info.pid;
    j["image"] = info.image;
    j["user"] = info.user ? ordered_json(*info.user) : ordered_json(nullptr);
    j["path"] = info.command_path ? ordered_json(*info.command_path) : ordered_json(nullptr);
    return j;
}

ordered_json connections_json(const std::vector<PortConnectionEntry>& entries) {
    ordered_json arr = ordered_json::array();
    for (const PortConnectionEntry& e : entries) {
        ordered_json j;
        j["client_process_address"] = address_json(e.client_process_address);
        j["client_comm_port"] = address_json(e.client_comm_port);
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace

std::string_view to_string(MismatchReason reason) {
    switch (reason) {
        case MismatchReason::no_matching_server_record:
            return "NoMatchingServerRecord";
        case MismatchReason::server_denotes_different_client:
            return "ServerDenotesDifferentClient";
    }
    return "unknown";
}

ExtractedRecords extract_records(const SnapshotBundle& bundle) {
    ExtractedRecords out;
    for (const ProcessListEntry& entry : bundle.process_list.entries) {
        ProcessDisplayInfo info;
        info.pid = entry.pid;
        info.image = entry.image_name;
        if (auto it = bundle.process_metadata.find(entry.address); it != bundle.process_metadata.end()) {
            info.user = it->second.user;
            info.command_path = it->second.command_path;
        }
        out.process_index.emplace(entry.address, std::move(info));
    }
    for (const auto& [address, dump] : bundle.dumps) {
        const ClientProcessInfo client_info = make_client_info(out.process_index, address);
        for (const ClientConnectionLine& line : dump.connected_lines) {
            ClientConnectionRecord rec;
            rec.client = client_info;
            rec.client_comm_port = line.client_comm_port;
            rec.connection_port_address = line.connection_port_address;
            rec.connection_port_name = line.connection_port_name;
            rec.server_process_address = line.server_process_address;
            rec.server_image = line.server_image;
            out.clients.push_back(std::move(rec));
        }
        ProcessInfo server_info{address, client_info.pid, client_info.image};
        for (const CreatedPortBlock& blockRec : dump.created_ports) {
            for (const ServerConnectionLine& line : blockRec.connections) {
                ServerConnectionRecord rec;
                rec.server = server_info;
                rec.connection_port_address = blockRec.port_address;
                rec.connection_port_name = blockRec.name;
                rec.server_comm_port = line.server_comm_port;
                rec.client_comm_port = line.client_comm_port;
                rec.client_process_address = line.client_process_address;
                out.servers.push_back(std::move(rec));
            }
        }
        for (const WrongPortLine& line : dump.wrong_port_lines) {
            WrongPortAlert alert;
            alert.reporting_process_address = address;
            alert.comm_info_address = line.comm_info_address;
            alert.wrong_port_address = line.wrong_port_address;
            alert.registered_port_address = line.under_port_address;
            out.alerts.push_back(std::move(alert));
        }
    }
    return out;
}

PortDirectory build_port_directory(const SnapshotBundle& bundle) {
    PortDirectory dir;
    for (const auto& [address, dump] : bundle.dumps) {
        std::uint64_t pid = 0;
        std::string image;
        for (const ProcessListEntry& entry : bundle.process_list.entries) {
            if (entry.address == address) {
                pid = entry.pid;
                image = entry.image_name;
                break;
            }
        }
        for (const CreatedPortBlock& blockRec : dump.created_ports) {
            if (dir.count(blockRec.port_address) != 0) {
                continue;
            }
            PortSummary summary;
            summary.address = blockRec.port_address;
            summary.name = blockRec.name;
            summary.owner = ProcessInfo{address, pid, image};
            summary.queue_count = blockRec.queue_count;
            summary.connection_count = blockRec.connection_count;
            for (const ServerConnectionLine& line : blockRec.connections) {
                summary.connections.push_back(
                    PortConnectionEntry{line.client_process_address, line.client_comm_port});
            }
            dir.emplace(blockRec.port_address, std::move(summary));
        }
    }
    return dir;
}

std::optional<ServerConnectionRecord> match_client(const ClientConnectionRecord& client,
                                                   const std::vector<ServerConnectionRecord>& servers) {
    for (const ServerConnectionRecord& server : servers) {
        if (server.connection_port_address != client.connection_port_address) {
            continue;
        }
        if (server.client_process_address != client.client.address) {
            continue;
        }
        const bool comm_port_known =
            !server.client_comm_port.is_null() && !client.client_comm_port.is_null();
        if (comm_port_known && server.client_comm_port != client.client_comm_port) {
            continue;
        }
        return server;
    }
    return std::nullopt;
}

DetectionReport detect(const ExtractedRecords& records,
                       const PortDirectory& ports,
                       std::uint64_t scanned_processes) {
    DetectionReport report;
    report.scanned_processes = scanned_processes;
    report.scanned_connections = records.clients.size();

    report.alerts = records.alerts;
    for (WrongPortAlert& alert : report.alerts) {
        if (const ProcessDisplayInfo* d = find_display(records.process_index, alert.reporting_process_address)) {
            alert.reporting_process = ProcessInfo{alert.reporting_process_address, d->pid, d->image};
        }
        if (auto it = ports.find(alert.wrong_port_address); it != ports.end()) {
            alert.resolved_wrong_port_name = it->second.name;
            alert.resolved_owner = it->second.owner;
            alert.wrong_port_connections = it->second.connections;
        }
        if (alert.registered_port_address) {
            if (auto it = ports.find(*alert.registered_port_address); it != ports.end()) {
                alert.registered_port_name = it->second.name;
                alert.registered_port_connections = it->second.connections;
                // The registered block's first connection names the client
                // whose link the diagnostic is about; the text surface does
                // not bind the record to a specific line.
                if (!it->second.connections.empty()) {
                    alert.client = make_client_info(records.process_index,
                                                    it->second.connections.front().client_process_address);
                }
            }
        }
    }
    report.attack_detected = !report.alerts.empty();

    for (const ClientConnectionRecord& client : records.clients) {
        if (match_client(client, records.servers)) {
            continue;
        }
        SuspiciousConnection s;
        s.client = client;
        s.believed_port_name = client.connection_port_name;
        s.believed_port_address = client.connection_port_address;
        ProcessInfo believed{client.server_process_address, 0,
                             client.server_image ? *client.server_image : std::string()};
        if (const ProcessDisplayInfo* d = find_display(records.process_index, client.server_process_address)) {
            believed.pid = d->pid;
            believed.image = d->image;
        }
        if (!believed.address.is_null()) {
            s.believed_server = believed;
        }
        bool same_port_and_client = false;
        for (const ServerConnectionRecord& server : records.servers) {
            if (server.connection_port_address == client.connection_port_address &&
                server.client_process_address == client.client.address) {
                same_port_and_client = true;
                break;
            }
        }
        s.reason = same_port_and_client ? MismatchReason::server_denotes_different_client
                                        : MismatchReason::no_matching_server_record;
        if (auto it = ports.find(client.connection_port_address); it != ports.end()) {
            s.resolved_actual_owner = it->second.owner;
            s.queue_count = it->second.queue_count;
            s.active_connection_count = it->second.connection_count;
            s.active_connections = it->second.connections;
            if (!s.believed_port_name) {
                s.believed_port_name = it->second.name;
            }
        }
        report.suspicious.push_back(std::move(s));
    }
    return report;
}

DetectionReport detect(const SnapshotBundle& bundle) {
    return detect(extract_records(bundle), build_port_directory(bundle), bundle.dumps.size());
}

DetectionReport intersect_reports(const std::vector<DetectionReport>& reports) {
    if (reports.empty()) {
        throw std::invalid_argument("intersect_reports: at least one report is required");
    }
    DetectionReport merged;
    std::set<AlertKey> alert_keys;
    for (const DetectionReport& report : reports) {
        merged.scanned_processes += report.scanned_processes;
        merged.scanned_connections += report.scanned_connections;
        for (const WrongPortAlert& alert : report.alerts) {
            if (alert_keys.insert(key_of(alert)).second) {
                merged.alerts.push_back(alert);
            }
        }
    }
    for (const SuspiciousConnection& candidate : reports.front().suspicious) {
        const SuspiciousKey key = key_of(candidate);
        bool everywhere = true;
        for (std::size_t i = 1; i < reports.size() && everywhere; ++i) {
            everywhere = std::any_of(reports[i].suspicious.begin(), reports[i].suspicious.end(),
                                     [&](const SuspiciousConnection& s) { return key_of(s) == key; });
        }
        if (everywhere) {
            merged.suspicious.push_back(candidate);
        }
    }
    merged.attack_detected = !merged.alerts.empty();
    return merged;
}

std::string render_report(const DetectionReport& report, bool color) {
    std::string out;
    if (report.attack_detected) {
        out += color ? "\x1b[1;31mAttention! Attack detected!\x1b[0m\n" : "Attention! Attack detected!\n";
        for (const WrongPortAlert& alert : report.alerts) {
            const std::string reporting_image =
                alert.reporting_process ? image_or_unknown(alert.reporting_process->image) : "unknown";
            const std::string reporting_pid =
                alert.reporting_process ? format_hex(alert.reporting_process->pid) : "unknown";
            out += "Server process " + reporting_image + " with pid " + reporting_pid +
                   " with address " + format_address(alert.reporting_process_address) +
                   " is not connected correctly\n";
            if (alert.client) {
                out += "To client process " + image_or_unknown(alert.client->image) + " with pid " +
                       format_hex(alert.client->pid) + " with address " +
                       format_address(alert.client->address) + "\n";
                append_client_details(out, *alert.client);
            } else {
                out += "To client process unknown\n";
            }
            out += "The client was connected to ConnectionPort: " +
                   (alert.registered_port_name ? *alert.registered_port_name : std::string("unknown")) +
                   " with address: " +
                   (alert.registered_port_address ? format_address(*alert.registered_port_address)
                                                  : std::string("unknown")) +
                   "\n";
            if (alert.registered_port_address) {
                append_connection_list(out, *alert.registered_port_address,
                                       alert.registered_port_connections);
            }
            out += "Now the client seems to be connected to the Connection Port " +
                   (alert.resolved_wrong_port_name ? *alert.resolved_wrong_port_name
                                                   : std::string("unknown")) +
                   " with address: " + format_address(alert.wrong_port_address) + "\n";
            out += "that actually belongs to the server process " +
                   (alert.resolved_owner ? image_or_unknown(alert.resolved_owner->image)
                                         : std::string("unknown")) +
                   " with address " +
                   (alert.resolved_owner ? format_address(alert.resolved_owner->address)
                                         : std::string("unknown")) +
                   "\n";
            append_connection_list(out, alert.wrong_port_address, alert.wrong_port_connections);
        }
    } else {
        out += "No attack detected.\n";
    }
    out += "\n";
    if (report.suspicious.empty()) {
        out += "No suspicious connections found.\n";
    } else {
        out += "Suspicious connections found:\n";
        for (const SuspiciousConnection& s : report.suspicious) {
            out += "Client process: " + image_or_unknown(s.client.client.image) + " with pid: " +
                   format_hex(s.client.client.pid) + " with address: " +
                   format_address(s.client.client.address) + " and ClientCommunicationPort: " +
                   format_address(s.client.client_comm_port) + "\n";
            append_client_details(out, s.client.client);
            const ProcessInfo* server = s.resolved_actual_owner ? &*s.resolved_actual_owner
                                        : s.believed_server     ? &*s.believed_server
                                                                : nullptr;
            if (server != nullptr) {
                out += "Server process: " + image_or_unknown(server->image) + " with pid " +
                       format_hex(server->pid) + " with address: " + format_address(server->address) +
                       "\n";
            } else {
                out += "Server process: unknown\n";
            }
            out += "ConnectionPort: " +
                   (s.believed_port_name ? *s.believed_port_name : std::string("unknown")) +
                   " with address: " + format_address(s.believed_port_address) + "\n";
            if (s.queue_count && s.active_connection_count) {
                out += "This Connection Port has " + std::to_string(*s.queue_count) +
                       " messages in a queue and " + std::to_string(*s.active_connection_count) +
                       " active connections\n";
                append_connection_list(out, s.believed_port_address, s.active_connections);
            }
            out += "\n";
        }
    }
    out += "Scanned " + std::to_string(report.scanned_processes) + " process dumps, " +
           std::to_string(report.scanned_connections) + " client connections.\n";
    return out;
}

std::string render_report_json(const DetectionReport& report, int indent) {
    ordered_json j;
    j["attack_detected"] = report.attack_detected;
    j["scanned_processes"] = report.scanned_processes;
    j["scanned_connections"] = report.scanned_connections;
    ordered_json alerts = ordered_json::array();
    for (const WrongPortAlert& alert : report.alerts) {
        ordered_json a;
        a["reporting_process_address"] = address_json(alert.reporting_process_address);
        a["reporting_process"] =
            alert.reporting_process ? process_json(*alert.reporting_process) : ordered_json(nullptr);
        a["comm_info_address"] = address_json(alert.comm_info_address);
        a["wrong_port_address"] = address_json(alert.wrong_port_address);
        a["resolved_wrong_port_name"] = alert.resolved_wrong_port_name
                                            ? ordered_json(*alert.resolved_wrong_port_name)
                                            : ordered_json(nullptr);
        a["resolved_owner"] =
            alert.resolved_owner ? process_json(*alert.resolved_owner) : ordered_json(nullptr);
        a["registered_port_address"] = alert.registered_port_address
                                           ? address_json(*alert.registered_port_address)
                                           : ordered_json(nullptr);
        a["registered_port_name"] = alert.registered_port_name
                                        ? ordered_json(*alert.registered_port_name)
                                        : ordered_json(nullptr);
        a["client"] = alert.client ? client_process_json(*alert.client) : ordered_json(nullptr);
        a["registered_port_connections"] = connections_json(alert.registered_port_connections);
        a["wrong_port_connections"] = connections_json(alert.wrong_port_connections);
        alerts.push_back(std::move(a));
    }
    j["alerts"] = std::move(alerts);
    ordered_json suspicious = ordered_json::array();
    for (const SuspiciousConnection& s : report.suspicious) {
        ordered_json e;
        e["client"] = client_process_json(s.client.client);
        e["client_comm_port"] = address_json(s.client.client_comm_port);
        ordered_json believed;
        believed["name"] =
            s.believed_port_name ? ordered_json(*s.believed_port_name) : ordered_json(nullptr);
        believed["address"] = address_json(s.believed_port_address);
        e["believed_connection_port"] = std::move(believed);
        e["believed_server"] =
            s.believed_server ? process_json(*s.believed_server) : ordered_json(nullptr);
        e["resolved_actual_owner"] =
            s.resolved_actual_owner ? process_json(*s.resolved_actual_owner) : ordered_json(nullptr);
        e["queue_count"] = s.queue_count ? ordered_json(*s.queue_count) : ordered_json(nullptr);
        e["active_connection_count"] = s.active_connection_count
                                           ? ordered_json(*s.active_connection_count)
                                           : ordered_json(nullptr);
        e["active_connections"] = connections_json(s.active_connections);
        e["reason"] = std::string(to_string(s.reason));
        suspicious.push_back(std::move(e));
    }
    j["suspicious"] = std::move(suspicious);
    return j.dump(indent);
}

std::string render_bundle_json(const SnapshotBundle& bundle, int indent) {
    ordered_json j;
    ordered_json processes = ordered_json::array();
    for (const ProcessListEntry& entry : bundle.process_list.entries) {
        ordered_json p;
        p["address"] = address_json(entry.address);
        p["pid"] = entry.pid;
        p["image"] = entry.image_name;
        processes.push_back(std::move(p));
    }
    j["processes"] = std::move(processes);
    j["skipped_process_lines"] = bundle.process_list.skipped_lines;
    ordered_json metadata = ordered_json::array();
    for (const auto& [address, meta] : bundle.process_metadata) {
        ordered_json m;
        m["process_address"] = address_json(address);
        m["user"] = meta.user ? ordered_json(*meta.user) : ordered_json(nullptr);
        m["path"] = meta.command_path ? ordered_json(*meta.command_path) : ordered_json(nullptr);
        metadata.push_back(std::move(m));
    }
    j["process_metadata"] = std::move(metadata);
    ordered_json dumps = ordered_json::array();
    for (const auto& [address, dump] : bundle.dumps) {
        ordered_json d;
        d["process_address"] = address_json(address);
        ordered_json created = ordered_json::array();
        for (const CreatedPortBlock& blockRec : dump.created_ports) {
            ordered_json b;
            b["address"] = address_json(blockRec.port_address);
            b["name"] = blockRec.name;
            b["queue_count"] = blockRec.queue_count;
            b["declared_connection_count"] = blockRec.connection_count;
            ordered_json conns = ordered_json::array();
            for (const ServerConnectionLine& line : blockRec.connections) {
                ordered_json c;
                c["server_comm_port"] = address_json(line.server_comm_port);
                c["flag_a"] = line.flag_a;
                c["client_comm_port"] = address_json(line.client_comm_port);
                c["flag_b"] = line.flag_b;
                c["client_process_address"] = address_json(line.client_process_address);
                c["client_image"] =
                    line.client_image ? ordered_json(*line.client_image) : ordered_json(nullptr);
                conns.push_back(std::move(c));
            }
            b["connections"] = std::move(conns);
            b["count_mismatch"] = blockRec.count_mismatch();
            created.push_back(std::move(b));
        }
        d["created_ports"] = std::move(created);
        ordered_json wrongs = ordered_json::array();
        for (const WrongPortLine& line : dump.wrong_port_lines) {
            ordered_json w;
            w["comm_info_address"] = address_json(line.comm_info_address);
            w["wrong_port_address"] = address_json(line.wrong_port_address);
            w["under_port_address"] = line.under_port_address
                                          ? address_json(*line.under_port_address)
                                          : ordered_json(nullptr);
            wrongs.push_back(std::move(w));
        }
        d["wrong_port_lines"] = std::move(wrongs);
        ordered_json connected = ordered_json::array();
        for (const ClientConnectionLine& line : dump.connected_lines) {
            ordered_json c;
            c["client_comm_port"] = address_json(line.client_comm_port);
            c["flag_a"] = line.flag_a;
            c["connection_port_address"] = address_json(line.connection_port_address);
            c["connection_port_name"] = line.connection_port_name
                                            ? ordered_json(*line.connection_port_name)
                                            : ordered_json(nullptr);
            c["flag_b"] = line.flag_b;
            c["server_process_address"] = address_json(line.server_process_address);
            c["server_image"] =
                line.server_image ? ordered_json(*line.server_image) : ordered_json(nullptr);
            connected.push_back(std::move(c));
        }
        d["connected"] = std::move(connected);
        dumps.push_back(std::move(d));
    }
    j["dumps"] = std::move(dumps);
    return j.dump(indent);
}

}  // namespace sentinel
