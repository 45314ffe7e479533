#pragma once

// Test-only oracles, independent of the emit/parse pipeline they check:
// record extraction straight from SystemState, a state-level wrong-port
// predicate, a canonical state description for mutation diffing, and a
// seeded generator for benign benches.

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sentinel/detector.hpp"
#include "sentinel/kernel_model.hpp"

namespace sentinel::oracle {

inline ClientProcessInfo client_info_of(const ProcessRecord& proc) {
    ClientProcessInfo info;
    info.address = proc.address;
    info.pid = proc.pid;
    info.image = proc.image_name;
    info.user = proc.user;
    info.command_path = proc.command_path;
    return info;
}

/// Records as a correct text pipeline must yield them, computed without any
/// emit/parse involvement.
inline ExtractedRecords extract_records_direct(const SystemState& state) {
    ExtractedRecords out;
    for (const auto& [addr, proc] : state.processes) {
        if (!proc.alive) {
            continue;
        }
        out.process_index.emplace(
            addr, ProcessDisplayInfo{proc.pid, proc.image_name, proc.user, proc.command_path});
    }
    for (const auto& [proc_addr, proc] : state.processes) {
        if (!proc.alive) {
            continue;
        }
        // Server side: the registration walk of each owned connection port.
        for (const auto& [port_addr, port] : state.ports) {
            if (port.owner_process != proc_addr || port.kind.type != PortType::connection) {
                continue;
            }
            for (const ConnectionRegistration& reg : state.registrations) {
                if (reg.connection_port != port_addr) {
                    continue;
                }
                for (const KernelAddress side : {reg.client_comm_port, reg.server_comm_port}) {
                    const AlpcPort* comm = state.find_port(side);
                    if (comm != nullptr && comm->comm_info &&
                        comm->comm_info->connection_port != port_addr) {
                        WrongPortAlert alert;
                        alert.reporting_process_address = proc_addr;
                        alert.comm_info_address = comm->comm_info->address;
                        alert.wrong_port_address = comm->comm_info->connection_port;
                        alert.registered_port_address = port_addr;
                        out.alerts.push_back(alert);
                    }
                }
            }
            for (const ConnectionRegistration& reg : state.registrations) {
                if (reg.connection_port != port_addr) {
                    continue;
                }
                ServerConnectionRecord rec;
                rec.server = ProcessInfo{proc_addr, proc.pid, proc.image_name};
                rec.connection_port_address = port_addr;
                rec.connection_port_name = port.kind.name;
                rec.server_comm_port = reg.server_comm_port;
                rec.client_comm_port = reg.client_comm_port;
                rec.client_process_address = reg.client_process;
                out.servers.push_back(rec);
            }
        }
        // Client side: the process's own communication ports.
        for (const auto& [port_addr, port] : state.ports) {
            if (port.owner_process != proc_addr || port.kind.type != PortType::client_communication) {
                continue;
            }
            ClientConnectionRecord rec;
            rec.client = client_info_of(proc);
            rec.client_comm_port = port_addr;
            rec.connection_port_address = port.comm_info->connection_port;
            const AlpcPort* target = state.find_port(port.comm_info->connection_port);
            if (target != nullptr && target->kind.type == PortType::connection) {
                rec.connection_port_name = target->kind.name;
                rec.server_process_address = target->owner_process;
                if (const ProcessRecord* owner = state.find_process(target->owner_process)) {
                    rec.server_image = owner->image_name;
                }
            }
            out.clients.push_back(rec);
        }
    }
    return out;
}

inline PortDirectory build_port_directory_direct(const SystemState& state) {
    PortDirectory dir;
    for (const auto& [port_addr, port] : state.ports) {
        if (port.kind.type != PortType::connection) {
            continue;
        }
        const ProcessRecord* owner = state.find_process(port.owner_process);
        if (owner == nullptr || !owner->alive) {
            continue;
        }
        PortSummary summary;
        summary.address = port_addr;
        summary.name = port.kind.name;
        summary.owner = ProcessInfo{owner->address, owner->pid, owner->image_name};
        summary.queue_count = port.main_queue->size();
        for (const ConnectionRegistration& reg : state.registrations) {
            if (reg.connection_port == port_addr) {
                summary.connections.push_back(
                    PortConnectionEntry{reg.client_process, reg.client_comm_port});
            }
        }
        summary.connection_count = summary.connections.size();
        dir.emplace(port_addr, std::move(summary));
    }
    return dir;
}

inline std::size_t alive_process_count(const SystemState& state) {
    std::size_t n = 0;
    for (const auto& [addr, proc] : state.processes) {
        n += proc.alive ? 1 : 0;
    }
    return n;
}

inline DetectionReport detect_direct(const SystemState& state) {
    return detect(extract_records_direct(state), build_port_directory_direct(state),
                  alive_process_count(state));
}

/// True iff some CommunicationInfo copy disagrees with its registration's
/// connection port while that port is still live.
inline bool state_has_wrong_port_mismatch(const SystemState& state) {
    for (const ConnectionRegistration& reg : state.registrations) {
        const AlpcPort* cp = state.find_port(reg.connection_port);
        if (cp == nullptr || cp->kind.type != PortType::connection) {
            continue;
        }
        for (const KernelAddress side : {reg.client_comm_port, reg.server_comm_port}) {
            const AlpcPort* comm = state.find_port(side);
            if (comm != nullptr && comm->comm_info &&
                comm->comm_info->connection_port != reg.connection_port) {
                return true;
            }
        }
    }
    return false;
}

/// True iff every comm_info copy of every registration matches the
/// registration exactly (the benign full-scan invariant).
inline bool registrations_consistent(const SystemState& state) {
    for (const ConnectionRegistration& reg : state.registrations) {
        for (const KernelAddress side : {reg.client_comm_port, reg.server_comm_port}) {
            const AlpcPort* comm = state.find_port(side);
            if (comm == nullptr || !comm->comm_info) {
                return false;
            }
            const CommunicationInfo& info = *comm->comm_info;
            if (info.connection_port != reg.connection_port ||
                info.server_comm_port != reg.server_comm_port ||
                info.client_comm_port != reg.client_comm_port) {
                return false;
            }
        }
    }
    return true;
}

/// Canonical multi-line description of every field in the state; two states
/// behave identically iff their descriptions are equal.
inline std::string describe_state(const SystemState& state) {
    std::ostringstream out;
    for (const auto& [addr, proc] : state.processes) {
        out << "process " << format_address(addr) << " pid=" << proc.pid
            << " image=" << proc.image_name << " alive=" << proc.alive
            << " user=" << (proc.user ? *proc.user : "-") << " path=";
        if (proc.command_path) {
            for (const std::string& p : *proc.command_path) {
                out << p << ";";
            }
        } else {
            out << "-";
        }
        out << "\n";
    }
    for (const auto& [addr, port] : state.ports) {
        out << "port " << format_address(addr) << " kind=" << static_cast<int>(port.kind.type)
            << " name=" << port.kind.name << " owner=" << format_address(port.owner_process);
        if (port.comm_info) {
            const CommunicationInfo& ci = *port.comm_info;
            out << " ci=" << format_address(ci.address) << " cp=" << format_address(ci.connection_port)
                << " scp=" << format_address(ci.server_comm_port)
                << " ccp=" << format_address(ci.client_comm_port)
                << " close=" << format_address(ci.close_message)
                << " ht=" << format_address(ci.handle_table);
        }
        if (port.main_queue) {
            out << " queue=[";
            for (const Message& m : *port.main_queue) {
                out << m.id << ":" << m.payload << ":" << format_address(m.sender_process) << ",";
            }
            out << "]";
        }
        out << " q5=" << port.pending_queue_len << "/" << port.large_message_queue_len << "/"
            << port.wait_queue_len << "/" << port.canceled_queue_len << "/" << port.direct_queue_len
            << "\n";
    }
    for (const ConnectionRegistration& reg : state.registrations) {
        out << "reg cp=" << format_address(reg.connection_port)
            << " ccp=" << format_address(reg.client_comm_port)
            << " scp=" << format_address(reg.server_comm_port)
            << " client=" << format_address(reg.client_process)
            << " server=" << format_address(reg.server_process) << "\n";
    }
    out << "next_address=" << state.next_address << " next_message_id=" << state.next_message_id
        << " next_pid=" << state.next_pid << "\n";
    return out.str();
}

/// Seeded benign bench: a few servers with named ports, a few clients each
/// connected to one port, some sends and receives. Uses only benign
/// operations, so the result is registration-consistent by construction.
inline SystemState random_benign_bench(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SystemState state;

    const std::size_t n_servers = 1 + rng() % 3;
    std::vector<KernelAddress> servers;
    std::vector<std::string> port_names;
    for (std::size_t i = 0; i < n_servers; ++i) {
        const KernelAddress server =
            state.create_process("service_host_" + std::to_string(i) + ".exe").address;
        servers.push_back(server);
        const std::size_t n_ports = 1 + rng() % 2;
        for (std::size_t p = 0; p < n_ports; ++p) {
            std::string name = "SvcPort_" + std::to_string(i) + "_" + std::to_string(p);
            state.create_connection_port(server, name);
            port_names.push_back(std::move(name));
        }
    }

    const std::size_t n_clients = rng() % 5;
    std::vector<KernelAddress> clients;
    for (std::size_t i = 0; i < n_clients; ++i) {
        std::optional<std::string> user;
        std::optional<std::vector<std::string>> path;
        if (rng() % 2 == 0) {
            user = "HOST\\user" + std::to_string(rng() % 3);
        }
        if (rng() % 2 == 0) {
            path = std::vector<std::string>{"C:\\apps\\tool" + std::to_string(i) + ".exe",
                                            "--mode=" + std::to_string(rng() % 9)};
        }
        const KernelAddress client =
            state.create_process("tool" + std::to_string(i) + ".exe", user, path).address;
        clients.push_back(client);
        state.connect(client, port_names[rng() % port_names.size()]);
    }

    if (!clients.empty()) {
        const std::size_t n_sends = rng() % 6;
        for (std::size_t i = 0; i < n_sends; ++i) {
            state.send(clients[rng() % clients.size()], "payload-" + std::to_string(i));
        }
    }
    for (const KernelAddress server : servers) {
        if (rng() % 2 == 0) {
            state.receive(server);
        }
    }
    return state;
}

}  // namespace sentinel::oracle
