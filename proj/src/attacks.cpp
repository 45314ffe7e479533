#include "sentinel/attacks.hpp"

#include <array>
#include <random>
#include <string>

namespace sentinel {

namespace {

AlpcPort& sole_client_comm_port(SystemState& state, KernelAddress client) {
    const auto owned = state.ports_owned_by(client, PortType::client_communication);
    if (owned.size() != 1) {
        throw SimulationError("attack: client must own exactly one client communication port");
    }
    return *state.find_port(owned.front());
}

const AlpcPort& live_connection_port(const SystemState& state, KernelAddress address) {
    const AlpcPort* port = state.find_port(address);
    if (port == nullptr || port->kind.type != PortType::connection) {
        throw SimulationError("attack: target is not a live connection port");
    }
    return *port;
}

}  // namespace

void AttackScenario::validate_roles() const {
    switch (kind) {
        case AttackKind::spoof1:
        case AttackKind::spoof2:
            if (!attacker_client || !target_server) {
                throw SimulationError("attack scenario: spoof1/spoof2 need attacker_client and target_server");
            }
            break;
        case AttackKind::spoof3:
            if (!victim_server || !target_server) {
                throw SimulationError("attack scenario: spoof3 needs victim_server and target_server");
            }
            break;
        case AttackKind::transient_noise:
            break;
    }
}

void attack1_spoof_client_connection_port(SystemState& state,
                                          KernelAddress client,
                                          KernelAddress target_connection_port) {
    AlpcPort& port = sole_client_comm_port(state, client);
    live_connection_port(state, target_connection_port);
    port.comm_info->connection_port = target_connection_port;
}

void attack2_spoof_and_cover(SystemState& state,
                             KernelAddress client,
                             KernelAddress target_connection_port,
                             KernelAddress replacement_server_comm_port) {
    attack1_spoof_client_connection_port(state, client, target_connection_port);

    // The server to silence is whoever still owns the client's registered
    // peer port.
    const KernelAddress peer = sole_client_comm_port(state, client).comm_info->server_comm_port;
    const AlpcPort* peer_port = state.find_port(peer);
    if (peer_port == nullptr) {
        throw SimulationError("attack2: client has no live peer server to terminate");
    }
    state.terminate_process(peer_port->owner_process);

    replace_server_comm_port(state, client, replacement_server_comm_port);
}

void replace_server_comm_port(SystemState& state,
                              KernelAddress client,
                              KernelAddress replacement_server_comm_port) {
    const AlpcPort* replacement = state.find_port(replacement_server_comm_port);
    if (replacement == nullptr || replacement->kind.type != PortType::server_communication) {
        throw SimulationError("attack: replacement is not a live server communication port");
    }
    sole_client_comm_port(state, client).comm_info->server_comm_port = replacement_server_comm_port;
}

void attack3_spoof_server_connection_port(SystemState& state,
                                          KernelAddress server,
                                          KernelAddress target_connection_port) {
    const auto owned = state.ports_owned_by(server, PortType::server_communication);
    if (owned.empty()) {
        throw SimulationError("attack: server owns no server communication port");
    }
    live_connection_port(state, target_connection_port);
    state.find_port(owned.front())->comm_info->connection_port = target_connection_port;
}

KernelAddress connection_port_of(const SystemState& state, KernelAddress server) {
    const auto owned = state.ports_owned_by(server, PortType::connection);
    if (owned.empty()) {
        throw SimulationError("scenario: server owns no connection port");
    }
    return owned.front();
}

KernelAddress server_comm_port_of(const SystemState& state, KernelAddress server) {
    const auto owned = state.ports_owned_by(server, PortType::server_communication);
    if (owned.empty()) {
        throw SimulationError("scenario: server owns no server communication port");
    }
    return owned.front();
}

std::vector<KernelAddress> inject_transient_clients(SystemState& state,
                                                    std::size_t count,
                                                    std::uint64_t seed) {
    if (count > 16) {
        throw SimulationError("inject_transient_clients: count must be at most 16");
    }
    std::vector<KernelAddress> out;
    if (count == 0) {
        return out;
    }
    std::vector<KernelAddress> connection_ports;
    for (const auto& [addr, port] : state.ports) {
        if (port.kind.type == PortType::connection) {
            connection_ports.push_back(addr);
        }
    }
    if (connection_ports.empty()) {
        throw SimulationError("inject_transient_clients: no live connection port to reference");
    }
    static constexpr std::array<const char*, 6> images = {
        "svchost.exe", "msedge.exe",          "ctfmon.exe",
        "dllhost.exe", "RuntimeBroker.exe",   "backgroundTaskHost.exe",
    };
    // Raw engine output with modulo keeps the choice identical across
    // standard library implementations.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::string image = images[rng() % images.size()];
        const KernelAddress referenced = connection_ports[rng() % connection_ports.size()];

        const ProcessRecord& proc = state.create_process(image);
        const KernelAddress port_addr = state.allocate_address();
        const KernelAddress info_addr = state.allocate_address();

        AlpcPort port;
        port.address = port_addr;
        port.kind = PortKind{PortType::client_communication, {}};
        port.owner_process = proc.address;
        port.comm_info = CommunicationInfo{};
        port.comm_info->address = info_addr;
        port.comm_info->connection_port = referenced;
        // A connection caught mid-teardown: the peer's port is already gone.
        port.comm_info->server_comm_port = kNullAddress;
        port.comm_info->client_comm_port = port_addr;
        state.ports.emplace(port_addr, std::move(port));

        out.push_back(proc.address);
    }
    return out;
}

}  // namespace sentinel
