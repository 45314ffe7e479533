#include "sentinel/kernel_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace sentinel {

namespace {

bool text_format_safe(std::string_view text) {
    for (const char c : text) {
        if (static_cast<unsigned char>(c) < 0x20) {
            return false;
        }
    }
    if (text.find("')") != std::string_view::npos) {
        return false;  // the quoted-name terminator
    }
    return !text.empty() && text.front() != ' ' && text.back() != ' ';
}

}  // namespace

std::string format_address(KernelAddress addr) {
    return format_hex(addr.value);
}

std::string format_hex(std::uint64_t value) {
    if (value == 0) {
        return "0";
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::array<char, 16> buf{};
    std::size_t pos = buf.size();
    while (value != 0) {
        buf[--pos] = digits[value & 0xf];
        value >>= 4;
    }
    return std::string(buf.data() + pos, buf.size() - pos);
}

std::optional<KernelAddress> parse_address(std::string_view text) {
    std::size_t i = 0;
    if (text.size() >= 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
        i = 2;
    }
    std::uint64_t value = 0;
    std::size_t digits = 0;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '`') {
            continue;  // debugger digit grouping
        }
        int nibble;
        if (c >= '0' && c <= '9') {
            nibble = c - '0';
        } else if (c >= 'a' && c <= 'f') {
            nibble = c - 'a' + 10;
        } else if (c >= 'A' && c <= 'F') {
            nibble = c - 'A' + 10;
        } else {
            return std::nullopt;
        }
        value = (value << 4) | static_cast<std::uint64_t>(nibble);  // low 64 bits survive
        ++digits;
    }
    if (digits == 0) {
        return std::nullopt;
    }
    return KernelAddress{value};
}

KernelAddress SystemState::allocate_address() {
    KernelAddress out{next_address};
    next_address += kAddressStride;
    return out;
}

ProcessRecord& SystemState::create_process(std::string image_name,
                                           std::optional<std::string> user,
                                           std::optional<std::vector<std::string>> command_path) {
    if (image_name.empty()) {
        throw SimulationError("create_process: image name must be non-empty");
    }
    // Names surface verbatim in the dump text; keep them representable.
    if (!text_format_safe(image_name)) {
        throw SimulationError("create_process: image name is not representable in dump text");
    }
    if (user && !text_format_safe(*user)) {
        throw SimulationError("create_process: user is not representable in dump text");
    }
    ProcessRecord rec;
    rec.address = allocate_address();
    rec.pid = next_pid;
    next_pid += 4;
    rec.image_name = std::move(image_name);
    rec.user = std::move(user);
    rec.command_path = std::move(command_path);
    rec.alive = true;
    auto [it, inserted] = processes.emplace(rec.address, std::move(rec));
    return it->second;
}

AlpcPort& SystemState::create_connection_port(KernelAddress server, std::string name) {
    const ProcessRecord* owner = find_process(server);
    if (owner == nullptr || !owner->alive) {
        throw SimulationError("create_connection_port: owner process is not alive");
    }
    if (name.empty()) {
        throw SimulationError("create_connection_port: port name must be non-empty");
    }
    if (!text_format_safe(name)) {
        throw SimulationError("create_connection_port: port name is not representable in dump text");
    }
    if (find_connection_port_by_name(name) != nullptr) {
        throw SimulationError("create_connection_port: a live connection port already uses name '" + name + "'");
    }
    AlpcPort port;
    port.address = allocate_address();
    port.kind = PortKind{PortType::connection, std::move(name)};
    port.owner_process = server;
    port.main_queue.emplace();
    auto [it, inserted] = ports.emplace(port.address, std::move(port));
    return it->second;
}

SystemState::ConnectResult SystemState::connect(KernelAddress client, std::string_view port_name) {
    const ProcessRecord* client_proc = find_process(client);
    if (client_proc == nullptr || !client_proc->alive) {
        throw SimulationError("connect: client process is not alive");
    }
    const AlpcPort* connection_port = find_connection_port_by_name(port_name);
    if (connection_port == nullptr) {
        throw SimulationError("connect: connection refused, no live port named '" + std::string(port_name) + "'");
    }
    const KernelAddress cp_address = connection_port->address;
    const KernelAddress server = connection_port->owner_process;

    const KernelAddress client_port_addr = allocate_address();
    const KernelAddress server_port_addr = allocate_address();
    const KernelAddress client_info_addr = allocate_address();
    const KernelAddress server_info_addr = allocate_address();

    CommunicationInfo info;
    info.connection_port = cp_address;
    info.server_comm_port = server_port_addr;
    info.client_comm_port = client_port_addr;

    AlpcPort client_port;
    client_port.address = client_port_addr;
    client_port.kind = PortKind{PortType::client_communication, {}};
    client_port.owner_process = client;
    client_port.comm_info = info;
    client_port.comm_info->address = client_info_addr;

    AlpcPort server_port;
    server_port.address = server_port_addr;
    server_port.kind = PortKind{PortType::server_communication, {}};
    server_port.owner_process = server;
    server_port.comm_info = info;
    server_port.comm_info->address = server_info_addr;

    auto [client_it, ci] = ports.emplace(client_port_addr, std::move(client_port));
    auto [server_it, si] = ports.emplace(server_port_addr, std::move(server_port));

    registrations.push_back(ConnectionRegistration{
        cp_address, client_port_addr, server_port_addr, client, server});

    return ConnectResult{client_it->second, server_it->second};
}

SendResult SystemState::send(KernelAddress client, std::string payload) {
    const auto owned = ports_owned_by(client, PortType::client_communication);
    if (owned.size() != 1) {
        throw SimulationError("send: client must own exactly one client communication port");
    }
    const AlpcPort& port = *find_port(owned.front());
    const CommunicationInfo& info = *port.comm_info;

    // The disconnected-peer check comes first: a zeroed server port fails
    // the send even when the connection port itself is still reachable.
    if (info.server_comm_port.is_null()) {
        return SendResult{SendStatus::port_disconnected, 0, kStatusPortDisconnected};
    }
    AlpcPort* target = find_port(info.connection_port);
    if (target == nullptr || target->kind.type != PortType::connection) {
        return SendResult{SendStatus::unreachable_port, 0, 0};
    }
    Message msg;
    msg.id = next_message_id++;
    msg.payload = std::move(payload);
    msg.sender_process = client;
    msg.sender_client_port = port.address;
    target->main_queue->push_back(std::move(msg));
    return SendResult{SendStatus::delivered, target->main_queue->back().id, 0};
}

std::vector<Message> SystemState::receive(KernelAddress server) {
    const ProcessRecord* proc = find_process(server);
    if (proc == nullptr || !proc->alive) {
        throw SimulationError("receive: server process is not alive");
    }
    std::set<KernelAddress> queue_ports;
    for (const auto& [addr, port] : ports) {
        if (port.owner_process != server) {
            continue;
        }
        if (port.kind.type == PortType::connection) {
            queue_ports.insert(addr);
        } else if (port.kind.type == PortType::server_communication) {
            const AlpcPort* referenced = find_port(port.comm_info->connection_port);
            if (referenced != nullptr && referenced->kind.type == PortType::connection) {
                queue_ports.insert(referenced->address);
            }
        }
    }
    std::vector<Message> out;
    for (const KernelAddress addr : queue_ports) {
        auto& queue = *find_port(addr)->main_queue;
        out.insert(out.end(), std::make_move_iterator(queue.begin()), std::make_move_iterator(queue.end()));
        queue.clear();
    }
    return out;
}

void SystemState::terminate_process(KernelAddress process) {
    auto it = processes.find(process);
    if (it == processes.end()) {
        throw SimulationError("terminate_process: unknown process");
    }
    if (!it->second.alive) {
        throw SimulationError("terminate_process: process already terminated");
    }
    it->second.alive = false;

    std::set<KernelAddress> removed;
    for (auto port_it = ports.begin(); port_it != ports.end();) {
        if (port_it->second.owner_process == process) {
            removed.insert(port_it->first);
            port_it = ports.erase(port_it);
        } else {
            ++port_it;
        }
    }
    // Mirror of the observed kernel state after a server exits: the
    // surviving client side keeps connection_port and client_comm_port
    // untouched and only server_comm_port is reset to zero.
    for (auto& [addr, port] : ports) {
        if (port.kind.type != PortType::client_communication) {
            continue;
        }
        if (removed.count(port.comm_info->server_comm_port) != 0) {
            port.comm_info->server_comm_port = kNullAddress;
        }
    }
}

const ProcessRecord* SystemState::find_process(KernelAddress address) const {
    auto it = processes.find(address);
    return it == processes.end() ? nullptr : &it->second;
}

const AlpcPort* SystemState::find_port(KernelAddress address) const {
    auto it = ports.find(address);
    return it == ports.end() ? nullptr : &it->second;
}

AlpcPort* SystemState::find_port(KernelAddress address) {
    auto it = ports.find(address);
    return it == ports.end() ? nullptr : &it->second;
}

const AlpcPort* SystemState::find_connection_port_by_name(std::string_view name) const {
    for (const auto& [addr, port] : ports) {
        if (port.kind.type == PortType::connection && port.kind.name == name) {
            return &port;
        }
    }
    return nullptr;
}

std::vector<KernelAddress> SystemState::ports_owned_by(KernelAddress process, PortType type) const {
    std::vector<KernelAddress> out;
    for (const auto& [addr, port] : ports) {
        if (port.owner_process == process && port.kind.type == type) {
            out.push_back(addr);
        }
    }
    return out;
}

}  // namespace sentinel
