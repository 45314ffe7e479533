#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sentinel/address.hpp"

namespace sentinel {

/// Raised when an operation's precondition is violated (dead process,
/// duplicate port name, unknown connection target, ...).
class SimulationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProcessRecord {
    KernelAddress address;
    std::uint64_t pid = 0;
    std::string image_name;
    std::optional<std::string> user;
    std::optional<std::vector<std::string>> command_path;
    bool alive = true;

    bool operator==(const ProcessRecord&) const = default;
};

enum class PortType {
    connection,            // named, owns the message queue
    server_communication,  // unnamed, one per active client of a server
    client_communication,  // unnamed, the client's end of a connection
};

struct PortKind {
    PortType type = PortType::connection;
    std::string name;  // non-empty iff type == connection

    bool operator==(const PortKind&) const = default;
};

/// The per-port record binding a connection's three port addresses.
/// Each communication port holds its own copy; the two copies of one
/// connection start identical and are independently mutable afterwards.
struct CommunicationInfo {
    KernelAddress address;  // the record's own kernel address
    KernelAddress connection_port;
    KernelAddress server_comm_port;
    KernelAddress client_comm_port;
    KernelAddress close_message;  // always null in this model
    KernelAddress handle_table;   // opaque placeholder

    bool operator==(const CommunicationInfo&) const = default;
};

struct Message {
    std::uint64_t id = 0;  // unique per state lifetime; queues are FIFO by id
    std::string payload;
    KernelAddress sender_process;
    KernelAddress sender_client_port;

    bool operator==(const Message&) const = default;
};

struct AlpcPort {
    KernelAddress address;
    PortKind kind;
    KernelAddress owner_process;
    // Exactly one of the two is present: comm_info for communication ports,
    // main_queue for connection ports.
    std::optional<CommunicationInfo> comm_info;
    std::optional<std::vector<Message>> main_queue;
    std::uint64_t pending_queue_len = 0;
    std::uint64_t large_message_queue_len = 0;
    std::uint64_t wait_queue_len = 0;
    std::uint64_t canceled_queue_len = 0;
    std::uint64_t direct_queue_len = 0;

    bool operator==(const AlpcPort&) const = default;
};

/// Immutable record of an established connection, appended at connect time.
/// This models the kernel-side communication list that the debugger walks;
/// attacks rewrite CommunicationInfo copies but never touch registrations.
struct ConnectionRegistration {
    KernelAddress connection_port;
    KernelAddress client_comm_port;
    KernelAddress server_comm_port;
    KernelAddress client_process;
    KernelAddress server_process;

    bool operator==(const ConnectionRegistration&) const = default;
};

enum class SendStatus {
    delivered,
    port_disconnected,  // peer terminated; the client observes 0xC0000037
    unreachable_port,   // the referenced connection port no longer exists
};

inline constexpr std::uint32_t kStatusPortDisconnected = 0xC0000037u;

struct SendResult {
    SendStatus status = SendStatus::delivered;
    std::uint64_t message_id = 0;   // valid when delivered
    std::uint32_t nt_status = 0;    // kStatusPortDisconnected when disconnected

    [[nodiscard]] bool delivered() const { return status == SendStatus::delivered; }
};

inline constexpr std::uint64_t kAddressBase = 0xffff800000000000ull;
inline constexpr std::uint64_t kAddressStride = 0x100ull;
inline constexpr std::uint64_t kFirstPid = 0x100ull;

/// The simulated kernel: processes, ports, registrations and the
/// deterministic allocators. Operations take exclusive access; the state
/// may move between threads but must never be mutated concurrently.
struct SystemState {
    std::map<KernelAddress, ProcessRecord> processes;
    std::map<KernelAddress, AlpcPort> ports;
    std::vector<ConnectionRegistration> registrations;
    std::uint64_t next_address = kAddressBase;
    std::uint64_t next_message_id = 1;
    std::uint64_t next_pid = kFirstPid;

    /// Fresh nonzero address; sequential from a fixed base with a fixed
    /// stride so equal operation histories produce byte-identical snapshots.
    KernelAddress allocate_address();

    ProcessRecord& create_process(std::string image_name,
                                  std::optional<std::string> user = std::nullopt,
                                  std::optional<std::vector<std::string>> command_path = std::nullopt);

    /// Creates a named connection port owned by `server`. The name must be
    /// unique among live connection ports.
    AlpcPort& create_connection_port(KernelAddress server, std::string name);

    struct ConnectResult {
        AlpcPort& client_port;
        AlpcPort& server_port;
    };

    /// Connects `client` to the live connection port named `port_name`.
    /// Creates one client and one server communication port, each with its
    /// own CommunicationInfo copy, and appends a ConnectionRegistration.
    ConnectResult connect(KernelAddress client, std::string_view port_name);

    /// Sends a message through the client's single client communication
    /// port. Routing follows the port's own CommunicationInfo: a zeroed
    /// server_comm_port fails with 0xC0000037 before anything else, a
    /// dangling connection_port is unreachable, otherwise the message is
    /// appended to the referenced connection port's queue.
    SendResult send(KernelAddress client, std::string payload);

    /// Drains, in ascending port-address order and FIFO within each queue,
    /// the union of (a) queues of connection ports owned by `server` and
    /// (b) queues of live connection ports referenced by the comm_info of
    /// server communication ports owned by `server`. Shared queues drain
    /// once, to whichever server asks first.
    std::vector<Message> receive(KernelAddress server);

    /// Marks the process dead, removes its ports (their addresses dangle),
    /// and zeroes the server_comm_port field of every surviving client
    /// communication port that referenced a removed port. Nothing else in
    /// any CommunicationInfo changes.
    void terminate_process(KernelAddress process);

    [[nodiscard]] const ProcessRecord* find_process(KernelAddress address) const;
    [[nodiscard]] const AlpcPort* find_port(KernelAddress address) const;
    [[nodiscard]] AlpcPort* find_port(KernelAddress address);

    /// Live connection port with this name, if any.
    [[nodiscard]] const AlpcPort* find_connection_port_by_name(std::string_view name) const;

    /// Addresses of ports of the given type owned by `process`, ascending.
    [[nodiscard]] std::vector<KernelAddress> ports_owned_by(KernelAddress process, PortType type) const;
};

}  // namespace sentinel
