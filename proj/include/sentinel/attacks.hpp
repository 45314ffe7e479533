#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sentinel/kernel_model.hpp"

namespace sentinel {

enum class AttackKind {
    spoof1,          // redirect the client's connection_port
    spoof2,          // spoof1 + terminate the blinded server + re-point server_comm_port
    spoof3,          // redirect a server comm port's connection_port
    transient_noise, // benign registration-less client ports
};

struct AttackScenario {
    AttackKind kind = AttackKind::spoof1;
    std::optional<KernelAddress> attacker_client;  // spoof1 / spoof2
    std::optional<KernelAddress> victim_server;    // spoof3: owner of the drained port
    std::optional<KernelAddress> target_server;    // spoof1/2: new destination; spoof3: acting server
    std::uint64_t seed = 0;                        // transient_noise only

    /// Throws SimulationError when the role fields required by `kind` are missing.
    void validate_roles() const;
};

/// Overwrites the connection_port field in the CommunicationInfo copy of
/// the client's communication port with the address of another live
/// connection port. The client's subsequent sends land in that port's
/// queue; the port it was registered under goes quiet.
void attack1_spoof_client_connection_port(SystemState& state,
                                          KernelAddress client,
                                          KernelAddress target_connection_port);

/// Three stages: attack1, termination of the now-blinded server the client
/// was registered with, then replacement of the zeroed server_comm_port
/// with `replacement_server_comm_port`. Leaves no wrong-port trace because
/// the only mismatching registration hangs off a removed port.
void attack2_spoof_and_cover(SystemState& state,
                             KernelAddress client,
                             KernelAddress target_connection_port,
                             KernelAddress replacement_server_comm_port);

/// Stage three of attack2, usable on its own: overwrites the client's
/// server_comm_port field. Performed alone it does not change where the
/// client's messages go.
void replace_server_comm_port(SystemState& state,
                              KernelAddress client,
                              KernelAddress replacement_server_comm_port);

/// Overwrites the connection_port field in the CommunicationInfo copy of a
/// server communication port owned by `server`, so that server also drains
/// the queue of `target_connection_port`. When the server owns several
/// communication ports the lowest-addressed one is rewritten.
void attack3_spoof_server_connection_port(SystemState& state,
                                          KernelAddress server,
                                          KernelAddress target_connection_port);

/// Creates `count` short-lived client processes, each with a client
/// communication port referencing a live connection port, without any
/// ConnectionRegistration — the server-side view never learns about them.
/// Deterministic under `seed`. Returns the new process addresses.
std::vector<KernelAddress> inject_transient_clients(SystemState& state,
                                                    std::size_t count,
                                                    std::uint64_t seed);

/// Lowest-addressed live connection port owned by `server`; role
/// resolution for scenario dispatch. Throws when the server owns none.
KernelAddress connection_port_of(const SystemState& state, KernelAddress server);

/// Lowest-addressed server communication port owned by `server`.
KernelAddress server_comm_port_of(const SystemState& state, KernelAddress server);

}  // namespace sentinel
