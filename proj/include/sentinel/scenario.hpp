#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/attacks.hpp"
#include "sentinel/kernel_model.hpp"

namespace sentinel {

/// The four-process test topology: client C1 talking to server S1 over
/// "NameOfPort1", client C2 talking to server S2 over "NameOfPort2".
struct BenchHandles {
    KernelAddress s1, s2, c1, c2;
    KernelAddress port1, port2;              // the two named connection ports
    KernelAddress c1_comm, c2_comm;          // client communication ports
    KernelAddress s1_comm, s2_comm;          // server communication ports
};

BenchHandles build_bench(SystemState& state);

struct DeliveryEvent {
    std::string sender_role;   // "C1" / "C2"
    std::string sender_image;
    SendResult result;
};

struct ReceiveEvent {
    std::string server_role;   // "S1" / "S2"
    std::string server_image;
    std::vector<Message> messages;
};

struct ScenarioRun {
    BenchHandles bench;
    SystemState state;                    // final state
    std::vector<DeliveryEvent> sends;
    std::vector<ReceiveEvent> receives;
    std::vector<std::string> snapshots;   // one emitted snapshot per scan
    std::vector<std::string> summary;     // human-readable delivery log
    std::vector<KernelAddress> transients;  // noise processes of the last scan
};

/// Builds the bench, applies the requested attack (none for a plain
/// simulation), has C1 and C2 send one message each with the
/// attacker-favored server receiving first, and emits `rescan` snapshots.
/// For transient noise each additional scan re-rolls the transients with a
/// derived seed, modelling short-lived connections that vanish between runs.
ScenarioRun run_scenario(std::optional<AttackKind> kind,
                         std::uint64_t seed = 0,
                         std::optional<std::size_t> noise_count = std::nullopt,
                         std::size_t rescan = 1);

}  // namespace sentinel
