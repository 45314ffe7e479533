#include "sentinel/scenario.hpp"

#include <utility>

#include "sentinel/windbg_text.hpp"

namespace sentinel {

namespace {

constexpr const char* kServerImage = "alpc_server.exe";
constexpr const char* kClient1Image = "alpc_client.exe";
constexpr const char* kClient2Image = "alpc_client2.exe";
constexpr const char* kUser = "KOMPUTER\\User";

std::string attack_name(std::optional<AttackKind> kind) {
    if (!kind) {
        return "none";
    }
    switch (*kind) {
        case AttackKind::spoof1: return "spoof1";
        case AttackKind::spoof2: return "spoof2";
        case AttackKind::spoof3: return "spoof3";
        case AttackKind::transient_noise: return "noise";
    }
    return "none";
}

void log_send(ScenarioRun& run, std::string role, std::string image, const SendResult& result) {
    std::string line = "send " + role + " (" + image + "): ";
    if (result.delivered()) {
        line += "delivered message " + std::to_string(result.message_id);
    } else if (result.status == SendStatus::port_disconnected) {
        line += "error 0x" + format_hex(result.nt_status) + " (port disconnected)";
    } else {
        line += "error (unreachable port)";
    }
    run.summary.push_back(line);
    run.sends.push_back(DeliveryEvent{std::move(role), std::move(image), result});
}

void do_receive(ScenarioRun& run, SystemState& state, std::string role, KernelAddress server) {
    std::vector<Message> messages = state.receive(server);
    std::string line = "receive " + role + " (" + kServerImage + "): " +
                       std::to_string(messages.size()) + " message(s)";
    for (const Message& m : messages) {
        line += " #" + std::to_string(m.id) + "<" + m.payload + ">";
    }
    run.summary.push_back(line);
    run.receives.push_back(ReceiveEvent{std::move(role), kServerImage, std::move(messages)});
}

std::size_t default_noise_count(std::uint64_t seed) {
    return 2 + static_cast<std::size_t>(seed % 4);  // the typical benign range, two to five
}

}  // namespace

BenchHandles build_bench(SystemState& state) {
    BenchHandles bench;
    bench.s1 = state.create_process(kServerImage).address;
    bench.s2 = state.create_process(kServerImage).address;
    bench.c1 = state
                   .create_process(kClient1Image, kUser,
                                   std::vector<std::string>{
                                       "C:\\Users\\User\\Desktop\\src\\alpc_client\\x64\\alpc_client.exe"})
                   .address;
    bench.c2 = state
                   .create_process(kClient2Image, kUser,
                                   std::vector<std::string>{
                                       "C:\\Users\\User\\Desktop\\src\\alpc_client2\\x64\\alpc_client2.exe"})
                   .address;
    bench.port1 = state.create_connection_port(bench.s1, "NameOfPort1").address;
    bench.port2 = state.create_connection_port(bench.s2, "NameOfPort2").address;
    const auto conn1 = state.connect(bench.c1, "NameOfPort1");
    bench.c1_comm = conn1.client_port.address;
    bench.s1_comm = conn1.server_port.address;
    const auto conn2 = state.connect(bench.c2, "NameOfPort2");
    bench.c2_comm = conn2.client_port.address;
    bench.s2_comm = conn2.server_port.address;
    return bench;
}

ScenarioRun run_scenario(std::optional<AttackKind> kind,
                         std::uint64_t seed,
                         std::optional<std::size_t> noise_count,
                         std::size_t rescan) {
    if (rescan == 0) {
        throw SimulationError("run_scenario: rescan must be at least 1");
    }
    ScenarioRun run;
    SystemState& state = run.state;
    run.bench = build_bench(state);
    const BenchHandles& bench = run.bench;

    run.summary.push_back("bench: S1=" + format_address(bench.s1) + " S2=" + format_address(bench.s2) +
                          " C1=" + format_address(bench.c1) + " C2=" + format_address(bench.c2));
    run.summary.push_back("attack: " + attack_name(kind));

    const std::size_t transient_count = noise_count ? *noise_count : default_noise_count(seed);

    AttackScenario scenario;
    if (kind) {
        scenario.kind = *kind;
        scenario.seed = seed;
        switch (*kind) {
            case AttackKind::spoof1:
            case AttackKind::spoof2:
                scenario.attacker_client = bench.c2;
                scenario.target_server = bench.s1;
                break;
            case AttackKind::spoof3:
                scenario.victim_server = bench.s2;
                scenario.target_server = bench.s1;
                break;
            case AttackKind::transient_noise:
                break;
        }
        scenario.validate_roles();
    }

    if (kind == AttackKind::spoof1) {
        attack1_spoof_client_connection_port(state, *scenario.attacker_client,
                                             connection_port_of(state, *scenario.target_server));
    } else if (kind == AttackKind::spoof2) {
        // Staged rather than through the composite op, to script a send
        // inside the disconnected window.
        attack1_spoof_client_connection_port(state, *scenario.attacker_client,
                                             connection_port_of(state, *scenario.target_server));
        state.terminate_process(bench.s2);
        run.summary.push_back("terminated S2");
        log_send(run, "C2", kClient2Image,
                 state.send(*scenario.attacker_client, "probe from " + std::string(kClient2Image)));
        replace_server_comm_port(state, *scenario.attacker_client,
                                 server_comm_port_of(state, *scenario.target_server));
        run.summary.push_back("replaced C2 server communication port");
    } else if (kind == AttackKind::spoof3) {
        attack3_spoof_server_connection_port(state, *scenario.target_server,
                                             connection_port_of(state, *scenario.victim_server));
    } else if (kind == AttackKind::transient_noise) {
        run.transients = inject_transient_clients(state, transient_count, scenario.seed);
        run.summary.push_back("injected " + std::to_string(run.transients.size()) +
                              " transient client(s)");
    }

    log_send(run, "C1", kClient1Image, state.send(bench.c1, "hello from " + std::string(kClient1Image)));
    log_send(run, "C2", kClient2Image, state.send(bench.c2, "hello from " + std::string(kClient2Image)));

    // The attacker-favored server drains shared queues first.
    do_receive(run, state, "S1", bench.s1);
    if (kind != AttackKind::spoof2) {
        do_receive(run, state, "S2", bench.s2);
    }

    run.snapshots.push_back(emit_snapshot(state));
    for (std::size_t scan = 1; scan < rescan; ++scan) {
        if (kind == AttackKind::transient_noise) {
            for (const KernelAddress proc : run.transients) {
                state.terminate_process(proc);
            }
            run.transients = inject_transient_clients(state, transient_count, seed + scan);
            run.summary.push_back("rescan " + std::to_string(scan) + ": re-rolled " +
                                  std::to_string(run.transients.size()) + " transient client(s)");
        }
        run.snapshots.push_back(emit_snapshot(state));
    }
    return run;
}

}  // namespace sentinel
