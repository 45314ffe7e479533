#include "doctest.h"

#include <algorithm>
#include <array>
#include <set>

#include "oracle.hpp"
#include "sentinel/attacks.hpp"
#include "sentinel/kernel_model.hpp"
#include "sentinel/scenario.hpp"
#include "sentinel/windbg_text.hpp"

using namespace sentinel;

TEST_CASE("address allocator is sequential from the fixed base") {
    SystemState state;
    CHECK(state.allocate_address().value == 0xffff800000000000ull);
    CHECK(state.allocate_address().value == 0xffff800000000100ull);

    // Independent oracle: loop a fresh allocator ten times.
    SystemState fresh;
    KernelAddress tenth;
    for (int i = 0; i < 10; ++i) {
        tenth = fresh.allocate_address();
    }
    CHECK(tenth.value == 0xffff800000000900ull);
}

TEST_CASE("address formatting and parsing") {
    CHECK(format_address(KernelAddress{0xffff800000000100ull}) == "ffff800000000100");
    CHECK(format_address(kNullAddress) == "0");
    CHECK(parse_address("ffff800000000100")->value == 0xffff800000000100ull);
    CHECK(parse_address("0xFFFF8000`00000100")->value == 0xffff800000000100ull);
    CHECK(parse_address("fffffc302`48239a80").has_value());
    CHECK(parse_address("") == std::nullopt);
    CHECK(parse_address("xyz") == std::nullopt);
    // Addresses wider than 64 bits reduce to their low 64 bits.
    CHECK(parse_address("fffffad83e71b8a00") == parse_address("ffffad83e71b8a00"));
}

TEST_CASE("create_process assigns sequential pids and fresh addresses") {
    SystemState state;
    const ProcessRecord& server = state.create_process("alpc_server.exe");
    CHECK(server.image_name == "alpc_server.exe");
    CHECK(server.alive);
    CHECK(server.pid == kFirstPid);

    const ProcessRecord& client =
        state.create_process("alpc_client2.exe", "KOMPUTER\\User", std::nullopt);
    CHECK(client.user == "KOMPUTER\\User");
    CHECK(client.pid == kFirstPid + 4);
    CHECK(client.address != server.address);

    CHECK_THROWS_AS(state.create_process(""), SimulationError);
    // Names surface verbatim in dump text and must stay representable.
    CHECK_THROWS_AS(state.create_process("bad\nname.exe"), SimulationError);
    CHECK_THROWS_AS(state.create_process(" padded.exe"), SimulationError);
    CHECK_THROWS_AS(state.create_process("quote') breaker.exe"), SimulationError);
    CHECK_THROWS_AS(state.create_process("x.exe", "user\n"), SimulationError);
}

TEST_CASE("create_connection_port enforces live unique names") {
    SystemState state;
    const KernelAddress s1 = state.create_process("alpc_server.exe").address;
    const KernelAddress s2 = state.create_process("alpc_server.exe").address;

    const AlpcPort& port1 = state.create_connection_port(s1, "NameOfPort1");
    CHECK(port1.kind.type == PortType::connection);
    CHECK(port1.kind.name == "NameOfPort1");
    CHECK(port1.owner_process == s1);
    CHECK(port1.main_queue->empty());
    CHECK(!port1.comm_info.has_value());

    const AlpcPort& port2 = state.create_connection_port(s2, "NameOfPort2");
    CHECK(port2.owner_process == s2);

    CHECK_THROWS_AS(state.create_connection_port(s1, "NameOfPort1"), SimulationError);
    CHECK_THROWS_AS(state.create_connection_port(s1, ""), SimulationError);

    // A name becomes reusable once its owner is gone.
    state.terminate_process(s2);
    CHECK_NOTHROW(state.create_connection_port(s1, "NameOfPort2"));
}

TEST_CASE("connect creates twin comm_info copies and a registration") {
    SystemState state;
    const KernelAddress s1 = state.create_process("alpc_server.exe").address;
    const KernelAddress c1 = state.create_process("alpc_client.exe").address;
    const KernelAddress port1 = state.create_connection_port(s1, "NameOfPort1").address;

    const auto conn = state.connect(c1, "NameOfPort1");
    CHECK(conn.client_port.kind.type == PortType::client_communication);
    CHECK(conn.client_port.owner_process == c1);
    CHECK(conn.server_port.kind.type == PortType::server_communication);
    CHECK(conn.server_port.owner_process == s1);

    const CommunicationInfo& client_info = *conn.client_port.comm_info;
    const CommunicationInfo& server_info = *conn.server_port.comm_info;
    CHECK(client_info.connection_port == port1);
    CHECK(client_info.server_comm_port == conn.server_port.address);
    CHECK(client_info.client_comm_port == conn.client_port.address);
    CHECK(server_info.connection_port == client_info.connection_port);
    CHECK(server_info.server_comm_port == client_info.server_comm_port);
    CHECK(server_info.client_comm_port == client_info.client_comm_port);
    CHECK(client_info.address != server_info.address);  // independently mutable copies
    CHECK(client_info.close_message.is_null());

    REQUIRE(state.registrations.size() == 1);
    const ConnectionRegistration& reg = state.registrations.front();
    CHECK(reg.connection_port == port1);
    CHECK(reg.client_comm_port == conn.client_port.address);
    CHECK(reg.server_comm_port == conn.server_port.address);
    CHECK(reg.client_process == c1);
    CHECK(reg.server_process == s1);

    CHECK_THROWS_AS(state.connect(c1, "NoSuchPort"), SimulationError);
}

TEST_CASE("two clients on one port yield two server comm ports") {
    SystemState state;
    const KernelAddress s1 = state.create_process("alpc_server.exe").address;
    const KernelAddress c1 = state.create_process("client_a.exe").address;
    const KernelAddress c2 = state.create_process("client_b.exe").address;
    state.create_connection_port(s1, "SharedPort");
    state.connect(c1, "SharedPort");
    state.connect(c2, "SharedPort");

    CHECK(state.registrations.size() == 2);
    CHECK(state.ports_owned_by(s1, PortType::server_communication).size() == 2);
    CHECK(state.ports_owned_by(c1, PortType::client_communication).size() == 1);
}

TEST_CASE("send routes through the client's own comm_info") {
    SystemState state;
    const BenchHandles bench = build_bench(state);

    SUBCASE("benign send lands in the registered connection port queue") {
        const SendResult result = state.send(bench.c1, "hello");
        CHECK(result.delivered());
        CHECK(result.nt_status == 0);
        const AlpcPort* port1 = state.find_port(bench.port1);
        REQUIRE(port1->main_queue->size() == 1);
        CHECK(port1->main_queue->front().payload == "hello");
        CHECK(port1->main_queue->front().sender_process == bench.c1);
        CHECK(state.find_port(bench.port2)->main_queue->empty());
    }

    SUBCASE("a redirected client delivers to the new queue, not its own") {
        attack1_spoof_client_connection_port(state, bench.c2, bench.port1);
        CHECK(state.send(bench.c2, "smuggled").delivered());
        CHECK(state.find_port(bench.port1)->main_queue->size() == 1);
        CHECK(state.find_port(bench.port2)->main_queue->empty());
    }

    SUBCASE("a zeroed server comm port fails with the disconnect code") {
        attack1_spoof_client_connection_port(state, bench.c2, bench.port1);
        state.terminate_process(bench.s2);
        const SendResult result = state.send(bench.c2, "lost");
        CHECK(result.status == SendStatus::port_disconnected);
        CHECK(result.nt_status == 0xC0000037u);
        CHECK(result.message_id == 0);
        CHECK(state.find_port(bench.port1)->main_queue->empty());
    }

    SUBCASE("a dangling connection port is unreachable") {
        // Detach C1's comm_info from any live port while keeping a live peer.
        state.find_port(bench.c1_comm)->comm_info->connection_port = KernelAddress{0xdead00};
        const SendResult result = state.send(bench.c1, "nowhere");
        CHECK(result.status == SendStatus::unreachable_port);
    }

    SUBCASE("send requires exactly one client communication port") {
        CHECK_THROWS_AS(state.send(bench.s1, "not a client"), SimulationError);
    }
}

TEST_CASE("receive drains owned and referenced queues once, in address order") {
    SystemState state;
    const BenchHandles bench = build_bench(state);

    SUBCASE("single queue") {
        state.send(bench.c1, "one");
        const auto messages = state.receive(bench.s1);
        REQUIRE(messages.size() == 1);
        CHECK(messages.front().payload == "one");
        CHECK(state.receive(bench.s1).empty());
    }

    SUBCASE("a redirected server comm port drains the other server's queue") {
        attack3_spoof_server_connection_port(state, bench.s1, bench.port2);
        state.send(bench.c1, "from c1");
        state.send(bench.c2, "from c2");
        const auto got = state.receive(bench.s1);
        REQUIRE(got.size() == 2);
        std::set<std::string> payloads{got[0].payload, got[1].payload};
        CHECK(payloads == std::set<std::string>{"from c1", "from c2"});
        CHECK(state.receive(bench.s2).empty());
    }

    SUBCASE("no sends means an empty drain") {
        CHECK(state.receive(bench.s1).empty());
        CHECK(state.receive(bench.s2).empty());
    }

    SUBCASE("messages within one queue stay in send order") {
        state.send(bench.c1, "first");
        state.send(bench.c1, "second");
        const auto got = state.receive(bench.s1);
        REQUIRE(got.size() == 2);
        CHECK(got[0].payload == "first");
        CHECK(got[1].payload == "second");
        CHECK(got[0].id < got[1].id);
    }
}

TEST_CASE("terminate_process removes ports and zeroes dependent client links") {
    SystemState state;
    const BenchHandles bench = build_bench(state);

    SUBCASE("server termination leaves exactly the observed client-side state") {
        attack1_spoof_client_connection_port(state, bench.c2, bench.port1);
        const CommunicationInfo before = *state.find_port(bench.c2_comm)->comm_info;
        state.terminate_process(bench.s2);

        const CommunicationInfo& after = *state.find_port(bench.c2_comm)->comm_info;
        CHECK(after.server_comm_port.is_null());
        CHECK(after.connection_port == bench.port1);  // untouched, still the spoofed value
        CHECK(after.connection_port == before.connection_port);
        CHECK(after.client_comm_port == before.client_comm_port);
        CHECK(after.address == before.address);

        CHECK(state.find_port(bench.port2) == nullptr);
        CHECK(state.find_port(bench.s2_comm) == nullptr);
        CHECK(!state.find_process(bench.s2)->alive);
    }

    SUBCASE("client termination leaves the server side untouched") {
        const CommunicationInfo before = *state.find_port(bench.s1_comm)->comm_info;
        state.terminate_process(bench.c1);
        CHECK(state.find_port(bench.c1_comm) == nullptr);
        CHECK(*state.find_port(bench.s1_comm)->comm_info == before);
    }

    SUBCASE("double terminate is an error") {
        state.terminate_process(bench.s2);
        CHECK_THROWS_AS(state.terminate_process(bench.s2), SimulationError);
        CHECK_THROWS_AS(state.terminate_process(KernelAddress{0x1234}), SimulationError);
    }
}

TEST_CASE("benign states keep both comm_info copies equal to their registration") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const SystemState state = oracle::random_benign_bench(seed);
        CAPTURE(seed);
        CHECK(oracle::registrations_consistent(state));
    }
}

TEST_CASE("message conservation across sends, receives and errors") {
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
        std::mt19937_64 rng(seed);
        SystemState state;
        const BenchHandles bench = build_bench(state);
        if (seed % 3 == 0) {
            attack1_spoof_client_connection_port(state, bench.c2, bench.port1);
        }
        if (seed % 4 == 0) {
            state.terminate_process(bench.s2);
        }
        std::uint64_t delivered = 0;
        std::uint64_t errors = 0;
        std::uint64_t received = 0;
        const std::array<KernelAddress, 2> clients{bench.c1, bench.c2};
        const std::array<KernelAddress, 2> servers{bench.s1, bench.s2};
        for (int step = 0; step < 40; ++step) {
            if (rng() % 2 == 0) {
                const SendResult r = state.send(clients[rng() % 2], "m");
                (r.delivered() ? delivered : errors) += 1;
            } else {
                const KernelAddress server = servers[rng() % 2];
                if (state.find_process(server)->alive) {
                    received += state.receive(server).size();
                }
            }
        }
        std::uint64_t enqueued = 0;
        for (const auto& [addr, port] : state.ports) {
            if (port.main_queue) {
                enqueued += port.main_queue->size();
            }
        }
        CAPTURE(seed);
        CHECK(delivered == received + enqueued);
        CHECK(delivered + errors + 1 >= state.next_message_id);  // ids only spent on deliveries
    }
}

TEST_CASE("identical operation sequences produce byte-identical states") {
    const auto build = [](std::uint64_t seed) { return oracle::random_benign_bench(seed); };
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SystemState a = build(seed);
        const SystemState b = build(seed);
        CAPTURE(seed);
        CHECK(oracle::describe_state(a) == oracle::describe_state(b));
        CHECK(emit_snapshot(a) == emit_snapshot(b));
    }
}

TEST_CASE("benign delivery: every message reaches its port owner and nobody else") {
    // Brute force over all benches with <=2 servers (one port each),
    // <=3 clients and <=5 sends.
    for (std::size_t n_servers = 1; n_servers <= 2; ++n_servers) {
        for (std::size_t n_clients = 0; n_clients <= 3; ++n_clients) {
            std::vector<std::size_t> assignment(n_clients, 0);
            while (true) {
                // enumerate all send sequences up to length 5
                for (std::size_t len = 0; len <= 5; ++len) {
                    std::vector<std::size_t> sequence(len, 0);
                    while (true) {
                        SystemState state;
                        std::vector<KernelAddress> servers;
                        std::vector<KernelAddress> clients;
                        for (std::size_t s = 0; s < n_servers; ++s) {
                            const KernelAddress addr =
                                state.create_process("srv" + std::to_string(s) + ".exe").address;
                            servers.push_back(addr);
                            state.create_connection_port(addr, "Port" + std::to_string(s));
                        }
                        for (std::size_t c = 0; c < n_clients; ++c) {
                            const KernelAddress addr =
                                state.create_process("cli" + std::to_string(c) + ".exe").address;
                            clients.push_back(addr);
                            state.connect(addr, "Port" + std::to_string(assignment[c]));
                        }
                        std::map<std::uint64_t, std::size_t> sent_by;  // message id -> client index
                        for (std::size_t step = 0; step < len; ++step) {
                            if (n_clients == 0) {
                                break;
                            }
                            const std::size_t who = sequence[step];
                            const SendResult r = state.send(clients[who], "x");
                            REQUIRE(r.delivered());
                            sent_by[r.message_id] = who;
                        }
                        std::set<std::uint64_t> seen;
                        for (std::size_t s = 0; s < n_servers; ++s) {
                            for (const Message& m : state.receive(servers[s])) {
                                CHECK(seen.insert(m.id).second);  // received exactly once
                                REQUIRE(sent_by.count(m.id) == 1);
                                // delivered to the owner of the sender's port
                                CHECK(assignment[sent_by[m.id]] == s);
                            }
                        }
                        CHECK(seen.size() == sent_by.size());

                        // next send sequence
                        if (n_clients == 0 || len == 0) {
                            break;
                        }
                        std::size_t pos = 0;
                        while (pos < len && ++sequence[pos] == n_clients) {
                            sequence[pos] = 0;
                            ++pos;
                        }
                        if (pos == len) {
                            break;
                        }
                    }
                    if (n_clients == 0) {
                        break;
                    }
                }
                // next assignment
                if (n_clients == 0) {
                    break;
                }
                std::size_t pos = 0;
                while (pos < n_clients && ++assignment[pos] == n_servers) {
                    assignment[pos] = 0;
                    ++pos;
                }
                if (pos == n_clients) {
                    break;
                }
            }
        }
    }
}
