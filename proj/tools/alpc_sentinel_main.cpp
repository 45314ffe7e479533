#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"

#include "sentinel/detector.hpp"
#include "sentinel/scenario.hpp"
#include "sentinel/windbg_text.hpp"

namespace {

using namespace sentinel;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;       // I/O or parse failure
constexpr int kExitSuspicious = 2;  // suspicious connections, no hard alert
constexpr int kExitAttack = 3;      // wrong-port alert present

bool color_enabled() {
    return std::getenv("ALPC_SENTINEL_NO_COLOR") == nullptr && isatty(fileno(stdout)) != 0;
}

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        return false;
    }
    out << content;
    return out.good();
}

void print_parse_error(const std::string& path, const ParseError& error) {
    std::cerr << "error: " << path << ":" << error.line_number << ": " << error.message;
    if (!error.line.empty()) {
        std::cerr << ": \"" << error.line << "\"";
    }
    std::cerr << "\n";
}

/// Reads a snapshot bundle; bare `!alpc /lpp` dumps are accepted and
/// wrapped so hand-captured debugger output can be checked directly.
std::optional<SnapshotBundle> load_bundle(const std::string& path) {
    const auto text = read_file(path);
    if (!text) {
        std::cerr << "error: cannot read '" << path << "'\n";
        return std::nullopt;
    }
    auto bundle = parse_snapshot(*text);
    if (bundle.ok()) {
        return *bundle.value;
    }
    auto dump = parse_alpc_lpp(*text);
    if (dump.ok()) {
        return bundle_from_dump(std::move(*dump.value));
    }
    print_parse_error(path, *bundle.error);
    return std::nullopt;
}

struct ScenarioOptions {
    std::string attack;
    std::uint64_t seed = 0;
    std::optional<std::size_t> count;
    std::size_t rescan = 1;
    std::string out_path;
};

int run_simulation(const ScenarioOptions& opts, std::optional<AttackKind> kind) {
    ScenarioRun run;
    try {
        run = run_scenario(kind, opts.seed, opts.count, opts.rescan);
    } catch (const SimulationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
        const std::string path =
            run.snapshots.size() == 1 ? opts.out_path : opts.out_path + "." + std::to_string(i + 1);
        if (!write_file(path, run.snapshots[i])) {
            std::cerr << "error: cannot write '" << path << "'\n";
            return kExitError;
        }
        std::cout << "snapshot written: " << path << "\n";
    }
    for (const std::string& line : run.summary) {
        std::cout << line << "\n";
    }
    return kExitOk;
}

std::optional<AttackKind> parse_attack(const std::string& name) {
    static const std::map<std::string, AttackKind> kinds = {
        {"spoof1", AttackKind::spoof1},
        {"spoof2", AttackKind::spoof2},
        {"spoof3", AttackKind::spoof3},
        {"noise", AttackKind::transient_noise},
    };
    auto it = kinds.find(name);
    if (it == kinds.end()) {
        return std::nullopt;
    }
    return it->second;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ALPC connection simulator and cross-view spoofing/blinding detector"};
    app.require_subcommand(1);

    ScenarioOptions scenario_opts;
    std::size_t count_flag = 0;

    CLI::App* simulate = app.add_subcommand("simulate", "run the benign four-process bench and write a snapshot");
    simulate->add_option("--out", scenario_opts.out_path, "snapshot output path")->required();
    simulate->add_option("--rescan", scenario_opts.rescan, "number of snapshots to write")
        ->check(CLI::PositiveNumber);

    CLI::App* scenario = app.add_subcommand("scenario", "run the bench with an attack applied");
    scenario->add_option("--attack", scenario_opts.attack, "attack kind: spoof1|spoof2|spoof3|noise")
        ->required();
    scenario->add_option("--seed", scenario_opts.seed, "seed for transient noise");
    CLI::Option* count_opt =
        scenario->add_option("--count", count_flag, "transient client count (noise; default derives from seed)");
    scenario->add_option("--rescan", scenario_opts.rescan, "number of snapshots to write")
        ->check(CLI::PositiveNumber);
    scenario->add_option("--out", scenario_opts.out_path, "snapshot output path")->required();

    std::vector<std::string> inputs;
    std::size_t check_rescan = 0;
    std::string format = "text";
    std::string out_path;

    CLI::App* check = app.add_subcommand("check", "detect spoofed or unmatched connections in snapshots");
    check->add_option("inputs", inputs, "snapshot file(s)")->required()->expected(-1);
    check->add_option("--rescan", check_rescan, "number of scans to intersect (must equal the input count)");
    check->add_option("--format", format, "output format: text|json")
        ->check(CLI::IsMember({"text", "json"}));
    check->add_option("--out", out_path, "write the report to this path instead of stdout");

    std::string parse_input;
    CLI::App* parse_cmd = app.add_subcommand("parse", "parse a snapshot and print its structure as JSON");
    parse_cmd->add_option("input", parse_input, "snapshot or bare dump file")->required();
    parse_cmd->add_option("--out", out_path, "write the structured dump to this path");

    CLI11_PARSE(app, argc, argv);

    if (simulate->parsed()) {
        return run_simulation(scenario_opts, std::nullopt);
    }

    if (scenario->parsed()) {
        const auto kind = parse_attack(scenario_opts.attack);
        if (!kind) {
            std::cerr << "error: unknown attack '" << scenario_opts.attack
                      << "' (expected spoof1|spoof2|spoof3|noise)\n";
            return kExitError;
        }
        if (count_opt->count() > 0) {
            scenario_opts.count = count_flag;
        }
        return run_simulation(scenario_opts, kind);
    }

    if (check->parsed()) {
        if (check_rescan == 0) {
            check_rescan = inputs.size();
        }
        if (check_rescan != inputs.size()) {
            std::cerr << "error: --rescan " << check_rescan << " requires exactly " << check_rescan
                      << " snapshot files, got " << inputs.size() << "\n";
            return kExitError;
        }
        std::vector<DetectionReport> reports;
        for (const std::string& path : inputs) {
            const auto bundle = load_bundle(path);
            if (!bundle) {
                return kExitError;
            }
            reports.push_back(detect(*bundle));
        }
        const DetectionReport report = intersect_reports(reports);
        const bool to_stdout = out_path.empty();
        const std::string rendered = format == "json"
                                         ? render_report_json(report) + "\n"
                                         : render_report(report, to_stdout && color_enabled());
        if (to_stdout) {
            std::cout << rendered;
        } else if (!write_file(out_path, rendered)) {
            std::cerr << "error: cannot write '" << out_path << "'\n";
            return kExitError;
        }
        if (report.attack_detected) {
            return kExitAttack;
        }
        return report.suspicious.empty() ? kExitOk : kExitSuspicious;
    }

    if (parse_cmd->parsed()) {
        const auto bundle = load_bundle(parse_input);
        if (!bundle) {
            return kExitError;
        }
        const std::string rendered = render_bundle_json(*bundle) + "\n";
        if (out_path.empty()) {
            std::cout << rendered;
        } else if (!write_file(out_path, rendered)) {
            std::cerr << "error: cannot write '" << out_path << "'\n";
            return kExitError;
        }
        return kExitOk;
    }

    return kExitError;
}
