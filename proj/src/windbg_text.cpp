#include "sentinel/windbg_text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sentinel {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

struct NumberedLine {
    std::size_t number = 0;  // 1-based over the whole input
    std::string_view text;
};

std::vector<NumberedLine> split_lines(std::string_view text) {
    std::vector<NumberedLine> out;
    std::size_t line_no = 1;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '\n') {
            std::string_view line = text.substr(start, i - start);
            if (!line.empty() && line.back() == '\r') {
                line.remove_suffix(1);
            }
            if (i < text.size() || !line.empty()) {
                out.push_back(NumberedLine{line_no, line});
            }
            ++line_no;
            start = i + 1;
        }
    }
    return out;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '`';
}

/// Token cursor over one (possibly joined) logical line.
struct Cursor {
    std::string_view s;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        }
    }

    bool at_end() {
        skip_ws();
        return pos == s.size();
    }

    char peek() {
        skip_ws();
        return pos < s.size() ? s[pos] : '\0';
    }

    bool literal(std::string_view lit) {
        skip_ws();
        if (s.substr(pos, lit.size()) == lit) {
            pos += lit.size();
            return true;
        }
        return false;
    }

    std::string_view word() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < s.size() && is_word_char(s[pos])) {
            ++pos;
        }
        return s.substr(start, pos - start);
    }

    std::optional<KernelAddress> address() {
        const std::size_t save = pos;
        const std::string_view w = word();
        if (w.empty()) {
            pos = save;
            return std::nullopt;
        }
        if (auto addr = parse_address(w)) {
            return addr;
        }
        pos = save;
        return std::nullopt;
    }

    std::optional<std::uint64_t> decimal() {
        const std::size_t save = pos;
        const std::string_view w = word();
        if (w.empty() || !std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            pos = save;
            return std::nullopt;
        }
        std::uint64_t value = 0;
        for (const char c : w) {
            value = value * 10 + static_cast<std::uint64_t>(c - '0');
        }
        return value;
    }

    /// Reads "('name')". Tolerates a missing closing quote or parenthesis:
    /// captured logs truncate image names and the remainder of the line is
    /// taken as-is.
    std::optional<std::string> quoted_name() {
        if (!literal("('")) {
            return std::nullopt;
        }
        const std::size_t close = s.find("')", pos);
        if (close != std::string_view::npos) {
            std::string name(s.substr(pos, close - pos));
            pos = close + 2;
            return name;
        }
        std::string_view rest = s.substr(pos);
        pos = s.size();
        if (!rest.empty() && rest.back() == ')') {
            rest.remove_suffix(1);
        }
        return std::string(rest);
    }
};

// --- single-line matchers ---------------------------------------------------

std::optional<KernelAddress> match_created_header(std::string_view line) {
    Cursor c{line};
    if (!c.literal("Ports") || !c.literal("created") || !c.literal("by") || !c.literal("the") ||
        !c.literal("process")) {
        return std::nullopt;
    }
    const auto addr = c.address();
    if (!addr) {
        return std::nullopt;
    }
    c.literal(":");
    return c.at_end() ? addr : std::nullopt;
}

std::optional<KernelAddress> match_connected_header(std::string_view line) {
    Cursor c{line};
    if (!c.literal("Ports") || !c.literal("the") || !c.literal("process")) {
        return std::nullopt;
    }
    const auto addr = c.address();
    if (!addr) {
        return std::nullopt;
    }
    if (!c.literal("is") || !c.literal("connected") || !c.literal("to")) {
        return std::nullopt;
    }
    c.literal(":");
    return c.at_end() ? addr : std::nullopt;
}

enum class LineParse { ok, incomplete, mismatch };

/// "ConnectionPort for ALPC COMMUNICATION INFO <ci> points to wrong port <addr>"
/// The structure-name spelling varies between captures ("_ALPC_COMMUNICATION_INFO"
/// with underscores is also seen); any run of alphabetic words is accepted there.
LineParse parse_wrong_port(std::string_view line, WrongPortLine& out) {
    Cursor c{line};
    if (!c.literal("ConnectionPort") || !c.literal("for")) {
        return LineParse::mismatch;
    }
    std::optional<KernelAddress> info_addr;
    for (int skipped = 0; skipped < 6; ++skipped) {
        if ((info_addr = c.address())) {
            break;
        }
        if (c.word().empty()) {
            return LineParse::mismatch;
        }
    }
    if (!info_addr) {
        return LineParse::mismatch;
    }
    if (!c.literal("points")) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    if (!c.literal("to")) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    if (!c.literal("wrong")) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    if (!c.literal("port")) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    const auto wrong = c.address();
    if (!wrong) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    if (!c.at_end()) {
        return LineParse::mismatch;
    }
    out.comm_info_address = *info_addr;
    out.wrong_port_address = *wrong;
    return LineParse::ok;
}

/// Shared shape of server- and client-side connection lines:
///   <addr> <flag> -> <addr> [('name')] <flag> <addr> [('image')]
/// The arrow may touch the following address ("->ffff8403a64d1530").
struct RawConnectionLine {
    KernelAddress first;
    std::uint64_t flag_a = 0;
    KernelAddress second;
    std::optional<std::string> name;
    std::uint64_t flag_b = 0;
    KernelAddress third;
    std::optional<std::string> image;
};

LineParse parse_connection(std::string_view line, RawConnectionLine& out) {
    Cursor c{line};
    const auto first = c.address();
    if (!first) {
        return LineParse::mismatch;
    }
    const auto flag_a = c.decimal();
    if (!flag_a) {
        return LineParse::mismatch;
    }
    if (!c.literal("->")) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    const auto second = c.address();
    if (!second) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    std::optional<std::string> name;
    if (c.peek() == '(') {
        name = c.quoted_name();
        if (!name) {
            return LineParse::mismatch;
        }
    }
    const auto flag_b = c.decimal();
    if (!flag_b) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    const auto third = c.address();
    if (!third) {
        return c.at_end() ? LineParse::incomplete : LineParse::mismatch;
    }
    std::optional<std::string> image;
    if (c.peek() == '(') {
        image = c.quoted_name();
        if (!image) {
            return LineParse::mismatch;
        }
    }
    if (!c.at_end()) {
        return LineParse::mismatch;
    }
    out = RawConnectionLine{*first, *flag_a, *second, std::move(name), *flag_b, *third, std::move(image)};
    return LineParse::ok;
}

struct HeaderParseResult {
    KernelAddress port_address;
    std::string name;
    std::uint64_t queue_count = 0;
    std::uint64_t connection_count = 0;
};

/// "<addr>('Name') <queue>, <connections> connections"
bool parse_block_header(std::string_view line, HeaderParseResult& out) {
    Cursor c{line};
    const auto addr = c.address();
    if (!addr) {
        return false;
    }
    auto name = c.quoted_name();
    if (!name) {
        return false;
    }
    const auto queue = c.decimal();
    if (!queue || !c.literal(",")) {
        return false;
    }
    const auto count = c.decimal();
    if (!count) {
        return false;
    }
    if (!c.literal("connections") && !c.literal("connection")) {
        return false;
    }
    if (!c.at_end()) {
        return false;
    }
    out = HeaderParseResult{*addr, std::move(*name), *queue, *count};
    return true;
}

ParseError make_error(const NumberedLine& line, std::string message) {
    return ParseError{line.number, std::string(trim(line.text)), std::move(message)};
}

/// Parses one `!alpc /lpp` dump from pre-split lines. Physical lines that
/// end mid-record are joined with their successors (captures wrap long
/// lines), bounded to three physical lines per record.
ParseResult<AlpcLppDump> parse_lpp_lines(const std::vector<NumberedLine>& lines) {
    enum class Section { none, created, connected };
    AlpcLppDump dump;
    Section section = Section::none;
    CreatedPortBlock* block = nullptr;
    bool header_seen = false;

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string_view text = trim(lines[i].text);
        if (text.empty() || starts_with(text, "kd>")) {
            continue;
        }
        if (const auto addr = match_created_header(text)) {
            section = Section::created;
            block = nullptr;
            if (!header_seen) {
                dump.process_address = *addr;
                header_seen = true;
            }
            continue;
        }
        if (const auto addr = match_connected_header(text)) {
            section = Section::connected;
            block = nullptr;
            if (!header_seen) {
                dump.process_address = *addr;
                header_seen = true;
            }
            continue;
        }
        if (section == Section::none) {
            return ParseResult<AlpcLppDump>::failure(make_error(lines[i], "expected a section header"));
        }
        if (text == "<none>") {
            continue;
        }

        // Assemble a logical line, joining up to two wrapped continuations.
        std::string logical(text);
        std::size_t consumed = 0;
        const auto try_join = [&]() -> bool {
            if (i + consumed + 1 >= lines.size()) {
                return false;
            }
            const std::string_view next = trim(lines[i + consumed + 1].text);
            if (next.empty()) {
                return false;
            }
            logical += ' ';
            logical += next;
            ++consumed;
            return true;
        };

        if (section == Section::created && starts_with(logical, "ConnectionPort")) {
            WrongPortLine wrong;
            LineParse lp = parse_wrong_port(logical, wrong);
            while (lp == LineParse::incomplete && consumed < 2 && try_join()) {
                lp = parse_wrong_port(logical, wrong);
            }
            if (lp != LineParse::ok) {
                return ParseResult<AlpcLppDump>::failure(
                    make_error(lines[i], "malformed wrong-port diagnostic"));
            }
            if (block != nullptr) {
                wrong.under_port_address = block->port_address;
            }
            dump.wrong_port_lines.push_back(wrong);
            i += consumed;
            continue;
        }

        if (section == Section::created) {
            HeaderParseResult header;
            if (parse_block_header(logical, header)) {
                dump.created_ports.push_back(CreatedPortBlock{
                    header.port_address, std::move(header.name), header.queue_count,
                    header.connection_count, {}});
                block = &dump.created_ports.back();
                continue;
            }
            RawConnectionLine raw;
            LineParse lp = parse_connection(logical, raw);
            while (lp == LineParse::incomplete && consumed < 2 && try_join()) {
                lp = parse_connection(logical, raw);
            }
            if (lp != LineParse::ok) {
                return ParseResult<AlpcLppDump>::failure(
                    make_error(lines[i], "unrecognized line in created-ports section"));
            }
            if (block == nullptr) {
                return ParseResult<AlpcLppDump>::failure(
                    make_error(lines[i], "connection line outside a created-port block"));
            }
            block->connections.push_back(ServerConnectionLine{
                raw.first, raw.flag_a, raw.second, raw.flag_b, raw.third, std::move(raw.image)});
            i += consumed;
            continue;
        }

        // connected-to section
        RawConnectionLine raw;
        LineParse lp = parse_connection(logical, raw);
        while (lp == LineParse::incomplete && consumed < 2 && try_join()) {
            lp = parse_connection(logical, raw);
        }
        if (lp != LineParse::ok) {
            return ParseResult<AlpcLppDump>::failure(
                make_error(lines[i], "unrecognized line in connected-to section"));
        }
        dump.connected_lines.push_back(ClientConnectionLine{
            raw.first, raw.flag_a, raw.second, std::move(raw.name), raw.flag_b, raw.third,
            std::move(raw.image)});
        i += consumed;
    }

    if (!header_seen) {
        return ParseResult<AlpcLppDump>::failure(
            ParseError{lines.empty() ? 1 : lines.front().number, "", "no section header found"});
    }
    return ParseResult<AlpcLppDump>::success(std::move(dump));
}

ParseResult<ProcessListDump> parse_dml_lines(const std::vector<NumberedLine>& lines) {
    ProcessListDump dump;
    std::set<std::uint64_t> seen;
    for (const NumberedLine& line : lines) {
        const std::string_view text = trim(line.text);
        if (text.empty()) {
            continue;
        }
        Cursor c{text};
        const auto addr = c.address();
        const auto pid = addr ? c.address() : std::nullopt;  // pid is hex, no prefix
        if (!addr || !pid) {
            ++dump.skipped_lines;
            continue;
        }
        c.skip_ws();
        const std::string_view image = trim(c.s.substr(c.pos));
        if (image.empty()) {
            ++dump.skipped_lines;
            continue;
        }
        if (!seen.insert(addr->value).second) {
            return ParseResult<ProcessListDump>::failure(
                make_error(line, "duplicate process address in process list"));
        }
        dump.entries.push_back(ProcessListEntry{*addr, pid->value, std::string(image)});
    }
    return ParseResult<ProcessListDump>::success(std::move(dump));
}

}  // namespace

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

std::string emit_alpc_lpp(const SystemState& state, KernelAddress process) {
    const ProcessRecord* proc = state.find_process(process);
    if (proc == nullptr || !proc->alive) {
        throw SimulationError("emit_alpc_lpp: process is not alive");
    }
    std::string out;
    out += "Ports created by the process " + format_address(process) + ":\n";
    bool any_created = false;
    for (const auto& [addr, port] : state.ports) {
        if (port.owner_process != process || port.kind.type != PortType::connection) {
            continue;
        }
        any_created = true;
        std::vector<const ConnectionRegistration*> regs;
        for (const ConnectionRegistration& reg : state.registrations) {
            if (reg.connection_port == addr) {
                regs.push_back(&reg);
            }
        }
        out += format_address(addr) + "('" + port.kind.name + "') " +
               std::to_string(port.main_queue->size()) + ", " + std::to_string(regs.size()) +
               " connections\n";
        // One diagnostic per CommunicationInfo copy that no longer points
        // back at the port it is registered under.
        for (const ConnectionRegistration* reg : regs) {
            for (const KernelAddress side : {reg->client_comm_port, reg->server_comm_port}) {
                const AlpcPort* comm = state.find_port(side);
                if (comm != nullptr && comm->comm_info && comm->comm_info->connection_port != addr) {
                    out += "ConnectionPort for ALPC COMMUNICATION INFO " +
                           format_address(comm->comm_info->address) + " points to wrong port " +
                           format_address(comm->comm_info->connection_port) + "\n";
                }
            }
        }
        for (const ConnectionRegistration* reg : regs) {
            out += format_address(reg->server_comm_port) + " 0 ->" +
                   format_address(reg->client_comm_port) + " 0 " +
                   format_address(reg->client_process);
            if (const ProcessRecord* client = state.find_process(reg->client_process)) {
                out += "('" + client->image_name + "')";
            }
            out += "\n";
        }
    }
    if (!any_created) {
        out += "<none>\n";
    }
    out += "Ports the process " + format_address(process) + " is connected to:\n";
    bool any_connected = false;
    for (const auto& [addr, port] : state.ports) {
        if (port.owner_process != process || port.kind.type != PortType::client_communication) {
            continue;
        }
        any_connected = true;
        const CommunicationInfo& info = *port.comm_info;
        out += format_address(addr) + " 0 -> " + format_address(info.connection_port);
        const AlpcPort* target = state.find_port(info.connection_port);
        if (target != nullptr && target->kind.type == PortType::connection) {
            const ProcessRecord* owner = state.find_process(target->owner_process);
            out += " ('" + target->kind.name + "') 0 " + format_address(target->owner_process);
            if (owner != nullptr) {
                out += " ('" + owner->image_name + "')";
            }
        } else {
            out += " 0 0";  // referenced port is gone; owner unresolvable
        }
        out += "\n";
    }
    if (!any_connected) {
        out += "<none>\n";
    }
    return out;
}

ParseResult<AlpcLppDump> parse_alpc_lpp(std::string_view text) {
    return parse_lpp_lines(split_lines(text));
}

std::string emit_dml_proc(const SystemState& state) {
    std::string out;
    for (const auto& [addr, proc] : state.processes) {
        if (!proc.alive) {
            continue;
        }
        out += format_address(addr) + " " + format_hex(proc.pid) + " " + proc.image_name + "\n";
    }
    return out;
}

ParseResult<ProcessListDump> parse_dml_proc(std::string_view text) {
    return parse_dml_lines(split_lines(text));
}

std::string emit_snapshot(const SystemState& state) {
    std::string out = "=== dml_proc ===\n";
    out += emit_dml_proc(state);
    for (const auto& [addr, proc] : state.processes) {
        if (!proc.alive) {
            continue;
        }
        if (proc.user || proc.command_path) {
            out += "=== process info " + format_address(addr) + " ===\n";
            if (proc.user) {
                out += "user: " + *proc.user + "\n";
            }
            if (proc.command_path) {
                out += "path: " + json(*proc.command_path).dump() + "\n";
            }
        }
        out += "=== alpc /lpp " + format_address(addr) + " ===\n";
        out += emit_alpc_lpp(state, addr);
    }
    return out;
}

namespace {

struct Segment {
    enum class Kind { dml_proc, process_info, lpp } kind = Kind::dml_proc;
    KernelAddress address;
    std::vector<NumberedLine> lines;
    NumberedLine delimiter;
};

std::optional<std::string_view> delimiter_body(std::string_view line) {
    line = trim(line);
    if (line.size() < 6 || !starts_with(line, "===") || line.substr(line.size() - 3) != "===") {
        return std::nullopt;
    }
    return trim(line.substr(3, line.size() - 6));
}

}  // namespace

ParseResult<SnapshotBundle> parse_snapshot(std::string_view text) {
    using Result = ParseResult<SnapshotBundle>;
    const std::vector<NumberedLine> lines = split_lines(text);

    std::vector<Segment> segments;
    bool in_segment = false;
    for (const NumberedLine& line : lines) {
        if (const auto body = delimiter_body(line.text)) {
            Segment seg;
            seg.delimiter = line;
            if (*body == "dml_proc") {
                seg.kind = Segment::Kind::dml_proc;
            } else {
                Cursor c{*body};
                if (c.literal("process") && c.literal("info")) {
                    const auto addr = c.address();
                    if (!addr || !c.at_end()) {
                        return Result::failure(make_error(line, "malformed process info delimiter"));
                    }
                    seg.kind = Segment::Kind::process_info;
                    seg.address = *addr;
                } else {
                    Cursor c2{*body};
                    if (c2.literal("alpc") && c2.literal("/lpp")) {
                        const auto addr = c2.address();
                        if (!addr || !c2.at_end()) {
                            return Result::failure(make_error(line, "malformed alpc /lpp delimiter"));
                        }
                        seg.kind = Segment::Kind::lpp;
                        seg.address = *addr;
                    } else {
                        return Result::failure(make_error(line, "unknown section delimiter"));
                    }
                }
            }
            segments.push_back(std::move(seg));
            in_segment = true;
            continue;
        }
        if (!in_segment) {
            if (!trim(line.text).empty()) {
                return Result::failure(
                    make_error(line, "snapshot must begin with the '=== dml_proc ===' delimiter"));
            }
            continue;
        }
        segments.back().lines.push_back(line);
    }
    if (segments.empty() || segments.front().kind != Segment::Kind::dml_proc) {
        return Result::failure(ParseError{1, "", "snapshot must begin with the '=== dml_proc ===' delimiter"});
    }

    SnapshotBundle bundle;
    auto list = parse_dml_lines(segments.front().lines);
    if (!list.ok()) {
        return Result::failure(*list.error);
    }
    bundle.process_list = std::move(*list.value);
    std::set<std::uint64_t> known;
    for (const ProcessListEntry& entry : bundle.process_list.entries) {
        known.insert(entry.address.value);
    }

    for (std::size_t i = 1; i < segments.size(); ++i) {
        Segment& seg = segments[i];
        switch (seg.kind) {
            case Segment::Kind::dml_proc:
                return Result::failure(make_error(seg.delimiter, "duplicate dml_proc section"));
            case Segment::Kind::process_info: {
                if (known.count(seg.address.value) == 0) {
                    return Result::failure(
                        make_error(seg.delimiter, "process info section for a process missing from the list"));
                }
                if (bundle.process_metadata.count(seg.address) != 0) {
                    return Result::failure(make_error(seg.delimiter, "duplicate process info section"));
                }
                ProcessMetadata meta;
                for (const NumberedLine& line : seg.lines) {
                    const std::string_view body = trim(line.text);
                    if (body.empty()) {
                        continue;
                    }
                    if (starts_with(body, "user:")) {
                        meta.user = std::string(trim(body.substr(5)));
                    } else if (starts_with(body, "path:")) {
                        const auto parsed = json::parse(trim(body.substr(5)), nullptr, false);
                        if (parsed.is_discarded() || !parsed.is_array()) {
                            return Result::failure(make_error(line, "path must be a JSON string array"));
                        }
                        std::vector<std::string> path;
                        for (const auto& item : parsed) {
                            if (!item.is_string()) {
                                return Result::failure(make_error(line, "path must be a JSON string array"));
                            }
                            path.push_back(item.get<std::string>());
                        }
                        meta.command_path = std::move(path);
                    } else {
                        return Result::failure(make_error(line, "unrecognized process info line"));
                    }
                }
                bundle.process_metadata.emplace(seg.address, std::move(meta));
                break;
            }
            case Segment::Kind::lpp: {
                if (known.count(seg.address.value) == 0) {
                    return Result::failure(
                        make_error(seg.delimiter, "dump section for a process missing from the list"));
                }
                if (bundle.dumps.count(seg.address) != 0) {
                    return Result::failure(make_error(seg.delimiter, "duplicate dump section"));
                }
                const bool empty = std::all_of(seg.lines.begin(), seg.lines.end(), [](const NumberedLine& l) {
                    return trim(l.text).empty();
                });
                if (empty) {
                    return Result::failure(make_error(
                        seg.delimiter, "truncated snapshot: section 'alpc /lpp " +
                                           format_address(seg.address) + "' has no content"));
                }
                auto dump = parse_lpp_lines(seg.lines);
                if (!dump.ok()) {
                    dump.error->message = "in section 'alpc /lpp " + format_address(seg.address) +
                                          "': " + dump.error->message;
                    return Result::failure(*dump.error);
                }
                if (dump.value->process_address != seg.address) {
                    return Result::failure(make_error(
                        seg.delimiter, "dump header address does not match the section delimiter"));
                }
                bundle.dumps.emplace(seg.address, std::move(*dump.value));
                break;
            }
        }
    }
    return Result::success(std::move(bundle));
}

SnapshotBundle bundle_from_dump(AlpcLppDump dump) {
    SnapshotBundle bundle;
    bundle.process_list.entries.push_back(ProcessListEntry{dump.process_address, 0, "unknown"});
    bundle.dumps.emplace(dump.process_address, std::move(dump));
    return bundle;
}

}  // namespace sentinel
