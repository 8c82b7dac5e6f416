/*
 * Copyright 2026 The jobjail Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "jobjail/cli.hpp"

#include "jobjail/error.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>

namespace jobjail {

namespace {

namespace fs = std::filesystem;

// Raw option values as given on the command line; merged with the config
// file before any of them is interpreted.
struct RawRun
{
    std::map<std::string, std::string> values;
    std::vector<std::string> env;
    std::vector<std::string> command;
    std::optional<std::string> config;
};

const std::vector<std::string> kValueKeys = {
    "backend", "mem-limit", "mem-backend", "mem-fallback", "poll-interval", "cpus",   "omp-threads",
    "mkl-threads", "numexpr-threads", "grace", "sample-interval", "report", "format", "escapees",
    "workdir", "accel-script",
};
const std::vector<std::string> kFlagKeys = {"mkl-sequential", "extra-thread-env"};

int parse_count(const std::string& key, const std::string& text)
{
    try
    {
        std::size_t used = 0;
        int v = std::stoi(text, &used);
        if (used == text.size())
            return v;
    }
    catch (const std::exception&)
    {
    }
    throw Error(ErrorKind::Usage, fmt::format("--{} expects an integer, got '{}'", key, text));
}

bool parse_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1")
        return true;
    if (text == "false" || text == "0")
        return false;
    throw Error(ErrorKind::Usage, fmt::format("{} expects true or false, got '{}'", key, text));
}

void merge_config(RawRun& raw)
{
    if (!raw.config)
        return;
    std::ifstream in(*raw.config);
    if (!in)
        throw Error(ErrorKind::Usage, fmt::format("cannot read config file {}", *raw.config));
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(ErrorKind::Usage, fmt::format("config file {}: {}", *raw.config, e.what()));
    }
    if (!j.is_object())
        throw Error(ErrorKind::Usage, "config file must hold a JSON object");

    for (const auto& [key, value] : j.items())
    {
        bool known = std::count(kValueKeys.begin(), kValueKeys.end(), key) ||
                     std::count(kFlagKeys.begin(), kFlagKeys.end(), key) || key == "env";
        if (!known)
            throw Error(ErrorKind::Usage, fmt::format("unknown config key '{}'", key));
        if (key == "env")
        {
            if (!value.is_object())
                throw Error(ErrorKind::Usage, "config key 'env' must be an object");
            std::vector<std::string> from_config;
            for (const auto& [k, v] : value.items())
                from_config.push_back(k + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
            // Flag values are appended last so they win on merge.
            raw.env.insert(raw.env.begin(), from_config.begin(), from_config.end());
            continue;
        }
        if (raw.values.count(key))
            continue;
        raw.values[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
}

JobSpec build_job(RawRun raw)
{
    merge_config(raw);
    JobSpec spec;
    spec.command = raw.command;
    auto get = [&](const std::string& key) -> std::optional<std::string> {
        auto it = raw.values.find(key);
        if (it == raw.values.end())
            return std::nullopt;
        return it->second;
    };

    spec.backend = get("backend") ? parse_backend(*get("backend")) : default_backend();
    if (auto v = get("mem-limit"))
        spec.limits.mem_limit_bytes = parse_size(*v);
    if (auto v = get("mem-backend"))
        spec.limits.mem_backend = parse_memory_backend(*v);
    if (auto v = get("mem-fallback"))
        spec.limits.mem_fallback = *v == "none" ? std::nullopt : std::optional(parse_memory_backend(*v));
    if (auto v = get("poll-interval"))
        spec.limits.poll_interval = parse_duration(*v);
    if (auto v = get("cpus"))
        spec.limits.cpuset = parse_cpuset(*v);
    if (auto v = get("omp-threads"))
        spec.limits.thread_env.omp_threads = parse_count("omp-threads", *v);
    if (auto v = get("mkl-threads"))
        spec.limits.thread_env.mkl_threads = parse_count("mkl-threads", *v);
    if (auto v = get("numexpr-threads"))
        spec.limits.thread_env.numexpr_threads = parse_count("numexpr-threads", *v);
    if (auto v = get("mkl-sequential"))
        spec.limits.thread_env.mkl_sequential = parse_bool("mkl-sequential", *v);
    if (auto v = get("extra-thread-env"))
        spec.limits.thread_env.extra_aliases = parse_bool("extra-thread-env", *v);
    if (auto v = get("grace"))
        spec.grace = parse_duration(*v);
    if (auto v = get("sample-interval"))
        spec.telemetry.sample_interval = parse_duration(*v);
    if (auto v = get("report"))
        spec.report_path = fs::path(*v);
    if (auto v = get("format"))
        spec.telemetry.format = parse_export_format(*v);
    if (auto v = get("accel-script"))
        spec.telemetry.accel_script = fs::path(*v);
    if (auto v = get("workdir"))
        spec.workdir = *v;
    if (auto v = get("escapees"))
    {
        if (*v == "report")
            spec.escapees = EscapePolicy::Report;
        else if (*v == "kill")
            spec.escapees = EscapePolicy::Kill;
        else
            throw Error(ErrorKind::Usage, fmt::format("--escapees expects report or kill, got '{}'", *v));
    }

    EnvMap explicit_env;
    for (const auto& kv : raw.env)
    {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw Error(ErrorKind::Usage, fmt::format("--env expects KEY=VALUE, got '{}'", kv));
        explicit_env[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    try
    {
        spec.limits.thread_env.validate();
    }
    catch (const Error& e)
    {
        throw Error(ErrorKind::Usage, e.what());
    }
    spec.env_overlay = merge_env({thread_env(spec.limits.thread_env), explicit_env});

    if (spec.command.empty())
        throw Error(ErrorKind::Usage, "missing command after --");
    return spec;
}

pymem::GcConfig parse_gc(const std::string& text)
{
    pymem::GcConfig gc;
    gc.thresholds.clear();
    std::size_t start = 0;
    while (start <= text.size())
    {
        auto comma = text.find(',', start);
        auto part = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try
        {
            std::size_t used = 0;
            auto v = std::stoull(part, &used);
            if (used != part.size() || part.front() == '-')
                throw std::invalid_argument(part);
            gc.thresholds.push_back(v);
        }
        catch (const std::exception&)
        {
            throw Error(ErrorKind::Usage, fmt::format("--gc expects comma-separated counts, got '{}'", text));
        }
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return gc;
}

} // namespace

CliCommand parse_args(const std::vector<std::string>& argv)
{
    CLI::App app{"Batch-job supervisor with process containment, resource limits and telemetry", "jobjail"};
    app.require_subcommand(0, 1);

    RawRun raw;
    std::map<std::string, std::string> run_values;
    auto* run = app.add_subcommand("run", "Run a command inside a jail");
    std::map<std::string, CLI::Option*> value_opts;
    for (const auto& key : kValueKeys)
        value_opts[key] = run->add_option("--" + key, run_values[key]);
    value_opts["backend"]->description("pg | subreaper | pidns (default: strongest available)");
    value_opts["mem-limit"]->description("memory limit, K/M/G/T suffixes are powers of 1024");
    value_opts["mem-backend"]->description("cgroup | rlimit-data | poll | rlimit-rss (default cgroup)");
    value_opts["mem-fallback"]->description("backend used when cgroup is unavailable: poll | none (default poll)");
    value_opts["poll-interval"]->description("watchdog period, ms/s/m suffix (default 1s)");
    value_opts["cpus"]->description("CPU list such as 0-3,8");
    value_opts["grace"]->description("time between TERM and KILL (default 30s)");
    value_opts["sample-interval"]->description("telemetry period (default 1s)");
    value_opts["report"]->description("write telemetry and summary here");
    value_opts["format"]->description("json | csv (default json)");
    value_opts["escapees"]->description("report | kill processes that left the jail (default kill)");
    value_opts["accel-script"]->description("replay accelerator utilization from a tick;util file");
    bool mkl_sequential = false;
    bool extra_thread_env = false;
    auto* seq_opt = run->add_flag("--mkl-sequential", mkl_sequential, "set MKL_THREADING_LAYER=SEQUENTIAL");
    auto* alias_opt = run->add_flag("--extra-thread-env", extra_thread_env,
                                    "also set OPENBLAS_NUM_THREADS and VECLIB_MAXIMUM_THREADS");
    run->add_option("--env", raw.env, "extra KEY=VALUE for the job environment")->allow_extra_args(false);
    auto* config_opt = run->add_option("--config", "JSON file with defaults for any of the long options");
    run->add_option("command", raw.command, "command and arguments, after --");

    PymemCommand pm;
    auto* pymem_cmd = app.add_subcommand("pymem", "Interpreter memory model");
    pymem_cmd->require_subcommand(1);
    auto* simulate = pymem_cmd->add_subcommand("simulate", "Simulate an allocation trace");
    simulate->add_option("--trace", pm.trace, "trace file")->required();
    simulate->add_option("--out", pm.out, "JSON report path")->required();
    std::uint64_t arena_kb = 256;
    std::uint64_t small_threshold = 512;
    std::string gc_text = "700,10,10";
    std::string sizes_path;
    simulate->add_option("--arena-kb", arena_kb, "arena size in KiB (default 256)");
    simulate->add_option("--small-threshold", small_threshold, "largest arena-allocated object (default 512)");
    simulate->add_option("--gc", gc_text, "generation thresholds (default 700,10,10)");
    simulate->add_option("--sizes", sizes_path, "size table with class=bytes lines");
    auto* size = pymem_cmd->add_subcommand("size", "Print the size of a value class");
    size->add_option("class", pm.value_class, "value class, e.g. integer:small")->required();
    size->add_option("--sizes", sizes_path, "size table with class=bytes lines");

    CliCommand cmd;
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    if (!reversed.empty())
        reversed.pop_back();
    try
    {
        app.parse(std::move(reversed));
    }
    catch (const CLI::CallForHelp&)
    {
        cmd.kind = CliCommand::Kind::Help;
        cmd.help_text = app.help();
        return cmd;
    }
    catch (const CLI::CallForAllHelp&)
    {
        cmd.kind = CliCommand::Kind::Help;
        cmd.help_text = app.help("", CLI::AppFormatMode::All);
        return cmd;
    }
    catch (const CLI::ParseError& e)
    {
        throw Error(ErrorKind::Usage, e.what());
    }

    if (run->parsed())
    {
        for (const auto& key : kValueKeys)
            if (value_opts[key]->count())
                raw.values[key] = run_values[key];
        if (seq_opt->count())
            raw.values["mkl-sequential"] = mkl_sequential ? "true" : "false";
        if (alias_opt->count())
            raw.values["extra-thread-env"] = extra_thread_env ? "true" : "false";
        if (config_opt->count())
            raw.config = config_opt->as<std::string>();
        cmd.kind = CliCommand::Kind::Run;
        cmd.job = build_job(std::move(raw));
        return cmd;
    }
    if (pymem_cmd->parsed())
    {
        cmd.kind = CliCommand::Kind::Pymem;
        if (!sizes_path.empty())
            pm.sizes = fs::path(sizes_path);
        if (size->parsed())
        {
            pm.action = PymemCommand::Action::Size;
        }
        else
        {
            pm.arena.arena_bytes = arena_kb * 1024;
            pm.arena.small_threshold_bytes = small_threshold;
            pm.gc = parse_gc(gc_text);
            try
            {
                pm.arena.validate();
                pm.gc.validate();
            }
            catch (const Error& e)
            {
                throw Error(ErrorKind::Usage, e.what());
            }
        }
        cmd.pymem = std::move(pm);
        return cmd;
    }
    cmd.help_text = app.help();
    return cmd;
}

namespace {

int run_pymem(const PymemCommand& pm)
{
    auto sizes = pm.sizes ? pymem::SizeTable::load(*pm.sizes) : pymem::SizeTable::defaults();
    if (pm.action == PymemCommand::Action::Size)
    {
        std::cout << pymem::object_size(pm.value_class, sizes) << "\n";
        return 0;
    }
    auto trace = pymem::AllocTrace::load(pm.trace, sizes);
    auto est = pymem::simulate(trace, pm.arena, pm.gc);
    std::ofstream out(pm.out, std::ios::trunc);
    out << pymem::to_json(est, pm.arena, pm.gc).dump(2) << "\n";
    out.flush();
    if (!out)
        throw Error(ErrorKind::Io, fmt::format("cannot write {}", pm.out.string()));
    std::cerr << fmt::format("jobjail: {} events, peak {} bytes, {} arena(s) at peak, {} gc round(s)\n",
                             trace.size(), est.peak_bytes, est.arena_count_peak, est.gc.schedule.size());
    return 0;
}

void print_outcome(const RunOutcome& o)
{
    std::cerr << fmt::format("jobjail: jail {} ({}) job {}; {} termination step(s){}; {} survivor(s); exit {}\n",
                             o.handle.jail_id, to_string(o.handle.backend), describe_wait_status(o.job_status),
                             o.termination.steps.size(), o.termination.escalated ? ", escalated to KILL" : "",
                             o.termination.survivors.size(), o.exit_code);
    for (const auto& e : o.enforcement_events)
        if (e.action != EnforcementAction::None)
            std::cerr << fmt::format("jobjail: memory {} {}: {}\n", to_string(e.backend), to_string(e.action), e.note);
    for (const auto& note : o.report.notes)
        std::cerr << "jobjail: " << note << "\n";
    if (o.report_error)
        std::cerr << "jobjail: report not written: " << *o.report_error << "\n";
}

} // namespace

int cli_main(int argc, char** argv)
{
    std::vector<std::string> args(argv, argv + argc);
    try
    {
        auto cmd = parse_args(args);
        switch (cmd.kind)
        {
            case CliCommand::Kind::Help:
                std::cout << cmd.help_text;
                return 0;
            case CliCommand::Kind::Pymem:
                return run_pymem(cmd.pymem);
            case CliCommand::Kind::Run: {
                RunOptions options;
                options.install_signal_handlers = true;
                auto outcome = run(cmd.job, options);
                print_outcome(outcome);
                return outcome.exit_code;
            }
        }
    }
    catch (const Error& e)
    {
        std::cerr << "jobjail: " << e.what() << "\n";
        switch (e.kind())
        {
            case ErrorKind::Usage:
            case ErrorKind::InvalidArgument:
            case ErrorKind::MalformedTrace:
            case ErrorKind::UnknownDescriptor: return exit_codes::usage;
            case ErrorKind::BackendUnsupported: return exit_codes::unsupported;
            case ErrorKind::Spawn: return exit_codes::spawn_failure;
            case ErrorKind::Io: return exit_codes::report_io;
            default: return exit_codes::internal;
        }
    }
    catch (const std::exception& e)
    {
        std::cerr << "jobjail: internal error: " << e.what() << "\n";
        return exit_codes::internal;
    }
    return exit_codes::internal;
}

} // namespace jobjail
