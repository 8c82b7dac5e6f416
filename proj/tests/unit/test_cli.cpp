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
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <fstream>

using namespace jobjail;
using testing_support::TempDir;

namespace {

CliCommand parse(std::vector<std::string> args)
{
    args.insert(args.begin(), "jobjail");
    return parse_args(args);
}

ErrorKind parse_error(std::vector<std::string> args)
{
    try
    {
        parse(std::move(args));
    }
    catch (const Error& e)
    {
        return e.kind();
    }
    ADD_FAILURE() << "parse succeeded";
    return ErrorKind::Io;
}

int run_cli(const std::vector<std::string>& args)
{
    std::vector<std::string> argv{testing_support::cli()};
    argv.insert(argv.end(), args.begin(), args.end());
    pid_t pid = testing_support::spawn_plain(argv);
    int ws = testing_support::wait_exit(pid);
    return WIFEXITED(ws) ? WEXITSTATUS(ws) : -1;
}

} // namespace

TEST(ParseRun, MemoryLimitExample)
{
    auto cmd = parse({"run", "--mem-limit", "5G", "--mem-backend", "cgroup", "--", "sleep", "10"});
    ASSERT_EQ(cmd.kind, CliCommand::Kind::Run);
    EXPECT_EQ(cmd.job.limits.mem_limit_bytes, 5ull << 30);
    EXPECT_EQ(cmd.job.limits.mem_backend, MemoryBackend::GroupController);
    EXPECT_EQ(cmd.job.command, (std::vector<std::string>{"sleep", "10"}));
}

TEST(ParseRun, ThreadLimitGoesIntoTheEnvironment)
{
    auto cmd = parse({"run", "--omp-threads", "1", "--", "python", "train.py"});
    EXPECT_EQ(cmd.job.env_overlay.at("OMP_NUM_THREADS"), "1");
    EXPECT_EQ(cmd.job.limits.thread_env.omp_threads, 1);
    EXPECT_EQ(cmd.job.env_overlay.count("MKL_NUM_THREADS"), 0u);
}

TEST(ParseRun, MissingCommandIsUsage)
{
    EXPECT_EQ(parse_error({"run", "--mem-limit", "1G"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--"}), ErrorKind::Usage);
}

TEST(ParseRun, RejectsBadValues)
{
    EXPECT_EQ(parse_error({"run", "--backend", "vm", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--mem-limit", "lots", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--omp-threads", "x", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--escapees", "maybe", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--env", "NOEQUALS", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--format", "xml", "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"frobnicate"}), ErrorKind::Usage);
}

TEST(ParseRun, AllOptions)
{
    auto cmd = parse({"run", "--backend", "pg", "--mem-limit", "512M", "--mem-backend", "poll", "--poll-interval",
                      "250ms", "--cpus", "0", "--mkl-threads", "2", "--numexpr-threads", "3", "--mkl-sequential",
                      "--grace", "2s", "--sample-interval", "100ms", "--report", "/tmp/r.csv", "--format", "csv",
                      "--escapees", "report", "--env", "A=1", "--env", "B=x=y", "--", "prog", "--flag"});
    const auto& j = cmd.job;
    EXPECT_EQ(j.backend, IsolationBackend::ProcessGroup);
    EXPECT_EQ(j.limits.mem_limit_bytes, 512ull << 20);
    EXPECT_EQ(j.limits.mem_backend, MemoryBackend::Polling);
    EXPECT_EQ(j.limits.poll_interval, Millis(250));
    ASSERT_TRUE(j.limits.cpuset);
    EXPECT_EQ(*j.limits.cpuset, CpuSet{0});
    EXPECT_EQ(j.grace, Millis(2000));
    EXPECT_EQ(j.telemetry.sample_interval, Millis(100));
    EXPECT_EQ(j.telemetry.format, ExportFormat::Csv);
    EXPECT_EQ(j.report_path, std::filesystem::path("/tmp/r.csv"));
    EXPECT_EQ(j.escapees, EscapePolicy::Report);
    EXPECT_EQ(j.env_overlay.at("MKL_NUM_THREADS"), "2");
    EXPECT_EQ(j.env_overlay.at("NUMEXPR_NUM_THREADS"), "3");
    EXPECT_EQ(j.env_overlay.at("MKL_THREADING_LAYER"), "SEQUENTIAL");
    EXPECT_EQ(j.env_overlay.at("A"), "1");
    EXPECT_EQ(j.env_overlay.at("B"), "x=y");
    EXPECT_EQ(j.command, (std::vector<std::string>{"prog", "--flag"}));
}

TEST(ParseRun, Defaults)
{
    auto cmd = parse({"run", "--", "true"});
    const auto& j = cmd.job;
    EXPECT_EQ(j.backend, default_backend());
    EXPECT_FALSE(j.limits.mem_limit_bytes);
    EXPECT_EQ(j.grace, Millis(30000));
    EXPECT_EQ(j.telemetry.sample_interval, Millis(500));
    EXPECT_EQ(j.escapees, EscapePolicy::Kill);
    EXPECT_TRUE(j.env_overlay.empty());
}

TEST(ParseRun, FlagsOverrideConfigFile)
{
    TempDir dir;
    auto cfg = dir / "job.json";
    std::ofstream(cfg) << R"({"mem-limit": "1G", "grace": "5s", "omp-threads": 4,
                              "env": {"A": "config", "C": "3"}})";
    auto cmd = parse({"run", "--config", cfg.string(), "--omp-threads", "2", "--env", "A=flag", "--", "true"});
    EXPECT_EQ(cmd.job.limits.mem_limit_bytes, 1ull << 30);
    EXPECT_EQ(cmd.job.grace, Millis(5000));
    EXPECT_EQ(cmd.job.env_overlay.at("OMP_NUM_THREADS"), "2");
    EXPECT_EQ(cmd.job.env_overlay.at("A"), "flag");
    EXPECT_EQ(cmd.job.env_overlay.at("C"), "3");

    std::ofstream(dir / "bad.json") << R"({"mem_limit": "1G"})";
    EXPECT_EQ(parse_error({"run", "--config", (dir / "bad.json").string(), "--", "true"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"run", "--config", (dir / "missing.json").string(), "--", "true"}), ErrorKind::Usage);
}

TEST(ParsePymem, SimulateOptions)
{
    auto cmd = parse({"pymem", "simulate", "--trace", "t.txt", "--out", "o.json", "--arena-kb", "4", "--small-threshold",
                      "256", "--gc", "5,2,2"});
    ASSERT_EQ(cmd.kind, CliCommand::Kind::Pymem);
    EXPECT_EQ(cmd.pymem.action, PymemCommand::Action::Simulate);
    EXPECT_EQ(cmd.pymem.arena.arena_bytes, 4096u);
    EXPECT_EQ(cmd.pymem.arena.small_threshold_bytes, 256u);
    EXPECT_EQ(cmd.pymem.gc.thresholds, (std::vector<std::uint64_t>{5, 2, 2}));
    EXPECT_EQ(parse_error({"pymem", "simulate", "--trace", "t", "--out", "o", "--gc", "7,,1"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"pymem", "simulate", "--trace", "t", "--out", "o", "--gc", "0,1,1"}), ErrorKind::Usage);
    EXPECT_EQ(parse_error({"pymem", "simulate", "--out", "o"}), ErrorKind::Usage);
}

TEST(ExitCodes, TotalMapping)
{
    // Normal exit codes pass through, signals become 128+n, containment
    // failure dominates, then report failure.
    for (int code = 0; code < 256; ++code)
    {
        int ws = code << 8;
        EXPECT_EQ(exit_code_for(ws, true, true), code);
        EXPECT_EQ(exit_code_for(ws, false, true), exit_codes::containment_failure);
        EXPECT_EQ(exit_code_for(ws, true, false), exit_codes::report_io);
        EXPECT_EQ(exit_code_for(ws, false, false), exit_codes::containment_failure);
    }
    for (int sig = 1; sig < 32; ++sig)
        EXPECT_EQ(exit_code_for(sig, true, true), 128 + sig);
}

TEST(Binary, HelpAndUsage)
{
    EXPECT_EQ(run_cli({"--help"}), 0);
    EXPECT_EQ(run_cli({"run"}), exit_codes::usage);
    EXPECT_EQ(run_cli({"run", "--mem-limit", "-3", "--", "true"}), exit_codes::usage);
}

TEST(Binary, PymemSimulateWritesReport)
{
    TempDir dir;
    std::ofstream(dir / "t.trace") << "alloc,integer:small,1\nalloc,600,0\nfree,2\n";
    ASSERT_EQ(run_cli({"pymem", "simulate", "--trace", (dir / "t.trace").string(), "--out",
                       (dir / "o.json").string()}),
              0);
    auto j = nlohmann::json::parse(testing_support::slurp(dir / "o.json"));
    EXPECT_EQ(j["peak_bytes"], 262144 + 600);
    EXPECT_EQ(j["direct_heap_bytes"], 600);
    EXPECT_EQ(j["arena_count_peak"], 1);
}

TEST(Binary, PymemErrorsMapToExitCodes)
{
    TempDir dir;
    std::ofstream(dir / "bad.trace") << "free,1\n";
    std::ofstream(dir / "cls.trace") << "alloc,tuple:big,0\n";
    auto out = (dir / "o.json").string();
    EXPECT_EQ(run_cli({"pymem", "simulate", "--trace", (dir / "bad.trace").string(), "--out", out}), exit_codes::usage);
    EXPECT_EQ(run_cli({"pymem", "simulate", "--trace", (dir / "cls.trace").string(), "--out", out}), exit_codes::usage);
    EXPECT_EQ(run_cli({"pymem", "size", "foo"}), exit_codes::usage);
    EXPECT_EQ(run_cli({"pymem", "size", "integer:large"}), 0);
}

TEST(Binary, RunMapsOutcomes)
{
    auto probe = testing_support::probe();
    EXPECT_EQ(run_cli({"run", "--backend", "pg", "--sample-interval", "50ms", "--", probe, "exit", "0"}), 0);
    EXPECT_EQ(run_cli({"run", "--backend", "pg", "--sample-interval", "50ms", "--", probe, "exit", "7"}), 7);
    EXPECT_EQ(run_cli({"run", "--backend", "pg", "--", "/nonexistent/binary"}), exit_codes::spawn_failure);
    EXPECT_EQ(run_cli({"run", "--backend", "pg", "--report", "/nonexistent/dir/r.json", "--sample-interval", "50ms",
                       "--", probe, "exit", "0"}),
              exit_codes::report_io);
}
