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

// Runs the ten acceptance criteria against real probes and the simulated
// inspector, printing one PASS/FAIL line per criterion.

#include "jobjail/cgroup.hpp"
#include "jobjail/envctl.hpp"
#include "jobjail/error.hpp"
#include "jobjail/inspector.hpp"
#include "jobjail/jail.hpp"
#include "jobjail/limits.hpp"
#include "jobjail/orchestrator.hpp"
#include "jobjail/pymem.hpp"
#include "jobjail/telemetry.hpp"
#include "jobjail/units.hpp"
#include "pymem_reference.hpp"
#include "test_support.hpp"
#include "tree_reference.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

using namespace jobjail;
using namespace std::chrono_literals;
namespace ts = testing_support;

namespace {

// Tolerances and sizes, fixed here so a run cannot loosen them.
constexpr auto kOrphanCaseBudget = 10s;
constexpr auto kDataSegmentBudget = 60s;
constexpr auto kPollingBudget = 120s;
constexpr auto kAffinityBudget = 180s;
constexpr auto kPymemBudget = 60s;
constexpr std::uint64_t kMemhogTotal = 5ull << 30;
constexpr std::uint64_t kPollLimit = 2ull << 30;
constexpr std::uint64_t kPollHogTotal = 4ull << 30;
constexpr std::uint64_t kPollHogRate = 3ull << 30;
constexpr int kPollRuns = 10;
constexpr int kPollRunsRequired = 9;
constexpr std::uint64_t kGroupTolerance = 4ull << 20;
constexpr int kDeepDepth = 50;
constexpr std::uint64_t kDeepRssEach = 100ull << 20;
constexpr std::uint64_t kDeepLimit = 4ull << 30;
constexpr double kDeepRelTolerance = 0.05;
constexpr int kRandomTrees = 500;
constexpr int kRandomTreeDepth = 100;
constexpr double kOneCoreLow = 90.0;
constexpr double kOneCoreHigh = 110.0;
constexpr double kFourCoreHigh = 410.0;
constexpr int kPymemTraces = 1000;
constexpr std::size_t kPymemMaxEvents = 10000;

struct Verdict
{
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what)
    {
        if (!detail.empty())
            detail += "; ";
        detail += what;
        if (!ok)
        {
            pass = false;
            detail += " [failed]";
        }
    }
};

using Clock = std::chrono::steady_clock;

std::string gib(std::uint64_t b)
{
    return fmt::format("{:.2f} GiB", static_cast<double>(b) / (1ull << 30));
}

JobSpec probe_job(std::vector<std::string> args, IsolationBackend backend = IsolationBackend::ProcessGroup)
{
    JobSpec spec;
    spec.command = {ts::probe()};
    spec.command.insert(spec.command.end(), args.begin(), args.end());
    spec.backend = backend;
    spec.grace = 2000ms;
    spec.telemetry.sample_interval = 250ms;
    return spec;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1. Orphans escape without a jail and are contained with one.
Verdict orphan_containment()
{
    Verdict v;
    {
        auto t0 = Clock::now();
        ts::TempDir dir;
        pid_t parent = ts::spawn_plain({ts::probe(), "orphaner", "100", "150"},
                                       {"JOBJAIL_PROBE_SIDECHANNEL=" + (dir / "side").string()});
        auto entries = ts::wait_for_sidechannel(dir / "side", 3, 3s);
        ::kill(parent, SIGKILL);
        ts::wait_exit(parent);
        ProcfsInspector inspector;
        int survivors = 0;
        for (const auto& e : entries)
        {
            auto rec = inspector.read_process(e.pid);
            if (e.role == "sleeper" && rec && !rec->is_zombie() && rec->ppid == 1)
                ++survivors;
        }
        for (const auto& e : entries)
            if (e.role == "sleeper")
                ::kill(e.pid, SIGKILL);
        v.check(survivors == 2 && seconds_since(t0) < kOrphanCaseBudget.count(),
                fmt::format("unjailed: {} orphan(s) with ppid 1", survivors));
    }
    for (auto backend : {IsolationBackend::PidNamespace, IsolationBackend::Subreaper})
    {
        if (!backend_supported(backend))
        {
            v.check(false, fmt::format("{}: unavailable", to_string(backend)));
            continue;
        }
        auto t0 = Clock::now();
        ts::TempDir dir;
        ProcfsInspector inspector;
        auto jail = Jail::create(backend);
        pid_t root = jail.spawn({ts::probe(), "orphaner", "100", "150"},
                                {{"JOBJAIL_PROBE_SIDECHANNEL", (dir / "side").string()}});
        auto entries = ts::wait_for_sidechannel(dir / "side", 3, 3s);
        if (jail.handle().ns_token)
            entries = ts::to_host_pids(entries, *jail.handle().ns_token);
        // Orphan the sleepers first, then tear the jail down.
        ::kill(root, SIGKILL);
        ts::wait_dead(root, 2s);
        auto rep = jail.terminate(inspector, 2000ms);
        int alive = 0;
        for (const auto& e : entries)
            alive += ts::wait_dead(e.pid, 1s) ? 0 : 1;
        v.check(entries.size() == 3 && rep.survivors.empty() && alive == 0 &&
                    seconds_since(t0) < kOrphanCaseBudget.count(),
                fmt::format("{}: {} survivor(s)", to_string(backend), rep.survivors.size() + alive));
    }
    return v;
}

bool memhog_blocked(const RunOutcome& out)
{
    return out.exit_code != 0;
}

// 2. Data-segment limits against a 5 GiB allocation.
Verdict data_segment_limits()
{
    Verdict v;
    auto t0 = Clock::now();
    const std::vector<std::pair<std::string, bool>> rows{
        {"1K", true}, {"1G", true}, {"5G", true}, {"20G", false}, {"40G", false}};
    for (const auto& [limit, blocked] : rows)
    {
        auto spec = probe_job({"memhog", "--total", std::to_string(kMemhogTotal)});
        spec.limits.mem_limit_bytes = parse_size(limit);
        spec.limits.mem_backend = MemoryBackend::DataSegment;
        auto out = run(spec);
        bool got = memhog_blocked(out);
        v.check(got == blocked, fmt::format("{} {}", limit, got ? "blocked" : "allocated"));
    }
    v.check(seconds_since(t0) < kDataSegmentBudget.count(), fmt::format("{:.1f} s", seconds_since(t0)));
    return v;
}

// 3. The resident-set limit has no effect and is flagged.
Verdict resident_set_limits()
{
    Verdict v;
    for (const std::string limit : {"1K", "1G"})
    {
        auto spec = probe_job({"memhog", "--total", std::to_string(kMemhogTotal)});
        spec.limits.mem_limit_bytes = parse_size(limit);
        spec.limits.mem_backend = MemoryBackend::ResidentSetLegacy;
        auto out = run(spec);
        bool flagged = std::any_of(out.enforcement_events.begin(), out.enforcement_events.end(), [](const auto& e) {
            return e.action == EnforcementAction::FlaggedIneffective;
        });
        v.check(out.exit_code == 0 && flagged,
                fmt::format("{} {}{}", limit, out.exit_code == 0 ? "allocated" : "blocked",
                            flagged ? ", flagged ineffective" : ""));
    }
    return v;
}

// 4. Polling overshoots before it kills; the group controller does not.
Verdict polling_race()
{
    Verdict v;
    auto t0 = Clock::now();
    std::vector<std::string> hog{"memhog", "--total", std::to_string(kPollHogTotal), "--rate",
                                 std::to_string(kPollHogRate), "--touch", "--hold", "5"};
    int overshoots = 0;
    std::uint64_t worst = UINT64_MAX;
    for (int i = 0; i < kPollRuns; ++i)
    {
        auto spec = probe_job(hog);
        spec.limits.mem_limit_bytes = kPollLimit;
        spec.limits.mem_backend = MemoryBackend::Polling;
        spec.limits.poll_interval = 1000ms;
        auto out = run(spec);
        for (const auto& e : out.enforcement_events)
        {
            if (e.action == EnforcementAction::KilledJail && e.observed_bytes > kPollLimit)
            {
                ++overshoots;
                worst = std::min(worst, e.observed_bytes);
                break;
            }
        }
    }
    v.check(overshoots >= kPollRunsRequired,
            fmt::format("polling: overshoot in {}/{} runs (smallest {})", overshoots, kPollRuns,
                        worst == UINT64_MAX ? "none" : gib(worst)));

    auto spec = probe_job(hog);
    spec.limits.mem_limit_bytes = kPollLimit;
    spec.limits.mem_backend = MemoryBackend::GroupController;
    spec.limits.mem_fallback.reset();
    try
    {
        auto out = run(spec);
        std::uint64_t charged = 0;
        for (const auto& e : out.enforcement_events)
            if (e.backend == MemoryBackend::GroupController)
                charged = std::max(charged, e.observed_bytes);
        v.check(charged > 0 && charged <= kPollLimit + kGroupTolerance,
                fmt::format("group controller: peak charge {} bytes", charged));
    }
    catch (const Error& e)
    {
        v.check(false, fmt::format("group controller: {}", e.what()));
    }
    v.check(seconds_since(t0) < kPollingBudget.count(), fmt::format("{:.1f} s", seconds_since(t0)));
    return v;
}

// 5. Hierarchy RSS of a deep tree, then the sum against brute force.
Verdict deep_hierarchy()
{
    Verdict v;
    ts::TempDir dir;
    ProcfsInspector inspector;
    auto jail = Jail::create(default_backend());
    jail.spawn({ts::probe(), "deeptree", std::to_string(kDeepDepth), std::to_string(kDeepRssEach)},
               {{"JOBJAIL_PROBE_SIDECHANNEL", (dir / "side").string()}});
    const double expected = static_cast<double>(kDeepDepth) * static_cast<double>(kDeepRssEach);
    PollDecision d;
    auto deadline = Clock::now() + 30s;
    while (Clock::now() < deadline)
    {
        d = poll_enforce(members(inspector, jail.handle()), kDeepLimit);
        auto n = ts::read_sidechannel(dir / "side").size();
        if (n == static_cast<std::size_t>(kDeepDepth) &&
            static_cast<double>(d.observed_bytes) >= (1.0 - kDeepRelTolerance) * expected)
            break;
        std::this_thread::sleep_for(100ms);
    }
    // Let the leaf finish populating before the final reading.
    std::this_thread::sleep_for(300ms);
    d = poll_enforce(members(inspector, jail.handle()), kDeepLimit);
    jail.terminate(inspector, 1000ms);
    double rel = std::abs(static_cast<double>(d.observed_bytes) - expected) / expected;
    v.check(d.exceeded && rel <= kDeepRelTolerance,
            fmt::format("deeptree: {} observed over {} processes, {:.1f}% from {}", gib(d.observed_bytes),
                        d.pids.size(), rel * 100, gib(static_cast<std::uint64_t>(expected))));

    std::mt19937_64 rng(20260101);
    int mismatches = 0;
    for (int i = 0; i < kRandomTrees; ++i)
    {
        auto t = oracle::random_tree(rng, kRandomTreeDepth);
        auto got = poll_enforce(members_of(t.host, t.handle), 1).observed_bytes;
        if (got != oracle::brute_force_rss(t.host, t.handle.root_pid))
            ++mismatches;
    }
    v.check(mismatches == 0, fmt::format("{} random trees, {} mismatch(es)", kRandomTrees, mismatches));
    return v;
}

double mean_cpu_after_first(const Series& s)
{
    double sum = 0;
    int n = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
    {
        if (s[i].process_count == 0)
            continue;
        sum += s[i].cpu_percent;
        ++n;
    }
    return n ? sum / n : 0.0;
}

// 6. Pinning bounds CPU use and placement.
Verdict affinity()
{
    Verdict v;
    auto t0 = Clock::now();
    auto one = probe_job({"threads", "8", "--busy", "--seconds", "5"});
    one.limits.cpuset = CpuSet{0};
    auto out = run(one);
    int samples = 0, on_zero = 0;
    for (const auto& x : out.series)
    {
        if (x.main_cpu_id < 0)
            continue;
        ++samples;
        on_zero += x.main_cpu_id == 0 ? 1 : 0;
    }
    double mean = mean_cpu_after_first(out.series);
    v.check(samples > 0 && on_zero == samples && mean >= kOneCoreLow && mean <= kOneCoreHigh,
            fmt::format("cpuset 0: {}/{} samples on cpu 0, mean {:.1f}%", on_zero, samples, mean));

    int host = host_cpu_count();
    int width = std::min(4, host);
    CpuSet four;
    for (int c = 0; c < width; ++c)
        four.insert(c);
    auto wide = probe_job({"threads", "8", "--busy", "--seconds", "5"});
    wide.limits.cpuset = four;
    auto out4 = run(wide);
    double mean4 = mean_cpu_after_first(out4.series);
    v.check(mean4 <= kFourCoreHigh, fmt::format("cpuset {}: mean {:.1f}%", format_cpuset(four), mean4));
    v.check(seconds_since(t0) < kAffinityBudget.count(), fmt::format("{:.1f} s", seconds_since(t0)));
    return v;
}

// 7. Thread-limit variables reach the child byte for byte.
Verdict env_injection()
{
    Verdict v;
    ThreadLimitSpec spec;
    spec.mkl_threads = 1;
    spec.numexpr_threads = 1;
    spec.omp_threads = 1;
    spec.mkl_sequential = true;
    auto env = thread_env(spec);
    const EnvMap expected{{"MKL_NUM_THREADS", "1"},
                          {"NUMEXPR_NUM_THREADS", "1"},
                          {"OMP_NUM_THREADS", "1"},
                          {"MKL_THREADING_LAYER", "SEQUENTIAL"}};
    v.check(env == expected, fmt::format("{} variable(s)", env.size()));

    ts::TempDir dir;
    auto path = dir / "env.txt";
    auto job = probe_job({"env-dump", "--out", path.string()});
    job.env_overlay = env;
    auto out = run(job);
    std::string want;
    for (const auto& kv : to_envp(merge_env({current_environment(), env})))
        want += kv + "\n";
    auto got = ts::slurp(path);
    v.check(out.exit_code == 0 && got == want, fmt::format("readback {} bytes", got.size()));
    return v;
}

// 8. Thread counts and main-CPU traces.
Verdict telemetry()
{
    Verdict v;
    auto eight = run(probe_job({"threads", "8", "--seconds", "2"}, default_backend()));
    v.check(eight.report.not_mode == 9, fmt::format("threads 8: NoT mode {}", eight.report.not_mode));
    auto many = run(probe_job({"threads", "79", "--busy", "--seconds", "3"}, default_backend()));
    v.check(many.report.not_mode == 80, fmt::format("threads 79: NoT mode {}", many.report.not_mode));

    JailHandle h;
    h.jail_id = "sim";
    h.backend = IsolationBackend::ProcessGroup;
    h.root_pid = 100;
    h.pgid = 100;

    auto scripted = ScenarioInspector::load(ts::data_dir() / "main_cpu_alternating.scenario", 8);
    SamplerState state;
    std::vector<int> trace;
    for (int i = 0; i < scripted.tick_count(); ++i)
        trace.push_back(sample(scripted, h, state).main_cpu_id);
    v.check(trace == std::vector<int>{4, 5, 4, 5, 4, 5}, "alternating script");

    // A long random migration script with a worker on other CPUs.
    std::mt19937_64 rng(4);
    std::map<int, std::vector<ProcessRecord>> ticks;
    std::vector<int> want;
    for (int t = 0; t < 200; ++t)
    {
        ProcessRecord root;
        root.pid = 100;
        root.ppid = 1;
        root.pgid = 100;
        root.state = ProcState::Running;
        root.thread_count = 4;
        root.cpu_id = static_cast<int>(rng() % 16);
        root.cpu_time = 0.25 * t;
        root.start_time = 1000;
        ProcessRecord worker = root;
        worker.pid = 101;
        worker.ppid = 100;
        worker.cpu_id = static_cast<int>(rng() % 16);
        ticks[t] = {root, worker};
        want.push_back(root.cpu_id);
    }
    ScenarioInspector random_script(ticks, 16, 500ms);
    SamplerState st2;
    std::vector<int> got;
    for (int t = 0; t < 200; ++t)
        got.push_back(sample(random_script, h, st2).main_cpu_id);
    v.check(got == want, "200-tick migration script");
    return v;
}

// 9. The memory model against the brute-force reference.
Verdict pymem_equivalence()
{
    using namespace jobjail::pymem;
    Verdict v;
    auto t0 = Clock::now();
    std::mt19937_64 rng(9);
    int bad = 0;
    for (int i = 0; i < kPymemTraces; ++i)
    {
        std::size_t events = 1 + rng() % kPymemMaxEvents;
        double free_ratio = 0.1 + 0.4 * static_cast<double>(rng() % 100) / 100.0;
        double tracked = static_cast<double>(rng() % 101) / 100.0;
        auto trace = oracle::random_trace(rng, events, 1 + rng() % 4096, free_ratio, tracked);
        ArenaConfig arena;
        GcConfig gc;
        if (i % 2)
        {
            arena = ArenaConfig{1024ull << (rng() % 8), 1 + rng() % 1024};
            if (arena.small_threshold_bytes >= arena.arena_bytes)
                arena.small_threshold_bytes = arena.arena_bytes / 2;
            gc.thresholds = {1 + rng() % 800, 1 + rng() % 20, 1 + rng() % 20};
        }
        if (simulate(trace, arena, gc) != oracle::reference_simulate(trace, arena, gc) ||
            gc_rounds(trace, gc) != oracle::reference_gc_rounds(trace, gc))
            ++bad;
    }
    v.check(bad == 0, fmt::format("{} traces, {} mismatch(es)", kPymemTraces, bad));

    auto sizes = SizeTable::defaults();
    v.check(object_size("integer:large", sizes) == 32 && object_size("integer:small", sizes) == 28,
            "integer sizes 32/28");

    std::vector<Event> ev(701, Event{Op::Alloc, 28, true, 0});
    auto rounds = gc_rounds(AllocTrace(ev));
    bool first_at_701 = !rounds.schedule.empty() && rounds.schedule[0] == GcRound{701, 0};
    v.check(first_at_701, "first generation-0 round at event 701");
    v.check(seconds_since(t0) < kPymemBudget.count(), fmt::format("{:.1f} s", seconds_since(t0)));
    return v;
}

// 10. Nothing is left behind.
Verdict cleanup()
{
    Verdict v;
    std::this_thread::sleep_for(500ms);
    auto probes = ts::live_probes();
    v.check(probes.empty(), fmt::format("{} live probe process(es)", probes.size()));

    ProcfsInspector inspector;
    int children = 0;
    auto table = inspector.read_table();
    for (const auto& r : table.records())
        if (r.ppid == ::getpid())
            ++children;
    v.check(children == 0, fmt::format("{} child process(es)", children));

    if (auto where = locate_memory_cgroup())
    {
        auto nodes = leftover_cgroup_nodes(*where);
        v.check(nodes.empty(), fmt::format("{} leftover control group node(s)", nodes.size()));
    }
    else
    {
        v.detail += "; no memory control group on this host";
    }
    return v;
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"orphan containment", orphan_containment},
        {"data-segment limits", data_segment_limits},
        {"resident-set limits", resident_set_limits},
        {"polling race", polling_race},
        {"deep hierarchy accounting", deep_hierarchy},
        {"cpu affinity", affinity},
        {"environment injection", env_injection},
        {"telemetry", telemetry},
        {"memory model equivalence", pymem_equivalence},
        {"cleanup", cleanup},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        Verdict v;
        try
        {
            v = criteria[i].second();
        }
        catch (const std::exception& e)
        {
            v.pass = false;
            v.detail = fmt::format("exception: {}", e.what());
        }
        failed += v.pass ? 0 : 1;
        fmt::print("criterion {:2} {:<26} {}  ({})\n", i + 1, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
