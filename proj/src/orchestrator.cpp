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

#include "jobjail/orchestrator.hpp"

#include "jobjail/channel.hpp"
#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <sys/wait.h>

#include <condition_variable>
#include <csignal>
#include <fstream>
#include <memory>
#include <mutex>
#include <stop_token>
#include <thread>

namespace jobjail {

namespace {

std::atomic<bool> g_signalled{false};

extern "C" void on_stop_signal(int)
{
    g_signalled.store(true);
}

class SignalGuard
{
public:
    SignalGuard()
    {
        g_signalled.store(false);
        struct sigaction sa{};
        sa.sa_handler = on_stop_signal;
        sigemptyset(&sa.sa_mask);
        for (std::size_t i = 0; i < signals_.size(); ++i)
            ::sigaction(signals_[i], &sa, &old_[i]);
    }
    ~SignalGuard()
    {
        for (std::size_t i = 0; i < signals_.size(); ++i)
            ::sigaction(signals_[i], &old_[i], nullptr);
    }
    SignalGuard(const SignalGuard&) = delete;
    SignalGuard& operator=(const SignalGuard&) = delete;

private:
    std::array<int, 3> signals_{SIGINT, SIGTERM, SIGHUP};
    std::array<struct sigaction, 3> old_{};
};

// Sleeps until the deadline or until stop is requested.
void sleep_until(std::stop_token st, Clock::time_point deadline)
{
    std::mutex mu;
    std::condition_variable_any cv;
    std::unique_lock lock(mu);
    cv.wait_until(lock, st, deadline, [] { return false; });
}

struct Snapshot
{
    ProcessTable members;
    Sample sample;
};

pid_t reaper_for(const JailHandle& h)
{
    switch (h.backend)
    {
        case IsolationBackend::Subreaper: return h.supervisor_pid;
        case IsolationBackend::PidNamespace: return h.init_pid;
        case IsolationBackend::ProcessGroup: return 1;
    }
    return 1;
}

void merge_into(TerminationReport& into, const TerminationReport& more)
{
    into.steps.insert(into.steps.end(), more.steps.begin(), more.steps.end());
    into.escalated = into.escalated || more.escalated;
    into.survivors = more.survivors;
    into.elapsed += more.elapsed;
}

nlohmann::ordered_json limits_json(const JobSpec& spec, MemoryBackend effective)
{
    nlohmann::ordered_json j;
    const auto& l = spec.limits;
    j["mem_limit_bytes"] = l.mem_limit_bytes ? nlohmann::ordered_json(*l.mem_limit_bytes) : nullptr;
    j["mem_backend"] = l.mem_limit_bytes ? nlohmann::ordered_json(to_string(effective)) : nullptr;
    j["poll_interval_ms"] = l.poll_interval.count();
    j["grace_ms"] = spec.grace.count();
    j["sample_interval_ms"] = spec.telemetry.sample_interval.count();
    j["thread_env"] = thread_env(l.thread_env);
    return j;
}

} // namespace

void JobSpec::validate(int host_cpus) const
{
    if (command.empty() || command.front().empty())
        throw Error(ErrorKind::Usage, "no command given");
    if (grace.count() < 0)
        throw Error(ErrorKind::InvalidArgument, "grace must be >= 0");
    if (telemetry.sample_interval.count() <= 0)
        throw Error(ErrorKind::InvalidArgument, "sample interval must be > 0");
    limits.validate(host_cpus);
}

int exit_code_for(int job_status, bool contained, bool report_ok)
{
    if (!contained)
        return exit_codes::containment_failure;
    if (!report_ok)
        return exit_codes::report_io;
    return exit_code_of(job_status);
}

RunOutcome run(const JobSpec& spec, const RunOptions& options)
{
    int host_cpus = host_cpu_count();
    spec.validate(host_cpus);
    if (!backend_supported(spec.backend))
        throw Error(ErrorKind::BackendUnsupported,
                    fmt::format("{} isolation is not available on this host", to_string(spec.backend)));

    RunOutcome out;
    std::vector<std::string> notes;
    auto jail = Jail::create(spec.backend);

    PreExecHooks hooks;
    if (spec.limits.cpuset)
        apply_cpu_affinity(hooks, *spec.limits.cpuset, host_cpus);

    std::optional<MemoryEnforcer> enforcer;
    if (spec.limits.mem_limit_bytes)
    {
        try
        {
            enforcer.emplace(MemoryEnforcer::apply(jail.handle(), spec.limits, hooks));
        }
        catch (const Error& e)
        {
            if (e.kind() != ErrorKind::BackendUnsupported || spec.limits.mem_backend != MemoryBackend::GroupController ||
                !spec.limits.mem_fallback)
                throw;
            auto policy = spec.limits;
            policy.mem_backend = *spec.limits.mem_fallback;
            enforcer.emplace(MemoryEnforcer::apply(jail.handle(), policy, hooks));
            notes.push_back(fmt::format("memory group controller unavailable ({}); fell back to {}", e.what(),
                                        to_string(policy.mem_backend)));
        }
        out.memory_backend = enforcer->backend();
    }

    std::unique_ptr<AccelSampler> accel;
    if (spec.telemetry.accel_script)
        accel = std::make_unique<MockAccelSampler>(MockAccelSampler::load(*spec.telemetry.accel_script));

    try
    {
        jail.spawn(spec.command, spec.env_overlay, hooks, spec.workdir);
    }
    catch (...)
    {
        ProcfsInspector inspector;
        jail.terminate(inspector, Millis(0));
        if (enforcer)
            enforcer->cleanup();
        throw;
    }
    const JailHandle handle = jail.handle();
    out.handle = handle;
    auto started = Clock::now();

    std::optional<SignalGuard> signal_guard;
    if (options.install_signal_handlers)
        signal_guard.emplace();
    auto cancel_requested = [&] {
        return (signal_guard && g_signalled.load()) || (options.cancel && options.cancel->load());
    };

    Channel<Snapshot> snapshots;
    Channel<EnforcementEvent> kills;

    std::jthread sampler([&, handle, interval = spec.telemetry.sample_interval](std::stop_token st) {
        ProcfsInspector inspector;
        SamplerState state;
        state.origin = started;
        do
        {
            auto deadline = Clock::now() + interval;
            try
            {
                auto m = members(inspector, handle);
                auto s = sample_members(m, handle, state, accel.get());
                snapshots.send({std::move(m), s});
            }
            catch (const Error&)
            {
                // a failed read leaves a gap in the series
            }
            sleep_until(st, deadline);
        } while (!st.stop_requested());
    });

    std::jthread watchdog;
    if (enforcer &&
        (enforcer->backend() == MemoryBackend::Polling || enforcer->backend() == MemoryBackend::GroupController))
    {
        // The watchdog owns the enforcer until it is joined.
        watchdog = std::jthread([&, handle, interval = spec.limits.poll_interval](std::stop_token st) {
            ProcfsInspector inspector;
            do
            {
                auto deadline = Clock::now() + interval;
                try
                {
                    if (auto e = enforcer->check(members(inspector, handle)))
                    {
                        kills.send(*e);
                        return;
                    }
                }
                catch (const Error&)
                {
                }
                sleep_until(st, deadline);
            } while (!st.stop_requested());
        });
    }

    if (options.on_spawn)
        options.on_spawn(handle);

    ProcfsInspector inspector;
    MembershipTracker tracker;
    pid_t reaper = reaper_for(handle);
    bool terminated_early = false;
    auto last_reap = Clock::now();
    auto drain = [&] {
        while (auto snap = snapshots.try_receive())
        {
            tracker.observe(snap->members, reaper);
            out.series.push_back(snap->sample);
        }
    };

    std::optional<int> status;
    while (!(status = jail.poll_job_status()))
    {
        drain();
        if (auto e = kills.try_receive(); e && !terminated_early)
        {
            merge_into(out.termination, jail.terminate(inspector, Millis(0)));
            terminated_early = true;
        }
        else if (!terminated_early && cancel_requested())
        {
            notes.push_back("stopped by request");
            merge_into(out.termination, jail.terminate(inspector, spec.grace));
            terminated_early = true;
        }
        if (terminated_early && !jail.poll_job_status())
        {
            // The root is gone without a status we could collect.
            status = SIGKILL;
            break;
        }
        if (handle.backend == IsolationBackend::Subreaper && Clock::now() - last_reap > Millis(200))
        {
            jail.reap();
            last_reap = Clock::now();
        }
        std::this_thread::sleep_for(Millis(10));
    }
    if (!status)
        status = jail.poll_job_status();
    out.job_status = *status;
    out.job_exit = exit_code_of(out.job_status);
    auto job_end = Clock::now();

    sampler.request_stop();
    sampler.join();
    if (watchdog.joinable())
    {
        watchdog.request_stop();
        watchdog.join();
    }
    drain();

    // Whatever the job left behind, plus tracked processes that escaped.
    auto host = inspector.read_table();
    tracker.observe(members_of(host, handle), reaper);
    out.escapees = detect_escapees(host, handle, tracker);
    std::span<const ProcessRecord> extra;
    if (spec.escapees == EscapePolicy::Kill)
        extra = out.escapees;
    merge_into(out.termination, jail.terminate(inspector, spec.grace, extra));

    out.contained = out.termination.survivors.empty();
    if (!out.escapees.empty())
    {
        notes.push_back(fmt::format("{} process(es) left the jail", out.escapees.size()));
        if (spec.escapees == EscapePolicy::Report)
            out.contained = false;
    }

    if (enforcer)
    {
        enforcer->finish(out.job_status);
        out.enforcement_events = enforcer->events();
        if (!enforcer->cleanup())
            notes.push_back("memory control group could not be removed");
    }

    if (out.series.empty())
    {
        SamplerState state;
        out.series.push_back(sample_members(ProcessTable{}, handle, state));
    }
    out.report = summarize(out.series, out.enforcement_events);
    out.report.runtime = std::chrono::duration_cast<Millis>(job_end - started);
    out.report.escapee_count = static_cast<int>(out.escapees.size());
    out.report.notes = notes;

    if (spec.report_path)
    {
        SeriesMeta meta{handle.jail_id, to_string(handle.backend),
                        spec.limits.cpuset ? format_cpuset(*spec.limits.cpuset) : "",
                        limits_json(spec, out.memory_backend)};
        try
        {
            export_series(meta, out.series, out.report, spec.telemetry.format, *spec.report_path);
            if (spec.telemetry.format == ExportFormat::Csv)
            {
                auto summary = spec.report_path->string() + ".summary.json";
                std::ofstream f(summary, std::ios::trunc);
                f << to_json(out.report).dump(2) << "\n";
                f.flush();
                if (!f)
                    throw Error(ErrorKind::Io, fmt::format("cannot write {}", summary));
            }
        }
        catch (const Error& e)
        {
            out.report_error = e.what();
        }
    }

    out.exit_code = exit_code_for(out.job_status, out.contained, !out.report_error);
    return out;
}

} // namespace jobjail
