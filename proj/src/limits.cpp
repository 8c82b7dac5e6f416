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

#include "jobjail/limits.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <sys/wait.h>

#include <fstream>

namespace jobjail {

const char* to_string(MemoryBackend backend) noexcept
{
    switch (backend)
    {
        case MemoryBackend::GroupController: return "group-controller";
        case MemoryBackend::DataSegment: return "data-segment";
        case MemoryBackend::Polling: return "polling";
        case MemoryBackend::ResidentSetLegacy: return "resident-set-legacy";
    }
    return "polling";
}

MemoryBackend parse_memory_backend(std::string_view text)
{
    if (text == "cgroup" || text == "group-controller")
        return MemoryBackend::GroupController;
    if (text == "rlimit-data" || text == "data-segment")
        return MemoryBackend::DataSegment;
    if (text == "poll" || text == "polling")
        return MemoryBackend::Polling;
    if (text == "rlimit-rss" || text == "resident-set-legacy")
        return MemoryBackend::ResidentSetLegacy;
    throw Error(ErrorKind::Usage, fmt::format("unknown memory backend '{}'", text));
}

const char* to_string(EnforcementAction action) noexcept
{
    switch (action)
    {
        case EnforcementAction::None: return "none";
        case EnforcementAction::BlockedAtSource: return "blocked-at-source";
        case EnforcementAction::KilledJail: return "killed-jail";
        case EnforcementAction::FlaggedIneffective: return "flagged-ineffective";
    }
    return "none";
}

void LimitPolicy::validate(int host_cpus) const
{
    if (mem_limit_bytes && *mem_limit_bytes == 0)
        throw Error(ErrorKind::InvalidArgument, "memory limit must be > 0");
    if (poll_interval.count() <= 0)
        throw Error(ErrorKind::InvalidArgument, "poll interval must be > 0");
    if (cpuset)
    {
        PreExecHooks scratch;
        apply_cpu_affinity(scratch, *cpuset, host_cpus);
    }
    thread_env.validate();
}

PollDecision poll_enforce(const ProcessTable& members, std::uint64_t limit_bytes)
{
    PollDecision d;
    for (const auto& r : members.records())
    {
        // Zombies hold no memory worth accounting.
        if (!r.is_zombie())
            d.observed_bytes += r.rss_bytes;
    }
    d.exceeded = d.observed_bytes > limit_bytes;
    if (d.exceeded)
        d.pids = members.pids();
    return d;
}

void apply_cpu_affinity(PreExecHooks& hooks, const CpuSet& cpus, int host_cpus)
{
    if (cpus.empty())
        throw Error(ErrorKind::InvalidArgument, "cpuset is empty");
    for (int c : cpus)
    {
        if (c < 0 || c >= host_cpus)
            throw Error(ErrorKind::InvalidArgument,
                        fmt::format("cpu {} is not on this host (cpus 0-{})", c, host_cpus - 1));
    }
    hooks.cpus = cpus;
}

MemoryEnforcer MemoryEnforcer::apply(const JailHandle& handle, const LimitPolicy& policy, PreExecHooks& hooks)
{
    if (!policy.mem_limit_bytes)
        throw Error(ErrorKind::InvalidArgument, "no memory limit in policy");
    std::uint64_t limit = *policy.mem_limit_bytes;
    MemoryEnforcer enforcer(policy.mem_backend, limit);

    switch (policy.mem_backend)
    {
        case MemoryBackend::DataSegment:
            hooks.data_limit = static_cast<rlim_t>(limit);
            break;

        case MemoryBackend::ResidentSetLegacy:
            // Accepted by the kernel, enforced by nothing since 2.4.
            hooks.rss_limit = static_cast<rlim_t>(limit);
            enforcer.events_.push_back(enforcer.make_event(EnforcementAction::FlaggedIneffective, 0));
            enforcer.events_.back().note = "RLIMIT_RSS is not enforced by modern Linux kernels";
            break;

        case MemoryBackend::Polling:
            break;

        case MemoryBackend::GroupController: {
            auto where = locate_memory_cgroup();
            if (!where)
                throw Error(ErrorKind::BackendUnsupported, "no writable memory control group hierarchy");
            auto node = CgroupNode::create(*where, cgroup_node_name(handle.jail_id), limit);
            hooks.attach.push_back([path = node.path()](pid_t pid) {
                std::ofstream out(path / "cgroup.procs");
                out << pid;
                out.flush();
                if (!out)
                    throw Error(ErrorKind::BackendUnsupported,
                                fmt::format("cannot move pid {} into {}", pid, path.string()));
            });
            enforcer.cgroup_ = std::move(node);
            break;
        }
    }
    return enforcer;
}

EnforcementEvent MemoryEnforcer::make_event(EnforcementAction action, std::uint64_t observed) const
{
    EnforcementEvent e;
    e.at = Clock::now();
    e.backend = backend_;
    e.observed_bytes = observed;
    e.limit_bytes = limit_;
    e.action = action;
    return e;
}

std::optional<EnforcementEvent> MemoryEnforcer::check(const ProcessTable& members)
{
    auto decision = poll_enforce(members, limit_);
    peak_observed_ = std::max(peak_observed_, decision.observed_bytes);
    if (killed_)
        return std::nullopt;

    if (backend_ == MemoryBackend::Polling && decision.exceeded)
    {
        killed_ = true;
        auto e = make_event(EnforcementAction::KilledJail, decision.observed_bytes);
        e.affected_pids = decision.pids;
        e.note = "hierarchy RSS above limit at poll";
        events_.push_back(e);
        return e;
    }
    if (backend_ == MemoryBackend::GroupController && cgroup_)
    {
        auto ooms = cgroup_->oom_kills();
        if (ooms > oom_seen_)
        {
            oom_seen_ = ooms;
            killed_ = true;
            auto e = make_event(EnforcementAction::KilledJail, cgroup_->peak_bytes().value_or(cgroup_->usage_bytes()));
            e.affected_pids = members.pids();
            e.note = fmt::format("kernel OOM killer fired {} time(s) inside the group", ooms);
            events_.push_back(e);
            return e;
        }
    }
    return std::nullopt;
}

EnforcementEvent MemoryEnforcer::finish(int job_wait_status)
{
    bool job_ok = WIFEXITED(job_wait_status) && WEXITSTATUS(job_wait_status) == 0;
    switch (backend_)
    {
        case MemoryBackend::ResidentSetLegacy:
            return events_.front();

        case MemoryBackend::DataSegment: {
            // The limit fails brk/mmap in the job itself; a failing job is the
            // only signal the supervisor gets.
            auto e = make_event(job_ok ? EnforcementAction::None : EnforcementAction::BlockedAtSource, peak_observed_);
            e.note = job_ok ? "job completed under the data-segment limit"
                            : fmt::format("job failed under the data-segment limit ({})",
                                          describe_wait_status(job_wait_status));
            events_.push_back(e);
            return e;
        }

        case MemoryBackend::GroupController:
            if (!killed_ && cgroup_ && cgroup_->oom_kills() > oom_seen_)
            {
                ProcessTable none;
                check(none);
            }
            [[fallthrough]];
        case MemoryBackend::Polling: {
            if (killed_)
                return events_.back();
            std::uint64_t observed = peak_observed_;
            if (cgroup_)
                observed = cgroup_->peak_bytes().value_or(observed);
            auto e = make_event(EnforcementAction::None, observed);
            events_.push_back(e);
            return e;
        }
    }
    return make_event(EnforcementAction::None, peak_observed_);
}

bool MemoryEnforcer::cleanup(Millis timeout)
{
    if (!cgroup_)
        return true;
    return cgroup_->remove(timeout);
}

} // namespace jobjail
