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

#pragma once

#include "jobjail/cgroup.hpp"
#include "jobjail/envctl.hpp"
#include "jobjail/jail.hpp"
#include "jobjail/process.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace jobjail {

enum class MemoryBackend { GroupController, DataSegment, Polling, ResidentSetLegacy };

const char* to_string(MemoryBackend backend) noexcept;
// CLI names (cgroup, rlimit-data, poll, rlimit-rss) or to_string() output.
MemoryBackend parse_memory_backend(std::string_view text);

enum class EnforcementAction { None, BlockedAtSource, KilledJail, FlaggedIneffective };

const char* to_string(EnforcementAction action) noexcept;

struct EnforcementEvent
{
    Clock::time_point at{};
    MemoryBackend backend = MemoryBackend::Polling;
    // Hierarchy RSS total for polling; charged peak for the group controller.
    std::uint64_t observed_bytes = 0;
    std::uint64_t limit_bytes = 0;
    EnforcementAction action = EnforcementAction::None;
    std::vector<pid_t> affected_pids;
    std::string note;
};

struct LimitPolicy
{
    std::optional<std::uint64_t> mem_limit_bytes;
    MemoryBackend mem_backend = MemoryBackend::GroupController;
    // Used when the group controller is unavailable; nullopt means fail.
    std::optional<MemoryBackend> mem_fallback = MemoryBackend::Polling;
    Millis poll_interval{1000};
    std::optional<CpuSet> cpuset;
    ThreadLimitSpec thread_env;

    // Throws InvalidArgument when an invariant is violated.
    void validate(int host_cpus) const;
};

struct PollDecision
{
    bool exceeded = false;
    std::uint64_t observed_bytes = 0;
    std::vector<pid_t> pids;
};

// Sums RSS over every non-zombie record of a members() snapshot, whatever the
// tree depth. On exceeded, pids lists the whole jail: the caller terminates
// the jail rather than picking processes.
PollDecision poll_enforce(const ProcessTable& members, std::uint64_t limit_bytes);

// Validates the cpuset against the host and installs it as a pre-exec hook
// so every descendant inherits the mask.
void apply_cpu_affinity(PreExecHooks& hooks, const CpuSet& cpus, int host_cpus);

/// Enforcement state of one memory backend for one jail.
class MemoryEnforcer
{
public:
    // Installs the backend before spawn: rlimit hooks, or a control group node
    // that the job root is attached to before exec. Throws BackendUnsupported
    // when the group controller is unavailable.
    static MemoryEnforcer apply(const JailHandle& handle, const LimitPolicy& policy, PreExecHooks& hooks);

    MemoryEnforcer(MemoryEnforcer&&) noexcept = default;
    MemoryEnforcer& operator=(MemoryEnforcer&&) noexcept = default;

    MemoryBackend backend() const noexcept { return backend_; }
    std::uint64_t limit_bytes() const noexcept { return limit_; }
    const std::optional<CgroupNode>& cgroup() const noexcept { return cgroup_; }

    // One watchdog tick over a members() snapshot. Returns an event when the
    // jail must be terminated.
    std::optional<EnforcementEvent> check(const ProcessTable& members);

    // Final verdict once the job has ended.
    EnforcementEvent finish(int job_wait_status);

    // Largest hierarchy RSS total seen by check().
    std::uint64_t peak_observed() const noexcept { return peak_observed_; }

    // Events raised so far (flagged-ineffective is raised at apply time).
    const std::vector<EnforcementEvent>& events() const noexcept { return events_; }

    // Removes the control group node, if any. Returns false if it lingers.
    bool cleanup(Millis timeout = Millis(2000));

private:
    MemoryEnforcer(MemoryBackend backend, std::uint64_t limit) : backend_(backend), limit_(limit) {}

    EnforcementEvent make_event(EnforcementAction action, std::uint64_t observed) const;

    MemoryBackend backend_;
    std::uint64_t limit_;
    std::optional<CgroupNode> cgroup_;
    std::uint64_t peak_observed_ = 0;
    std::uint64_t oom_seen_ = 0;
    bool killed_ = false;
    std::vector<EnforcementEvent> events_;
};

} // namespace jobjail
