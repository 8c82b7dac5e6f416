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

#include "jobjail/envctl.hpp"
#include "jobjail/inspector.hpp"
#include "jobjail/process.hpp"
#include "jobjail/units.hpp"

#include <sys/resource.h>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jobjail {

enum class IsolationBackend { ProcessGroup, Subreaper, PidNamespace };

const char* to_string(IsolationBackend backend) noexcept;
// Accepts the CLI short names (pg, subreaper, pidns) and to_string() output.
IsolationBackend parse_backend(std::string_view text);

/// Identity of a containment domain. Immutable once the job is spawned.
struct JailHandle
{
    std::string jail_id;
    IsolationBackend backend = IsolationBackend::ProcessGroup;
    // First job process, as seen from the supervisor's pid namespace.
    pid_t root_pid = 0;
    pid_t pgid = 0;
    // pid-namespace inode; set for the pid-namespace backend only.
    std::optional<std::uint64_t> ns_token;
    // Host pid of the namespace init that jobjail runs inside the namespace.
    pid_t init_pid = 0;
    pid_t supervisor_pid = 0;
    // Boot-relative clock ticks at creation; processes adopted by a subreaper
    // supervisor count as members only if they started after this.
    std::uint64_t created_ticks = 0;
    Clock::time_point created_at{};
};

/// Work done in the child between fork and exec, plus a parent-side attach
/// step that runs while the child is held before exec.
struct PreExecHooks
{
    std::optional<rlim_t> data_limit;
    std::optional<rlim_t> rss_limit;
    std::optional<CpuSet> cpus;
    std::vector<std::function<void(pid_t)>> attach;
};

enum class Signal { Term, Kill };

const char* to_string(Signal sig) noexcept;

struct TerminationStep
{
    // Negative values address a whole process group.
    pid_t pid = 0;
    Signal signal = Signal::Term;
    bool delivered = false;

    bool operator==(const TerminationStep&) const = default;
};

struct TerminationReport
{
    std::vector<TerminationStep> steps;
    bool escalated = false;
    std::vector<pid_t> survivors;
    Millis elapsed{0};
};

/// Historical membership, maintained from successive members() snapshots.
class MembershipTracker
{
public:
    struct Entry
    {
        std::uint64_t start_time = 0;
        pid_t first_ppid = 0;
        // True once the process was seen with a parent other than its reaper.
        bool seen_with_parent = false;
        std::string comm;
    };

    // reaper is the pid orphans are re-parented to (1, the subreaper, or the
    // namespace init).
    void observe(const ProcessTable& members, pid_t reaper = 1);

    const Entry* find(const ProcessRecord& rec) const;
    bool tracked(const ProcessRecord& rec) const { return find(rec) != nullptr; }

    const std::map<pid_t, Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<pid_t, Entry> entries_;
};

enum class ProcessClass { Normal, Zombie, Orphan, DaemonLike };

const char* to_string(ProcessClass c) noexcept;

ProcessClass classify(const ProcessRecord& record, const ProcessTable& table, const MembershipTracker& history,
                      pid_t reaper = 1);

// Backend-native membership over a whole-host snapshot. Never follows ppid
// chains for the process-group and pid-namespace backends; the subreaper
// backend follows lineage anchored at the supervisor, which stays intact
// because orphans are re-parented to it.
ProcessTable members_of(const ProcessTable& host, const JailHandle& handle);
ProcessTable members(ProcessInspector& inspector, const JailHandle& handle);

// Tracked processes that are alive (same start time) but no longer members,
// plus their live descendants.
std::vector<ProcessRecord> detect_escapees(const ProcessTable& host, const JailHandle& handle,
                                           const MembershipTracker& tracked);

// Whether the host lets us create jails of this kind.
bool backend_supported(IsolationBackend backend);

// Strongest available: pid-namespace, then subreaper, then process group.
IsolationBackend default_backend();

/// Owns a containment domain and the job launched inside it.
class Jail
{
public:
    // Throws BackendUnsupported if the host cannot provide the backend.
    static Jail create(IsolationBackend backend);

    Jail(Jail&&) noexcept;
    Jail& operator=(Jail&&) noexcept;
    ~Jail();

    // Launches the job. The child environment is the supervisor's own
    // environment with env_overlay applied on top. Throws Spawn (carrying the
    // OS error text) when exec fails; the jail stays terminable.
    pid_t spawn(const std::vector<std::string>& command, const EnvMap& env_overlay, const PreExecHooks& hooks = {},
                const std::filesystem::path& workdir = {});

    const JailHandle& handle() const;
    bool spawned() const;

    // Wait status of the job root once it has exited.
    std::optional<int> poll_job_status();

    // Reaps exited jail processes parented by the supervisor.
    void reap();

    // TERM to every member, KILL after grace to what remains, then a 500 ms
    // settle window before listing survivors. extra adds processes (escapees)
    // to the target set. Serialized; safe to call from any thread.
    TerminationReport terminate(ProcessInspector& inspector, Millis grace,
                                std::span<const ProcessRecord> extra = {});

    static constexpr Millis settle_window{500};

private:
    struct State;
    explicit Jail(std::unique_ptr<State> state);

    std::unique_ptr<State> state_;
};

// Wait-status helpers.
int exit_code_of(int wait_status);
std::string describe_wait_status(int wait_status);

// Current boot-relative time in clock ticks, comparable with start_time.
std::uint64_t boot_ticks_now();

} // namespace jobjail
