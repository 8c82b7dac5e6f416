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

#include "jobjail/units.hpp"

#include <sys/types.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace jobjail {

enum class ProcState { Running, Sleeping, Zombie, Stopped };

const char* to_string(ProcState state) noexcept;

// Accepts the single-letter procfs codes (R, S, D, I, Z, X, T, t) and the
// long names used by to_string().
ProcState parse_proc_state(std::string_view text);

struct ProcessRecord
{
    pid_t pid = 0;
    pid_t ppid = 0;
    pid_t pgid = 0;
    uid_t owner_uid = 0;
    ProcState state = ProcState::Running;
    int thread_count = 1;
    int cpu_id = 0;
    double cpu_time = 0.0; // seconds, user + system
    std::uint64_t rss_bytes = 0;
    std::uint64_t start_time = 0; // clock ticks since boot
    std::string comm;
    // Inode of the pid namespace the process lives in, when known.
    std::optional<std::uint64_t> pid_ns;

    bool is_zombie() const noexcept { return state == ProcState::Zombie; }

    // A pid is recycled when the start time differs.
    bool same_process(const ProcessRecord& other) const noexcept
    {
        return pid == other.pid && start_time == other.start_time;
    }

    bool operator==(const ProcessRecord&) const = default;
};

// Immutable snapshot of (part of) the process table, sorted by pid.
class ProcessTable
{
public:
    ProcessTable() = default;

    // Throws InvalidArgument on duplicate pids or a record violating the
    // thread-count invariant.
    ProcessTable(Clock::time_point taken_at, std::vector<ProcessRecord> records, bool complete = true);

    Clock::time_point taken_at() const noexcept { return taken_at_; }
    const std::vector<ProcessRecord>& records() const noexcept { return records_; }
    // False when some process vanished or could not be read mid-scan.
    bool complete() const noexcept { return complete_; }

    bool empty() const noexcept { return records_.empty(); }
    std::size_t size() const noexcept { return records_.size(); }

    const ProcessRecord* find(pid_t pid) const noexcept;
    bool contains(pid_t pid) const noexcept { return find(pid) != nullptr; }

    ProcessTable filter(const std::function<bool(const ProcessRecord&)>& keep) const;

    // Every ppid is a pid in the table, 1, or 0. Holds for whole-host scans.
    bool parent_closed() const;

    std::vector<pid_t> pids() const;

private:
    Clock::time_point taken_at_{};
    std::vector<ProcessRecord> records_;
    bool complete_ = true;
};

} // namespace jobjail
