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

#include "jobjail/process.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace jobjail {

const char* to_string(ProcState state) noexcept
{
    switch (state)
    {
        case ProcState::Running: return "running";
        case ProcState::Sleeping: return "sleeping";
        case ProcState::Zombie: return "zombie";
        case ProcState::Stopped: return "stopped";
    }
    return "running";
}

ProcState parse_proc_state(std::string_view text)
{
    if (text == "R" || text == "running")
        return ProcState::Running;
    if (text == "S" || text == "D" || text == "I" || text == "W" || text == "P" || text == "sleeping")
        return ProcState::Sleeping;
    if (text == "Z" || text == "X" || text == "x" || text == "zombie")
        return ProcState::Zombie;
    if (text == "T" || text == "t" || text == "stopped")
        return ProcState::Stopped;
    throw Error(ErrorKind::InvalidArgument, fmt::format("unknown process state '{}'", text));
}

ProcessTable::ProcessTable(Clock::time_point taken_at, std::vector<ProcessRecord> records, bool complete)
    : taken_at_(taken_at), records_(std::move(records)), complete_(complete)
{
    std::sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) { return a.pid < b.pid; });
    for (std::size_t i = 0; i < records_.size(); ++i)
    {
        const auto& r = records_[i];
        if (i > 0 && records_[i - 1].pid == r.pid)
            throw Error(ErrorKind::InvalidArgument, fmt::format("duplicate pid {} in process table", r.pid));
        if (r.thread_count < 1 && !r.is_zombie())
            throw Error(ErrorKind::InvalidArgument, fmt::format("pid {} has no threads but is not a zombie", r.pid));
    }
}

const ProcessRecord* ProcessTable::find(pid_t pid) const noexcept
{
    auto it = std::lower_bound(records_.begin(), records_.end(), pid, [](const auto& r, pid_t p) { return r.pid < p; });
    return it != records_.end() && it->pid == pid ? &*it : nullptr;
}

ProcessTable ProcessTable::filter(const std::function<bool(const ProcessRecord&)>& keep) const
{
    std::vector<ProcessRecord> kept;
    std::copy_if(records_.begin(), records_.end(), std::back_inserter(kept), keep);
    return ProcessTable(taken_at_, std::move(kept), complete_);
}

bool ProcessTable::parent_closed() const
{
    return std::all_of(records_.begin(), records_.end(),
                       [this](const auto& r) { return r.ppid == 0 || r.ppid == 1 || contains(r.ppid); });
}

std::vector<pid_t> ProcessTable::pids() const
{
    std::vector<pid_t> out;
    out.reserve(records_.size());
    for (const auto& r : records_)
        out.push_back(r.pid);
    return out;
}

} // namespace jobjail
