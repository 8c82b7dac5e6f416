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

#include "jobjail/process.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace jobjail {

/// Source of process-table snapshots. Implementations are called from a
/// single task at a time.
class ProcessInspector
{
public:
    virtual ~ProcessInspector() = default;

    virtual ProcessTable read_table() = 0;
    virtual int host_cpu_count() const = 0;
};

/// Reads the live host process table from procfs.
class ProcfsInspector final : public ProcessInspector
{
public:
    explicit ProcfsInspector(std::filesystem::path proc_root = "/proc");

    ProcessTable read_table() override;
    int host_cpu_count() const override;

    // Reads one process; nullopt when it vanished.
    std::optional<ProcessRecord> read_process(pid_t pid) const;

private:
    std::filesystem::path proc_root_;
    double ticks_per_second_;
    std::uint64_t page_size_;
};

// Parses the body of /proc/<pid>/stat. Exposed for testing.
std::optional<ProcessRecord> parse_proc_stat(std::string_view line, double ticks_per_second, std::uint64_t page_size);

/// Plays back a scripted scenario, one tick per read_table() call.
///
/// Scenario lines have the form
///
///     tick;pid,ppid,pgid,state,threads,cpu_id,cpu_time_ms,rss
///
/// with '#' comments and blank lines ignored. Ticks without records yield an
/// empty table. Once the script is exhausted the last tick repeats.
class ScenarioInspector final : public ProcessInspector
{
public:
    ScenarioInspector(std::map<int, std::vector<ProcessRecord>> ticks, int cpu_count, Millis tick_length);

    static ScenarioInspector parse(std::string_view text, int cpu_count = 64, Millis tick_length = Millis(500));
    static ScenarioInspector load(const std::filesystem::path& path, int cpu_count = 64,
                                  Millis tick_length = Millis(500));

    ProcessTable read_table() override;
    int host_cpu_count() const override { return cpu_count_; }

    int tick_count() const noexcept { return last_tick_ + 1; }
    int next_tick() const noexcept { return next_; }
    bool exhausted() const noexcept { return next_ > last_tick_; }

    // The records scripted for a tick, in file order.
    const std::vector<ProcessRecord>& scripted(int tick) const;

private:
    std::map<int, std::vector<ProcessRecord>> ticks_;
    int cpu_count_;
    Millis tick_length_;
    int last_tick_ = -1;
    int next_ = 0;
    Clock::time_point epoch_;
};

} // namespace jobjail
