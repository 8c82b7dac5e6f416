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
#include "jobjail/jail.hpp"
#include "jobjail/limits.hpp"
#include "jobjail/telemetry.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace jobjail {

namespace exit_codes {
inline constexpr int ok = 0;
inline constexpr int usage = 64;
inline constexpr int unsupported = 69;
inline constexpr int containment_failure = 70;
inline constexpr int internal = 71;
inline constexpr int report_io = 74;
// The command could not be executed at all.
inline constexpr int spawn_failure = 127;
} // namespace exit_codes

struct TelemetryConfig
{
    Millis sample_interval{500};
    ExportFormat format = ExportFormat::Json;
    // Replays a `tick;util` script as accelerator utilization.
    std::optional<std::filesystem::path> accel_script;
};

enum class EscapePolicy { Report, Kill };

struct JobSpec
{
    std::vector<std::string> command;
    std::filesystem::path workdir;
    EnvMap env_overlay;
    IsolationBackend backend = IsolationBackend::ProcessGroup;
    LimitPolicy limits;
    Millis grace{30000};
    TelemetryConfig telemetry;
    std::optional<std::filesystem::path> report_path;
    EscapePolicy escapees = EscapePolicy::Kill;

    // Throws Usage or InvalidArgument.
    void validate(int host_cpus) const;
};

struct RunOutcome
{
    JailHandle handle;
    // Raw wait status of the job root, and its shell-style exit code.
    int job_status = 0;
    int job_exit = 0;
    TerminationReport termination;
    std::vector<EnforcementEvent> enforcement_events;
    std::vector<ProcessRecord> escapees;
    Series series;
    Report report;
    MemoryBackend memory_backend = MemoryBackend::Polling;
    bool contained = true;
    std::optional<std::string> report_error;
    int exit_code = 0;
};

struct RunOptions
{
    // Set from outside (or by SIGINT/SIGTERM/SIGHUP) to stop the job early.
    std::atomic<bool>* cancel = nullptr;
    bool install_signal_handlers = false;
    // Called on the control loop once the job is running.
    std::function<void(const JailHandle&)> on_spawn;
};

// Total mapping from (job status, containment, report) to a process exit code.
int exit_code_for(int job_status, bool contained, bool report_ok);

// Launches the job inside a jail, samples it until the root exits, then
// terminates whatever is left. Throws BackendUnsupported before spawning,
// and Spawn if exec fails (the jail is torn down first).
RunOutcome run(const JobSpec& spec, const RunOptions& options = {});

} // namespace jobjail
