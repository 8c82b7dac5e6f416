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

#include "jobjail/inspector.hpp"
#include "jobjail/jail.hpp"
#include "jobjail/limits.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace jobjail {

struct Sample
{
    Millis t{0};
    // Sum of thread counts over all members (NoT).
    int not_total = 0;
    // Last CPU of the job root; -1 once the root is gone.
    int main_cpu_id = -1;
    // 100 per fully busy core.
    double cpu_percent = 0.0;
    std::uint64_t rss_total_bytes = 0;
    int process_count = 0;
    int zombie_count = 0;
    std::optional<double> accel_util;
    // Set when some process vanished while the snapshot was read.
    bool degraded = false;

    bool operator==(const Sample&) const = default;
};

using Series = std::vector<Sample>;

/// Utilization source for an accelerator. Only a scripted mock ships.
class AccelSampler
{
public:
    virtual ~AccelSampler() = default;
    virtual std::optional<double> sample() = 0;
};

/// Replays `tick;util` lines, one per sample() call; repeats the last value.
class MockAccelSampler final : public AccelSampler
{
public:
    explicit MockAccelSampler(std::vector<double> script) : script_(std::move(script)) {}

    static MockAccelSampler parse(std::string_view text);
    static MockAccelSampler load(const std::filesystem::path& path);

    std::optional<double> sample() override;

private:
    std::vector<double> script_;
    std::size_t next_ = 0;
};

/// CPU-time bookkeeping carried between consecutive samples.
struct SamplerState
{
    std::optional<Clock::time_point> origin;
    std::optional<Clock::time_point> last_taken;
    std::map<std::pair<pid_t, std::uint64_t>, double> cpu_time;
};

// Builds one sample from a members() snapshot. The first sample of a state
// reports cpu_percent = 0.
Sample sample_members(const ProcessTable& members, const JailHandle& handle, SamplerState& state,
                      AccelSampler* accel = nullptr);

Sample sample(ProcessInspector& inspector, const JailHandle& handle, SamplerState& state,
              AccelSampler* accel = nullptr);

struct Report
{
    Millis runtime{0};
    int not_min = 0;
    int not_max = 0;
    int not_mode = 0;
    double cpu_percent_mean = 0.0;
    double cpu_percent_stdev = 0.0;
    std::uint64_t peak_rss_bytes = 0;
    int main_cpu_distinct = 0;
    // Samples spent on each CPU by the job root.
    std::map<int, int> main_cpu_dwell;
    std::vector<EnforcementEvent> enforcement_events;
    int escapee_count = 0;
    int degraded_samples = 0;
    std::optional<double> accel_util_mean;
    std::vector<std::string> notes;
};

// Throws EmptySeries on an empty series. Ties in the NoT mode go to the value
// seen first.
Report summarize(const Series& series, const std::vector<EnforcementEvent>& events);

struct SeriesMeta
{
    std::string jail_id;
    std::string backend;
    std::string cpuset;
    nlohmann::ordered_json limits = nlohmann::ordered_json::object();

    bool operator==(const SeriesMeta&) const = default;
};

enum class ExportFormat { Json, Csv };

ExportFormat parse_export_format(std::string_view text);

inline constexpr const char* kCsvHeader =
    "t_ms,not_total,main_cpu_id,cpu_percent,rss_bytes,process_count,zombie_count,accel_util";

std::string to_csv(const Series& series);
nlohmann::ordered_json to_json(const SeriesMeta& meta, const Series& series, const Report& report);
nlohmann::ordered_json to_json(const Report& report);

// Writes the series (CSV) or the whole document (JSON). Throws Io.
void export_series(const SeriesMeta& meta, const Series& series, const Report& report, ExportFormat format,
                   const std::filesystem::path& path);

Series parse_csv(std::string_view text);
Series import_csv(const std::filesystem::path& path);

struct ImportedDocument
{
    SeriesMeta meta;
    Series series;
    nlohmann::ordered_json report;
};

ImportedDocument parse_json_document(std::string_view text);
ImportedDocument import_json(const std::filesystem::path& path);

// Values are stored with two decimals.
double round2(double v);

} // namespace jobjail
