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

#include "jobjail/telemetry.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace jobjail {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

double round2(double v)
{
    return std::round(v * 100.0) / 100.0;
}

namespace {

std::string read_all(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_all(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
    out << text;
    out.flush();
    if (!out)
        throw Error(ErrorKind::Io, fmt::format("write to {} failed", path.string()));
}

std::vector<std::string_view> split(std::string_view text, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true)
    {
        auto pos = text.find(sep, start);
        out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_field(std::string_view text, int line)
{
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw Error(ErrorKind::InvalidArgument, fmt::format("csv line {}: bad field '{}'", line, text));
    return value;
}

ordered_json event_json(const EnforcementEvent& e)
{
    ordered_json j;
    j["backend"] = to_string(e.backend);
    j["action"] = to_string(e.action);
    j["observed_bytes"] = e.observed_bytes;
    j["limit_bytes"] = e.limit_bytes;
    j["affected_pids"] = e.affected_pids;
    j["note"] = e.note;
    return j;
}

} // namespace

MockAccelSampler MockAccelSampler::parse(std::string_view text)
{
    std::map<int, double> by_tick;
    int line_no = 0;
    for (auto raw : split(text, '\n'))
    {
        ++line_no;
        std::string line(raw);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty() || line.front() == '#')
            continue;
        auto semi = line.find(';');
        if (semi == std::string::npos)
            throw Error(ErrorKind::InvalidArgument, fmt::format("accelerator script line {}: missing ';'", line_no));
        try
        {
            by_tick[std::stoi(line.substr(0, semi))] = std::stod(line.substr(semi + 1));
        }
        catch (const std::exception&)
        {
            throw Error(ErrorKind::InvalidArgument, fmt::format("accelerator script line {}: bad number", line_no));
        }
    }
    std::vector<double> script;
    double last = 0.0;
    int max_tick = by_tick.empty() ? -1 : by_tick.rbegin()->first;
    for (int t = 0; t <= max_tick; ++t)
    {
        if (auto it = by_tick.find(t); it != by_tick.end())
            last = it->second;
        script.push_back(last);
    }
    return MockAccelSampler(std::move(script));
}

MockAccelSampler MockAccelSampler::load(const fs::path& path)
{
    return parse(read_all(path));
}

std::optional<double> MockAccelSampler::sample()
{
    if (script_.empty())
        return std::nullopt;
    double v = script_[std::min(next_, script_.size() - 1)];
    ++next_;
    return v;
}

Sample sample_members(const ProcessTable& members, const JailHandle& handle, SamplerState& state,
                      AccelSampler* accel)
{
    Sample s;
    auto taken = members.taken_at();
    if (!state.origin)
        state.origin = taken;
    s.t = std::chrono::duration_cast<Millis>(taken - *state.origin);
    s.degraded = !members.complete();

    double cpu_delta = 0.0;
    std::map<std::pair<pid_t, std::uint64_t>, double> cpu_now;
    for (const auto& r : members.records())
    {
        ++s.process_count;
        if (r.is_zombie())
            ++s.zombie_count;
        else
            s.rss_total_bytes += r.rss_bytes;
        s.not_total += std::max(r.thread_count, 0);
        if (r.pid == handle.root_pid && !r.is_zombie())
            s.main_cpu_id = r.cpu_id;

        auto key = std::make_pair(r.pid, r.start_time);
        cpu_now[key] = r.cpu_time;
        auto prev = state.cpu_time.find(key);
        double before = prev != state.cpu_time.end() ? prev->second : 0.0;
        cpu_delta += std::max(0.0, r.cpu_time - before);
    }

    if (state.last_taken)
    {
        double wall = std::chrono::duration<double>(taken - *state.last_taken).count();
        s.cpu_percent = wall > 0.0 ? 100.0 * cpu_delta / wall : 0.0;
    }
    state.last_taken = taken;
    state.cpu_time = std::move(cpu_now);

    if (accel)
        s.accel_util = accel->sample();
    return s;
}

Sample sample(ProcessInspector& inspector, const JailHandle& handle, SamplerState& state, AccelSampler* accel)
{
    return sample_members(members(inspector, handle), handle, state, accel);
}

Report summarize(const Series& series, const std::vector<EnforcementEvent>& events)
{
    if (series.empty())
        throw Error(ErrorKind::EmptySeries, "cannot summarize an empty series");

    Report r;
    r.runtime = series.back().t;
    r.enforcement_events = events;

    std::vector<std::pair<int, int>> not_counts; // value, count; in first-seen order
    double cpu_sum = 0.0;
    double accel_sum = 0.0;
    int accel_n = 0;
    r.not_min = r.not_max = series.front().not_total;
    for (const auto& s : series)
    {
        r.not_min = std::min(r.not_min, s.not_total);
        r.not_max = std::max(r.not_max, s.not_total);
        auto it = std::find_if(not_counts.begin(), not_counts.end(),
                               [&](const auto& vc) { return vc.first == s.not_total; });
        if (it == not_counts.end())
            not_counts.emplace_back(s.not_total, 1);
        else
            ++it->second;

        cpu_sum += s.cpu_percent;
        r.peak_rss_bytes = std::max(r.peak_rss_bytes, s.rss_total_bytes);
        if (s.main_cpu_id >= 0)
            ++r.main_cpu_dwell[s.main_cpu_id];
        if (s.degraded)
            ++r.degraded_samples;
        if (s.accel_util)
        {
            accel_sum += *s.accel_util;
            ++accel_n;
        }
    }
    auto best = not_counts.begin();
    for (auto it = not_counts.begin(); it != not_counts.end(); ++it)
        if (it->second > best->second)
            best = it;
    r.not_mode = best->first;

    auto n = static_cast<double>(series.size());
    r.cpu_percent_mean = cpu_sum / n;
    double var = 0.0;
    for (const auto& s : series)
        var += (s.cpu_percent - r.cpu_percent_mean) * (s.cpu_percent - r.cpu_percent_mean);
    r.cpu_percent_stdev = std::sqrt(var / n);
    r.main_cpu_distinct = static_cast<int>(r.main_cpu_dwell.size());
    if (accel_n > 0)
        r.accel_util_mean = accel_sum / accel_n;
    return r;
}

ExportFormat parse_export_format(std::string_view text)
{
    if (text == "json")
        return ExportFormat::Json;
    if (text == "csv")
        return ExportFormat::Csv;
    throw Error(ErrorKind::Usage, fmt::format("unknown report format '{}'", text));
}

std::string to_csv(const Series& series)
{
    std::string out = kCsvHeader;
    out += '\n';
    for (const auto& s : series)
    {
        out += fmt::format("{},{},{},{:.2f},{},{},{},", s.t.count(), s.not_total, s.main_cpu_id, s.cpu_percent,
                           s.rss_total_bytes, s.process_count, s.zombie_count);
        if (s.accel_util)
            out += fmt::format("{:.2f}", *s.accel_util);
        out += '\n';
    }
    return out;
}

ordered_json to_json(const Report& r)
{
    ordered_json j;
    j["runtime_ms"] = r.runtime.count();
    j["not"] = {{"min", r.not_min}, {"max", r.not_max}, {"mode", r.not_mode}};
    j["cpu_percent"] = {{"mean", round2(r.cpu_percent_mean)}, {"stdev", round2(r.cpu_percent_stdev)}};
    j["peak_rss_bytes"] = r.peak_rss_bytes;
    ordered_json dwell = ordered_json::object();
    for (const auto& [cpu, n] : r.main_cpu_dwell)
        dwell[std::to_string(cpu)] = n;
    j["main_cpu_id"] = {{"distinct", r.main_cpu_distinct}, {"dwell_samples", dwell}};
    ordered_json events = ordered_json::array();
    for (const auto& e : r.enforcement_events)
        events.push_back(event_json(e));
    j["enforcement_events"] = events;
    j["escapee_count"] = r.escapee_count;
    j["degraded_samples"] = r.degraded_samples;
    j["accel_util_mean"] = r.accel_util_mean ? ordered_json(round2(*r.accel_util_mean)) : ordered_json(nullptr);
    j["notes"] = r.notes;
    return j;
}

ordered_json to_json(const SeriesMeta& meta, const Series& series, const Report& report)
{
    ordered_json doc;
    doc["meta"] = {{"jail_id", meta.jail_id}, {"backend", meta.backend}, {"cpuset", meta.cpuset},
                   {"limits", meta.limits}};
    ordered_json samples = ordered_json::array();
    for (const auto& s : series)
    {
        ordered_json j;
        j["t_ms"] = s.t.count();
        j["not_total"] = s.not_total;
        j["main_cpu_id"] = s.main_cpu_id;
        j["cpu_percent"] = round2(s.cpu_percent);
        j["rss_bytes"] = s.rss_total_bytes;
        j["process_count"] = s.process_count;
        j["zombie_count"] = s.zombie_count;
        j["accel_util"] = s.accel_util ? ordered_json(round2(*s.accel_util)) : ordered_json(nullptr);
        j["degraded"] = s.degraded;
        samples.push_back(std::move(j));
    }
    doc["samples"] = std::move(samples);
    doc["report"] = to_json(report);
    return doc;
}

void export_series(const SeriesMeta& meta, const Series& series, const Report& report, ExportFormat format,
                   const fs::path& path)
{
    if (format == ExportFormat::Csv)
        write_all(path, to_csv(series));
    else
        write_all(path, to_json(meta, series, report).dump(2) + "\n");
}

Series parse_csv(std::string_view text)
{
    Series series;
    auto lines = split(text, '\n');
    if (lines.empty() || lines.front() != kCsvHeader)
        throw Error(ErrorKind::InvalidArgument, "csv header does not match");
    for (std::size_t i = 1; i < lines.size(); ++i)
    {
        auto line = lines[i];
        if (line.empty())
            continue;
        auto f = split(line, ',');
        int ln = static_cast<int>(i + 1);
        if (f.size() != 8)
            throw Error(ErrorKind::InvalidArgument, fmt::format("csv line {}: expected 8 fields", ln));
        Sample s;
        s.t = Millis(parse_field<long long>(f[0], ln));
        s.not_total = parse_field<int>(f[1], ln);
        s.main_cpu_id = parse_field<int>(f[2], ln);
        s.cpu_percent = parse_field<double>(f[3], ln);
        s.rss_total_bytes = parse_field<std::uint64_t>(f[4], ln);
        s.process_count = parse_field<int>(f[5], ln);
        s.zombie_count = parse_field<int>(f[6], ln);
        if (!f[7].empty())
            s.accel_util = parse_field<double>(f[7], ln);
        series.push_back(s);
    }
    return series;
}

Series import_csv(const fs::path& path)
{
    return parse_csv(read_all(path));
}

ImportedDocument parse_json_document(std::string_view text)
{
    ImportedDocument doc;
    try
    {
        auto j = ordered_json::parse(text);
        const auto& m = j.at("meta");
        doc.meta.jail_id = m.at("jail_id").get<std::string>();
        doc.meta.backend = m.at("backend").get<std::string>();
        doc.meta.cpuset = m.at("cpuset").get<std::string>();
        doc.meta.limits = m.at("limits");
        for (const auto& js : j.at("samples"))
        {
            Sample s;
            s.t = Millis(js.at("t_ms").get<long long>());
            s.not_total = js.at("not_total").get<int>();
            s.main_cpu_id = js.at("main_cpu_id").get<int>();
            s.cpu_percent = js.at("cpu_percent").get<double>();
            s.rss_total_bytes = js.at("rss_bytes").get<std::uint64_t>();
            s.process_count = js.at("process_count").get<int>();
            s.zombie_count = js.at("zombie_count").get<int>();
            if (!js.at("accel_util").is_null())
                s.accel_util = js.at("accel_util").get<double>();
            s.degraded = js.value("degraded", false);
            doc.series.push_back(s);
        }
        doc.report = j.at("report");
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(ErrorKind::InvalidArgument, fmt::format("bad telemetry document: {}", e.what()));
    }
    return doc;
}

ImportedDocument import_json(const fs::path& path)
{
    return parse_json_document(read_all(path));
}

} // namespace jobjail
