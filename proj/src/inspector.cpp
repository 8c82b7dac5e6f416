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

#include "jobjail/inspector.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <sys/stat.h>
#include <unistd.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace jobjail {

namespace fs = std::filesystem;

namespace {

template <typename T>
bool parse_number(std::string_view text, T& out)
{
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size();
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

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

} // namespace

std::optional<ProcessRecord> parse_proc_stat(std::string_view line, double ticks_per_second, std::uint64_t page_size)
{
    // comm may contain spaces and parentheses; it ends at the last ')'.
    auto open = line.find('(');
    auto close = line.rfind(')');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        return std::nullopt;

    ProcessRecord r;
    if (!parse_number(trim(line.substr(0, open)), r.pid))
        return std::nullopt;
    r.comm = std::string(line.substr(open + 1, close - open - 1));

    // Fields after comm, numbered from 3 (state) as in proc(5).
    std::vector<std::string_view> fields;
    std::string_view rest = line.substr(close + 1);
    std::size_t i = 0;
    while (i < rest.size())
    {
        while (i < rest.size() && (rest[i] == ' ' || rest[i] == '\n'))
            ++i;
        std::size_t j = i;
        while (j < rest.size() && rest[j] != ' ' && rest[j] != '\n')
            ++j;
        if (j > i)
            fields.push_back(rest.substr(i, j - i));
        i = j;
    }
    auto field = [&](int n) -> std::string_view { return fields[static_cast<std::size_t>(n - 3)]; };
    if (fields.size() < 37)
        return std::nullopt;

    unsigned long long utime = 0;
    unsigned long long stime = 0;
    long long rss_pages = 0;
    bool ok = parse_number(field(4), r.ppid) && parse_number(field(5), r.pgid) && parse_number(field(14), utime) &&
              parse_number(field(15), stime) && parse_number(field(20), r.thread_count) &&
              parse_number(field(22), r.start_time) && parse_number(field(24), rss_pages) &&
              parse_number(field(39), r.cpu_id);
    if (!ok)
        return std::nullopt;
    try
    {
        r.state = parse_proc_state(field(3));
    }
    catch (const Error&)
    {
        return std::nullopt;
    }
    r.cpu_time = static_cast<double>(utime + stime) / ticks_per_second;
    r.rss_bytes = rss_pages > 0 ? static_cast<std::uint64_t>(rss_pages) * page_size : 0;
    return r;
}

ProcfsInspector::ProcfsInspector(fs::path proc_root)
    : proc_root_(std::move(proc_root)),
      ticks_per_second_(static_cast<double>(::sysconf(_SC_CLK_TCK))),
      page_size_(static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE)))
{
}

int ProcfsInspector::host_cpu_count() const
{
    return jobjail::host_cpu_count();
}

std::optional<ProcessRecord> ProcfsInspector::read_process(pid_t pid) const
{
    fs::path dir = proc_root_ / std::to_string(pid);
    std::ifstream in(dir / "stat");
    std::string line;
    if (!in || !std::getline(in, line))
        return std::nullopt;
    auto rec = parse_proc_stat(line, ticks_per_second_, page_size_);
    if (!rec)
        return std::nullopt;

    struct stat st{};
    if (::stat(dir.c_str(), &st) != 0)
        return std::nullopt;
    rec->owner_uid = st.st_uid;

    char buf[64];
    auto ns_link = dir / "ns" / "pid";
    ssize_t n = ::readlink(ns_link.c_str(), buf, sizeof(buf) - 1);
    if (n > 0)
    {
        std::string_view link(buf, static_cast<std::size_t>(n));
        auto lb = link.find('[');
        auto rb = link.find(']');
        std::uint64_t inode = 0;
        if (lb != std::string_view::npos && rb != std::string_view::npos && rb > lb &&
            parse_number(link.substr(lb + 1, rb - lb - 1), inode))
        {
            rec->pid_ns = inode;
        }
    }
    return rec;
}

ProcessTable ProcfsInspector::read_table()
{
    auto taken_at = Clock::now();
    std::vector<ProcessRecord> records;
    bool complete = true;

    std::error_code ec;
    fs::directory_iterator it(proc_root_, ec);
    if (ec)
        throw Error(ErrorKind::PartialSnapshot, fmt::format("cannot list {}: {}", proc_root_.string(), ec.message()));
    for (const auto& entry : it)
    {
        pid_t pid = 0;
        if (!parse_number(entry.path().filename().string(), pid))
            continue;
        if (auto rec = read_process(pid))
            records.push_back(std::move(*rec));
        else
            complete = false;
    }
    return ProcessTable(taken_at, std::move(records), complete);
}

ScenarioInspector::ScenarioInspector(std::map<int, std::vector<ProcessRecord>> ticks, int cpu_count,
                                     Millis tick_length)
    : ticks_(std::move(ticks)), cpu_count_(cpu_count), tick_length_(tick_length), epoch_(Clock::now())
{
    if (!ticks_.empty())
        last_tick_ = ticks_.rbegin()->first;
}

ScenarioInspector ScenarioInspector::parse(std::string_view text, int cpu_count, Millis tick_length)
{
    std::map<int, std::vector<ProcessRecord>> ticks;
    int line_no = 0;
    for (auto raw : split(text, '\n'))
    {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        auto bad = [&](const char* why) {
            return Error(ErrorKind::InvalidArgument, fmt::format("scenario line {}: {}", line_no, why));
        };
        auto semi = line.find(';');
        if (semi == std::string_view::npos)
            throw bad("missing ';'");
        int tick = 0;
        if (!parse_number(trim(line.substr(0, semi)), tick) || tick < 0)
            throw bad("bad tick");
        auto cols = split(line.substr(semi + 1), ',');
        if (cols.size() != 8)
            throw bad("expected 8 fields");
        ProcessRecord r;
        long long cpu_ms = 0;
        bool ok = parse_number(trim(cols[0]), r.pid) && parse_number(trim(cols[1]), r.ppid) &&
                  parse_number(trim(cols[2]), r.pgid) && parse_number(trim(cols[4]), r.thread_count) &&
                  parse_number(trim(cols[5]), r.cpu_id) && parse_number(trim(cols[6]), cpu_ms) &&
                  parse_number(trim(cols[7]), r.rss_bytes);
        if (!ok)
            throw bad("bad numeric field");
        r.state = parse_proc_state(trim(cols[3]));
        if (r.cpu_id < 0 || r.cpu_id >= cpu_count)
            throw bad("cpu_id outside host range");
        r.cpu_time = static_cast<double>(cpu_ms) / 1000.0;
        r.comm = "scenario";
        ticks[tick].push_back(std::move(r));
    }
    return ScenarioInspector(std::move(ticks), cpu_count, tick_length);
}

ScenarioInspector ScenarioInspector::load(const fs::path& path, int cpu_count, Millis tick_length)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::Io, fmt::format("cannot open scenario {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), cpu_count, tick_length);
}

const std::vector<ProcessRecord>& ScenarioInspector::scripted(int tick) const
{
    static const std::vector<ProcessRecord> none;
    auto it = ticks_.find(tick);
    return it == ticks_.end() ? none : it->second;
}

ProcessTable ScenarioInspector::read_table()
{
    int tick = std::min(next_, std::max(last_tick_, 0));
    if (next_ <= last_tick_)
        ++next_;
    return ProcessTable(epoch_ + tick_length_ * tick, scripted(tick));
}

} // namespace jobjail
