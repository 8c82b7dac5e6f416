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

#include "jobjail/pymem.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace jobjail::pymem {

namespace {

std::string read_all(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

template <typename F>
void for_each_line(std::string_view text, F&& f)
{
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        line = trim(line);
        if (!line.empty() && line.front() != '#')
            f(line, line_no);
        if (nl == std::string_view::npos)
            break;
        pos = nl + 1;
    }
}

bool parse_u64(std::string_view s, std::uint64_t& out)
{
    if (s.empty())
        return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

// Max segment tree over arena slots in creation order. A slot holds the free
// capacity of an open arena, or -1 when unused or released.
class FirstFit
{
public:
    explicit FirstFit(std::size_t slots)
    {
        while (size_ < std::max<std::size_t>(slots, 1))
            size_ *= 2;
        tree_.assign(2 * size_, -1);
    }

    void set(std::size_t slot, std::int64_t value)
    {
        std::size_t i = slot + size_;
        tree_[i] = value;
        for (i /= 2; i >= 1; i /= 2)
            tree_[i] = std::max(tree_[2 * i], tree_[2 * i + 1]);
    }

    std::int64_t get(std::size_t slot) const { return tree_[slot + size_]; }

    // Leftmost slot with capacity >= need.
    std::optional<std::size_t> find(std::int64_t need) const
    {
        if (tree_[1] < need)
            return std::nullopt;
        std::size_t i = 1;
        while (i < size_)
            i = tree_[2 * i] >= need ? 2 * i : 2 * i + 1;
        return i - size_;
    }

private:
    std::size_t size_ = 1;
    std::vector<std::int64_t> tree_;
};

struct Object
{
    std::uint64_t size = 0;
    long arena = -1;
    bool live = false;
    bool tracked = false;
    bool marked = false;
};

// Generational collector over object ids; `release` is called for each
// object the collector frees.
class Collector
{
public:
    Collector(const GcConfig& cfg, const std::vector<Object>& objects)
        : objects_(objects), thresholds_(cfg.thresholds), counters_(cfg.thresholds.size(), 0),
          members_(cfg.thresholds.size())
    {
        out_.rounds.assign(thresholds_.size(), 0);
    }

    template <typename Release>
    void on_alloc(std::size_t event, std::size_t id, Release&& release)
    {
        members_[0].push_back(id);
        ++counters_[0];
        for (int k = static_cast<int>(thresholds_.size()) - 1; k >= 0; --k)
        {
            if (counters_[k] > thresholds_[k])
            {
                collect(k, release);
                out_.schedule.push_back({event, k});
                ++out_.rounds[k];
                break;
            }
        }
    }

    GcOutcome finish() const
    {
        GcOutcome out = out_;
        for (const auto& m : members_)
            out.surviving_objects.push_back(m.size());
        return out;
    }

private:
    template <typename Release>
    void collect(int k, Release&& release)
    {
        auto last = static_cast<int>(thresholds_.size()) - 1;
        int dest = std::min(k + 1, last);
        std::vector<std::size_t> keep;
        std::vector<std::size_t> moved;
        for (auto id : members_[k])
        {
            if (objects_[id].marked)
                release(id);
            else if (dest == k)
                keep.push_back(id);
            else
                moved.push_back(id);
        }
        members_[k] = std::move(keep);
        if (dest != k)
        {
            counters_[dest] += moved.size();
            members_[dest].insert(members_[dest].end(), moved.begin(), moved.end());
        }
        counters_[k] = 0;
    }

    const std::vector<Object>& objects_;
    std::vector<std::uint64_t> thresholds_;
    std::vector<std::uint64_t> counters_;
    std::vector<std::vector<std::size_t>> members_;
    GcOutcome out_;
};

} // namespace

SizeTable SizeTable::defaults()
{
    SizeTable t;
    t.sizes_["integer:small"] = 28;
    t.sizes_["integer:large"] = 32;
    return t;
}

SizeTable SizeTable::parse(std::string_view text)
{
    auto t = defaults();
    for_each_line(text, [&](std::string_view line, int line_no) {
        auto eq = line.find('=');
        std::uint64_t bytes = 0;
        if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty() ||
            !parse_u64(trim(line.substr(eq + 1)), bytes) || bytes == 0)
            throw Error(ErrorKind::InvalidArgument, fmt::format("size table line {}: expected class=bytes", line_no));
        t.sizes_[std::string(trim(line.substr(0, eq)))] = bytes;
    });
    return t;
}

SizeTable SizeTable::load(const std::filesystem::path& path)
{
    return parse(read_all(path));
}

void SizeTable::set(const std::string& descriptor, std::uint64_t bytes)
{
    if (bytes == 0)
        throw Error(ErrorKind::InvalidArgument, fmt::format("size of {} must be > 0", descriptor));
    sizes_[descriptor] = bytes;
}

std::uint64_t SizeTable::size_of(const std::string& descriptor) const
{
    auto it = sizes_.find(descriptor);
    if (it == sizes_.end())
        throw Error(ErrorKind::UnknownDescriptor, fmt::format("no size for value class '{}'", descriptor));
    return it->second;
}

std::uint64_t object_size(const std::string& descriptor, const SizeTable& table)
{
    return table.size_of(descriptor);
}

AllocTrace::AllocTrace(std::vector<Event> events) : events_(std::move(events))
{
    std::vector<bool> open(events_.size() + 1, false);
    for (std::size_t i = 0; i < events_.size(); ++i)
    {
        const auto& e = events_[i];
        if (e.op == Op::Alloc)
        {
            if (e.size_bytes == 0)
                throw Error(ErrorKind::MalformedTrace, fmt::format("event {}: alloc of 0 bytes", i + 1));
            open[i + 1] = true;
        }
        else
        {
            if (e.target == 0 || e.target > i || !open[e.target])
                throw Error(ErrorKind::MalformedTrace,
                            fmt::format("event {}: free of {} which is not a live allocation", i + 1, e.target));
            open[e.target] = false;
        }
    }
    for (std::size_t i = 0; i < events_.size(); ++i)
    {
        auto& e = events_[i];
        if (e.op == Op::Free)
        {
            e.size_bytes = events_[e.target - 1].size_bytes;
            e.gc_tracked = events_[e.target - 1].gc_tracked;
        }
    }
}

AllocTrace AllocTrace::parse(std::string_view text, const SizeTable& sizes)
{
    std::vector<Event> events;
    for_each_line(text, [&](std::string_view line, int line_no) {
        std::vector<std::string_view> f;
        std::size_t start = 0;
        while (true)
        {
            auto c = line.find(',', start);
            f.push_back(trim(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start)));
            if (c == std::string_view::npos)
                break;
            start = c + 1;
        }
        auto bad = [&](std::string_view why) {
            return Error(ErrorKind::MalformedTrace, fmt::format("trace line {}: {}", line_no, why));
        };
        Event e;
        if (f[0] == "alloc")
        {
            if (f.size() != 3)
                throw bad("expected alloc,<bytes|class>,<0|1>");
            if (!parse_u64(f[1], e.size_bytes))
            {
                try
                {
                    e.size_bytes = sizes.size_of(std::string(f[1]));
                }
                catch (const Error& err)
                {
                    throw Error(ErrorKind::UnknownDescriptor, fmt::format("trace line {}: {}", line_no, err.what()));
                }
            }
            if (f[2] != "0" && f[2] != "1")
                throw bad("tracked flag must be 0 or 1");
            e.gc_tracked = f[2] == "1";
        }
        else if (f[0] == "free")
        {
            std::uint64_t target = 0;
            if (f.size() != 2 || !parse_u64(f[1], target))
                throw bad("expected free,<event>");
            e.op = Op::Free;
            e.target = static_cast<std::size_t>(target);
        }
        else
        {
            throw bad(fmt::format("unknown operation '{}'", f[0]));
        }
        events.push_back(e);
    });
    return AllocTrace(std::move(events));
}

AllocTrace AllocTrace::load(const std::filesystem::path& path, const SizeTable& sizes)
{
    return parse(read_all(path), sizes);
}

std::string AllocTrace::to_text() const
{
    std::string out;
    for (const auto& e : events_)
    {
        if (e.op == Op::Alloc)
            out += fmt::format("alloc,{},{}\n", e.size_bytes, e.gc_tracked ? 1 : 0);
        else
            out += fmt::format("free,{}\n", e.target);
    }
    return out;
}

void ArenaConfig::validate() const
{
    if (small_threshold_bytes == 0 || arena_bytes <= small_threshold_bytes)
        throw Error(ErrorKind::InvalidArgument,
                    fmt::format("need arena_bytes > small_threshold > 0 (got {} and {})", arena_bytes,
                                small_threshold_bytes));
}

void GcConfig::validate() const
{
    if (thresholds.empty())
        throw Error(ErrorKind::InvalidArgument, "at least one GC generation is required");
    for (auto t : thresholds)
        if (t == 0)
            throw Error(ErrorKind::InvalidArgument, "GC thresholds must be > 0");
}

MemoryEstimate simulate(const AllocTrace& trace, const ArenaConfig& arena, const GcConfig& gc,
                        const StepObserver& observer)
{
    arena.validate();
    gc.validate();

    const auto& events = trace.events();
    std::size_t small_allocs = 0;
    for (const auto& e : events)
        if (e.op == Op::Alloc && e.size_bytes <= arena.small_threshold_bytes)
            ++small_allocs;

    FirstFit fit(small_allocs);
    std::vector<std::uint64_t> used(std::max<std::size_t>(small_allocs, 1), 0);
    std::size_t next_slot = 0;
    std::vector<Object> objects(events.size() + 1);
    Collector collector(gc, objects);

    MemoryEstimate est;
    std::uint64_t arenas_open = 0;
    std::uint64_t direct = 0;
    std::uint64_t live = 0;
    std::uint64_t live_small = 0;

    auto release = [&](std::size_t id) {
        auto& o = objects[id];
        o.live = false;
        live -= o.size;
        if (o.arena < 0)
        {
            direct -= o.size;
            return;
        }
        auto slot = static_cast<std::size_t>(o.arena);
        live_small -= o.size;
        used[slot] -= o.size;
        if (used[slot] == 0)
        {
            fit.set(slot, -1);
            --arenas_open;
        }
        else
        {
            fit.set(slot, static_cast<std::int64_t>(arena.arena_bytes - used[slot]));
        }
    };

    for (std::size_t idx = 1; idx <= events.size(); ++idx)
    {
        const auto& e = events[idx - 1];
        if (e.op == Op::Alloc)
        {
            auto& o = objects[idx];
            o.size = e.size_bytes;
            o.live = true;
            o.tracked = e.gc_tracked;
            live += o.size;
            if (o.size > arena.small_threshold_bytes)
            {
                direct += o.size;
            }
            else
            {
                auto slot = fit.find(static_cast<std::int64_t>(o.size));
                if (!slot)
                {
                    slot = next_slot++;
                    ++arenas_open;
                }
                used[*slot] += o.size;
                fit.set(*slot, static_cast<std::int64_t>(arena.arena_bytes - used[*slot]));
                o.arena = static_cast<long>(*slot);
                live_small += o.size;
            }
            // Peak is taken before a collection triggered by this alloc frees anything.
            est.peak_bytes = std::max(est.peak_bytes, arenas_open * arena.arena_bytes + direct);
            est.direct_heap_bytes = std::max(est.direct_heap_bytes, direct);
            est.arena_count_peak = std::max(est.arena_count_peak, arenas_open);
            if (o.tracked)
                collector.on_alloc(idx, idx, release);
        }
        else
        {
            auto& o = objects[e.target];
            if (o.tracked)
                o.marked = true;
            else
                release(e.target);
        }
        if (observer)
            observer({idx, live, live_small, arenas_open * arena.arena_bytes, direct});
    }

    est.gc = collector.finish();
    est.live_bytes_end = live;
    est.direct_heap_end_bytes = direct;
    est.arena_count_end = arenas_open;
    return est;
}

GcOutcome gc_rounds(const AllocTrace& trace, const GcConfig& gc)
{
    gc.validate();
    const auto& events = trace.events();
    std::vector<Object> objects(events.size() + 1);
    Collector collector(gc, objects);
    auto release = [&](std::size_t id) { objects[id].live = false; };
    for (std::size_t idx = 1; idx <= events.size(); ++idx)
    {
        const auto& e = events[idx - 1];
        if (!e.gc_tracked)
            continue;
        if (e.op == Op::Alloc)
        {
            objects[idx].live = true;
            objects[idx].tracked = true;
            collector.on_alloc(idx, idx, release);
        }
        else
        {
            objects[e.target].marked = true;
        }
    }
    return collector.finish();
}

nlohmann::ordered_json to_json(const MemoryEstimate& est, const ArenaConfig& arena, const GcConfig& gc)
{
    nlohmann::ordered_json j;
    j["config"] = {{"arena_bytes", arena.arena_bytes},
                   {"small_threshold_bytes", arena.small_threshold_bytes},
                   {"gc_thresholds", gc.thresholds}};
    j["peak_bytes"] = est.peak_bytes;
    j["direct_heap_bytes"] = est.direct_heap_bytes;
    j["arena_count_peak"] = est.arena_count_peak;
    nlohmann::ordered_json schedule = nlohmann::ordered_json::array();
    for (const auto& r : est.gc.schedule)
        schedule.push_back({{"event", r.event}, {"generation", r.generation}});
    j["gc"] = {{"rounds", est.gc.rounds},
               {"surviving_objects", est.gc.surviving_objects},
               {"schedule", schedule}};
    j["end"] = {{"live_bytes", est.live_bytes_end},
                {"direct_heap_bytes", est.direct_heap_end_bytes},
                {"arena_count", est.arena_count_end}};
    return j;
}

} // namespace jobjail::pymem
