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

// Interpreter memory model: object sizes, small-object arenas, generational GC.

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace jobjail::pymem {

class SizeTable
{
public:
    // integer:small = 28, integer:large = 32.
    static SizeTable defaults();
    // `class=bytes` lines on top of the defaults; '#' starts a comment.
    static SizeTable parse(std::string_view text);
    static SizeTable load(const std::filesystem::path& path);

    void set(const std::string& descriptor, std::uint64_t bytes);
    bool contains(const std::string& descriptor) const { return sizes_.count(descriptor) != 0; }
    const std::map<std::string, std::uint64_t>& entries() const noexcept { return sizes_; }

    // Throws UnknownDescriptor.
    std::uint64_t size_of(const std::string& descriptor) const;

private:
    std::map<std::string, std::uint64_t> sizes_;
};

std::uint64_t object_size(const std::string& descriptor, const SizeTable& table);

enum class Op { Alloc, Free };

struct Event
{
    Op op = Op::Alloc;
    std::uint64_t size_bytes = 0;
    bool gc_tracked = false;
    // For frees: 1-based index of the alloc event being released.
    std::size_t target = 0;

    bool operator==(const Event&) const = default;
};

/// Events are numbered from 1 in file order; blank and '#' lines are skipped.
class AllocTrace
{
public:
    AllocTrace() = default;
    // Validates the whole stream; throws MalformedTrace.
    explicit AllocTrace(std::vector<Event> events);

    static AllocTrace parse(std::string_view text, const SizeTable& sizes = SizeTable::defaults());
    static AllocTrace load(const std::filesystem::path& path, const SizeTable& sizes = SizeTable::defaults());

    const std::vector<Event>& events() const noexcept { return events_; }
    std::size_t size() const noexcept { return events_.size(); }
    bool empty() const noexcept { return events_.empty(); }
    // 1-based.
    const Event& at(std::size_t index) const { return events_.at(index - 1); }

    std::string to_text() const;

private:
    std::vector<Event> events_;
};

struct ArenaConfig
{
    std::uint64_t arena_bytes = 262144;
    std::uint64_t small_threshold_bytes = 512;

    void validate() const;
};

struct GcConfig
{
    std::vector<std::uint64_t> thresholds{700, 10, 10};

    void validate() const;
};

struct GcRound
{
    std::size_t event = 0;
    int generation = 0;

    bool operator==(const GcRound&) const = default;
};

struct GcOutcome
{
    std::vector<std::uint64_t> rounds;
    std::vector<GcRound> schedule;
    // Objects still resident in each generation after the last event,
    // including ones marked unreachable but not yet collected.
    std::vector<std::uint64_t> surviving_objects;

    bool operator==(const GcOutcome&) const = default;
};

struct MemoryEstimate
{
    std::uint64_t peak_bytes = 0;
    // Largest direct-heap footprint over the run.
    std::uint64_t direct_heap_bytes = 0;
    std::uint64_t arena_count_peak = 0;
    GcOutcome gc;

    std::uint64_t live_bytes_end = 0;
    std::uint64_t direct_heap_end_bytes = 0;
    std::uint64_t arena_count_end = 0;

    bool operator==(const MemoryEstimate&) const = default;
};

struct StepState
{
    std::size_t event = 0;
    std::uint64_t live_bytes = 0;
    std::uint64_t live_small_bytes = 0;
    std::uint64_t arena_reserved_bytes = 0;
    std::uint64_t direct_heap_bytes = 0;
};

using StepObserver = std::function<void(const StepState&)>;

MemoryEstimate simulate(const AllocTrace& trace, const ArenaConfig& arena = {}, const GcConfig& gc = {},
                        const StepObserver& observer = {});

GcOutcome gc_rounds(const AllocTrace& trace, const GcConfig& gc = {});

nlohmann::ordered_json to_json(const MemoryEstimate& estimate, const ArenaConfig& arena, const GcConfig& gc);

} // namespace jobjail::pymem
