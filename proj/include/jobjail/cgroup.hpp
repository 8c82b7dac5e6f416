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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace jobjail {

enum class CgroupVersion { V1, V2 };

// Directory under which per-jail memory nodes are created.
struct CgroupLocation
{
    std::filesystem::path parent;
    CgroupVersion version = CgroupVersion::V2;
};

// Honors JOBJAIL_CGROUP_ROOT, otherwise looks for a writable unified
// hierarchy with the memory controller and falls back to the v1 memory
// controller. nullopt when neither is usable.
std::optional<CgroupLocation> locate_memory_cgroup();

// Detects the layout of an explicit directory.
std::optional<CgroupLocation> inspect_cgroup_dir(const std::filesystem::path& dir);

std::string cgroup_node_name(const std::string& jail_id);

// Existing jobjail-* nodes under the location.
std::vector<std::filesystem::path> leftover_cgroup_nodes(const CgroupLocation& where);

/// A memory-limited control group node, removed on destruction.
class CgroupNode
{
public:
    static CgroupNode create(const CgroupLocation& where, const std::string& name, std::uint64_t limit_bytes);

    CgroupNode(CgroupNode&& other) noexcept;
    CgroupNode& operator=(CgroupNode&& other) noexcept;
    CgroupNode(const CgroupNode&) = delete;
    CgroupNode& operator=(const CgroupNode&) = delete;
    ~CgroupNode();

    const std::filesystem::path& path() const noexcept { return path_; }
    CgroupVersion version() const noexcept { return version_; }
    std::uint64_t limit_bytes() const noexcept { return limit_; }

    void attach(pid_t pid) const;
    std::vector<pid_t> procs() const;

    std::uint64_t usage_bytes() const;
    // High-water mark of charged memory; nullopt if the kernel lacks it.
    std::optional<std::uint64_t> peak_bytes() const;
    std::uint64_t oom_kills() const;

    // rmdir, retrying while the kernel still holds exiting tasks.
    bool remove(Millis timeout = Millis(2000));

private:
    CgroupNode(std::filesystem::path path, CgroupVersion version, std::uint64_t limit);

    std::filesystem::path path_;
    CgroupVersion version_ = CgroupVersion::V2;
    std::uint64_t limit_ = 0;
};

} // namespace jobjail
