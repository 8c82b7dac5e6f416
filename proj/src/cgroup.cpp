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

#include "jobjail/cgroup.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace jobjail {

namespace fs = std::filesystem;

namespace {

std::optional<std::string> read_file(const fs::path& p)
{
    std::ifstream in(p);
    if (!in)
        return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& value)
{
    std::ofstream out(p);
    if (!out)
        throw_errno(ErrorKind::BackendUnsupported, fmt::format("open {}", p.string()));
    out << value;
    out.flush();
    if (!out)
        throw_errno(ErrorKind::BackendUnsupported, fmt::format("write {} to {}", value, p.string()));
}

std::optional<std::uint64_t> read_u64(const fs::path& p)
{
    auto text = read_file(p);
    if (!text)
        return std::nullopt;
    try
    {
        return std::stoull(*text);
    }
    catch (...)
    {
        return std::nullopt;
    }
}

// Value of "key N" in a flat-keyed file (memory.events, memory.oom_control).
std::optional<std::uint64_t> read_keyed(const fs::path& p, const std::string& key)
{
    auto text = read_file(p);
    if (!text)
        return std::nullopt;
    std::istringstream in(*text);
    std::string k;
    std::uint64_t v = 0;
    while (in >> k >> v)
        if (k == key)
            return v;
    return std::nullopt;
}

bool writable_dir(const fs::path& p)
{
    return fs::is_directory(p) && ::access(p.c_str(), W_OK) == 0;
}

bool has_token(const std::string& text, const std::string& token)
{
    std::istringstream in(text);
    std::string t;
    while (in >> t)
        if (t == token)
            return true;
    return false;
}

// Own path in a hierarchy from /proc/self/cgroup; controller "" is v2.
std::optional<std::string> own_cgroup_path(const std::string& controller)
{
    std::ifstream in("/proc/self/cgroup");
    std::string line;
    while (std::getline(in, line))
    {
        auto c1 = line.find(':');
        auto c2 = line.find(':', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            continue;
        std::string ctrls = line.substr(c1 + 1, c2 - c1 - 1);
        std::string path = line.substr(c2 + 1);
        bool match = controller.empty() ? ctrls.empty()
                                        : ("," + ctrls + ",").find("," + controller + ",") != std::string::npos;
        if (match)
            return path;
    }
    return std::nullopt;
}

// Mount points from /proc/self/mountinfo for cgroup2 (controller empty) or
// the v1 hierarchy carrying the controller.
std::vector<fs::path> cgroup_mounts(const std::string& controller)
{
    std::vector<fs::path> out;
    std::ifstream in("/proc/self/mountinfo");
    std::string line;
    while (std::getline(in, line))
    {
        auto sep = line.find(" - ");
        if (sep == std::string::npos)
            continue;
        std::istringstream pre(line.substr(0, sep));
        std::string id, parent, dev, root, mount_point;
        pre >> id >> parent >> dev >> root >> mount_point;
        std::istringstream post(line.substr(sep + 3));
        std::string fstype, source, options;
        post >> fstype >> source >> options;
        if (controller.empty() && fstype == "cgroup2")
            out.emplace_back(mount_point);
        else if (!controller.empty() && fstype == "cgroup" &&
                 ("," + options + ",").find("," + controller + ",") != std::string::npos)
            out.emplace_back(mount_point);
    }
    return out;
}

} // namespace

std::optional<CgroupLocation> inspect_cgroup_dir(const fs::path& dir)
{
    if (!writable_dir(dir))
        return std::nullopt;
    if (fs::exists(dir / "cgroup.controllers"))
    {
        auto controllers = read_file(dir / "cgroup.controllers").value_or("");
        if (!has_token(controllers, "memory"))
            return std::nullopt;
        return CgroupLocation{dir, CgroupVersion::V2};
    }
    if (fs::exists(dir / "memory.limit_in_bytes"))
        return CgroupLocation{dir, CgroupVersion::V1};
    return std::nullopt;
}

std::optional<CgroupLocation> locate_memory_cgroup()
{
    if (const char* env = std::getenv("JOBJAIL_CGROUP_ROOT"); env && *env)
        return inspect_cgroup_dir(env);

    if (auto own = own_cgroup_path(""))
    {
        for (const auto& mount : cgroup_mounts(""))
        {
            fs::path dir = mount / fs::path(*own).relative_path();
            if (auto loc = inspect_cgroup_dir(dir))
                return loc;
        }
    }
    if (auto own = own_cgroup_path("memory"))
    {
        for (const auto& mount : cgroup_mounts("memory"))
        {
            fs::path dir = mount / fs::path(*own).relative_path();
            if (auto loc = inspect_cgroup_dir(dir))
                return loc;
        }
    }
    return std::nullopt;
}

std::string cgroup_node_name(const std::string& jail_id)
{
    return "jobjail-" + jail_id;
}

std::vector<fs::path> leftover_cgroup_nodes(const CgroupLocation& where)
{
    std::vector<fs::path> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(where.parent, ec))
    {
        if (entry.is_directory() && entry.path().filename().string().rfind("jobjail-", 0) == 0)
            out.push_back(entry.path());
    }
    return out;
}

CgroupNode::CgroupNode(fs::path path, CgroupVersion version, std::uint64_t limit)
    : path_(std::move(path)), version_(version), limit_(limit)
{
}

CgroupNode CgroupNode::create(const CgroupLocation& where, const std::string& name, std::uint64_t limit_bytes)
{
    if (where.version == CgroupVersion::V2)
    {
        auto subtree = read_file(where.parent / "cgroup.subtree_control").value_or("");
        if (!has_token(subtree, "memory"))
        {
            try
            {
                write_file(where.parent / "cgroup.subtree_control", "+memory");
            }
            catch (const Error& e)
            {
                throw Error(ErrorKind::BackendUnsupported,
                            fmt::format("memory controller not delegated to {}: {}", where.parent.string(), e.what()));
            }
        }
    }

    fs::path path = where.parent / name;
    if (::mkdir(path.c_str(), 0755) != 0)
        throw_errno(ErrorKind::BackendUnsupported, fmt::format("mkdir {}", path.string()));
    CgroupNode node(path, where.version, limit_bytes);

    if (where.version == CgroupVersion::V2)
    {
        write_file(path / "memory.max", std::to_string(limit_bytes));
        if (fs::exists(path / "memory.swap.max"))
            write_file(path / "memory.swap.max", "0");
        if (fs::exists(path / "memory.oom.group"))
            write_file(path / "memory.oom.group", "1");
    }
    else
    {
        write_file(path / "memory.limit_in_bytes", std::to_string(limit_bytes));
        if (fs::exists(path / "memory.memsw.limit_in_bytes"))
        {
            try
            {
                write_file(path / "memory.memsw.limit_in_bytes", std::to_string(limit_bytes));
            }
            catch (const Error&)
            {
                // swap accounting disabled on this kernel
            }
        }
    }
    return node;
}

CgroupNode::CgroupNode(CgroupNode&& other) noexcept
    : path_(std::exchange(other.path_, {})), version_(other.version_), limit_(other.limit_)
{
}

CgroupNode& CgroupNode::operator=(CgroupNode&& other) noexcept
{
    if (this != &other)
    {
        remove(Millis(0));
        path_ = std::exchange(other.path_, {});
        version_ = other.version_;
        limit_ = other.limit_;
    }
    return *this;
}

CgroupNode::~CgroupNode()
{
    remove();
}

void CgroupNode::attach(pid_t pid) const
{
    write_file(path_ / "cgroup.procs", std::to_string(pid));
}

std::vector<pid_t> CgroupNode::procs() const
{
    std::vector<pid_t> out;
    std::ifstream in(path_ / "cgroup.procs");
    pid_t p = 0;
    while (in >> p)
        out.push_back(p);
    return out;
}

std::uint64_t CgroupNode::usage_bytes() const
{
    auto file = version_ == CgroupVersion::V2 ? "memory.current" : "memory.usage_in_bytes";
    return read_u64(path_ / file).value_or(0);
}

std::optional<std::uint64_t> CgroupNode::peak_bytes() const
{
    auto file = version_ == CgroupVersion::V2 ? "memory.peak" : "memory.max_usage_in_bytes";
    return read_u64(path_ / file);
}

std::uint64_t CgroupNode::oom_kills() const
{
    if (version_ == CgroupVersion::V2)
        return read_keyed(path_ / "memory.events", "oom_kill").value_or(0);
    // Older v1 kernels lack the oom_kill key; failcnt at least shows the limit was hit.
    if (auto v = read_keyed(path_ / "memory.oom_control", "oom_kill"))
        return *v;
    return 0;
}

bool CgroupNode::remove(Millis timeout)
{
    if (path_.empty())
        return true;
    auto deadline = Clock::now() + timeout;
    while (true)
    {
        if (::rmdir(path_.c_str()) == 0 || errno == ENOENT)
        {
            path_.clear();
            return true;
        }
        if (errno != EBUSY || Clock::now() >= deadline)
            return false;
        std::this_thread::sleep_for(Millis(20));
    }
}

} // namespace jobjail
