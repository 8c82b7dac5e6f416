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

#include "jobjail/units.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <unistd.h>

#include <cctype>
#include <charconv>
#include <limits>

namespace jobjail {

namespace {

std::uint64_t parse_unsigned(std::string_view digits, std::string_view whole, const char* what)
{
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size())
    {
        throw Error(ErrorKind::Usage, fmt::format("cannot parse {} '{}'", what, whole));
    }
    return value;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

} // namespace

std::uint64_t parse_size(std::string_view text)
{
    std::string_view s = trim(text);
    std::uint64_t shift = 0;
    if (!s.empty())
    {
        switch (std::tolower(static_cast<unsigned char>(s.back())))
        {
            case 'k': shift = 10; break;
            case 'm': shift = 20; break;
            case 'g': shift = 30; break;
            case 't': shift = 40; break;
            default: break;
        }
        if (shift != 0)
            s.remove_suffix(1);
    }
    std::uint64_t value = parse_unsigned(s, text, "size");
    if (value > (std::numeric_limits<std::uint64_t>::max() >> shift))
        throw Error(ErrorKind::Usage, fmt::format("size '{}' overflows", text));
    return value << shift;
}

Millis parse_duration(std::string_view text)
{
    std::string_view s = trim(text);
    std::uint64_t scale = 1000;
    if (s.size() > 2 && s.substr(s.size() - 2) == "ms")
    {
        scale = 1;
        s.remove_suffix(2);
    }
    else if (!s.empty() && s.back() == 's')
    {
        s.remove_suffix(1);
    }
    else if (!s.empty() && s.back() == 'm')
    {
        scale = 60'000;
        s.remove_suffix(1);
    }
    return Millis(parse_unsigned(s, text, "duration") * scale);
}

CpuSet parse_cpuset(std::string_view text)
{
    CpuSet cpus;
    std::string_view rest = trim(text);
    if (rest.empty())
        throw Error(ErrorKind::Usage, "empty cpuset");
    while (!rest.empty())
    {
        auto comma = rest.find(',');
        std::string_view item = trim(rest.substr(0, comma));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);

        auto dash = item.find('-');
        if (dash == std::string_view::npos)
        {
            cpus.insert(static_cast<int>(parse_unsigned(item, text, "cpuset")));
            continue;
        }
        auto lo = parse_unsigned(trim(item.substr(0, dash)), text, "cpuset");
        auto hi = parse_unsigned(trim(item.substr(dash + 1)), text, "cpuset");
        if (lo > hi || hi > 1'000'000)
            throw Error(ErrorKind::Usage, fmt::format("bad cpuset range '{}'", item));
        for (auto c = lo; c <= hi; ++c)
            cpus.insert(static_cast<int>(c));
    }
    return cpus;
}

std::string format_cpuset(const CpuSet& cpus)
{
    std::string out;
    auto it = cpus.begin();
    while (it != cpus.end())
    {
        int lo = *it;
        int hi = lo;
        ++it;
        while (it != cpus.end() && *it == hi + 1)
        {
            hi = *it;
            ++it;
        }
        if (!out.empty())
            out += ',';
        out += lo == hi ? fmt::format("{}", lo) : fmt::format("{}-{}", lo, hi);
    }
    return out;
}

int host_cpu_count()
{
    long n = ::sysconf(_SC_NPROCESSORS_CONF);
    return n > 0 ? static_cast<int>(n) : 1;
}

} // namespace jobjail
