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

#include <chrono>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>

namespace jobjail {

using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

using CpuSet = std::set<int>;

// "512", "4K", "5G" -> bytes. Suffixes are powers of 1024, case-insensitive.
std::uint64_t parse_size(std::string_view text);

// "250ms", "2s", "1m"; a bare number means seconds.
Millis parse_duration(std::string_view text);

// "0-3,8" -> {0,1,2,3,8}
CpuSet parse_cpuset(std::string_view text);

std::string format_cpuset(const CpuSet& cpus);

// Number of logical CPUs configured on the host.
int host_cpu_count();

} // namespace jobjail
