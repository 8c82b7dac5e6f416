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

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jobjail {

using EnvMap = std::map<std::string, std::string>;

// Thread-count knobs understood by the common numerical runtimes.
struct ThreadLimitSpec
{
    std::optional<int> mkl_threads;
    std::optional<int> numexpr_threads;
    std::optional<int> omp_threads;
    bool mkl_sequential = false;
    // Also export OPENBLAS_NUM_THREADS / VECLIB_MAXIMUM_THREADS mirroring
    // omp_threads. Off by default.
    bool extra_aliases = false;

    // Throws InvalidArgument if a present count is < 1.
    void validate() const;

    bool operator==(const ThreadLimitSpec&) const = default;
};

EnvMap thread_env(const ThreadLimitSpec& spec);

// Later layers win: merge_env({a, b}) lets b override a.
EnvMap merge_env(const std::vector<EnvMap>& layers);

// The calling process's environment.
EnvMap current_environment();

// "KEY=VALUE" strings in key order.
std::vector<std::string> to_envp(const EnvMap& env);

} // namespace jobjail
