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

#include "jobjail/envctl.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <string_view>

extern char** environ;

namespace jobjail {

void ThreadLimitSpec::validate() const
{
    auto check = [](const std::optional<int>& v, const char* name) {
        if (v && *v < 1)
            throw Error(ErrorKind::InvalidArgument, fmt::format("{} must be >= 1, got {}", name, *v));
    };
    check(mkl_threads, "mkl threads");
    check(numexpr_threads, "numexpr threads");
    check(omp_threads, "omp threads");
}

EnvMap thread_env(const ThreadLimitSpec& spec)
{
    spec.validate();
    EnvMap env;
    if (spec.mkl_sequential)
        env["MKL_THREADING_LAYER"] = "SEQUENTIAL";
    if (spec.mkl_threads)
        env["MKL_NUM_THREADS"] = std::to_string(*spec.mkl_threads);
    if (spec.numexpr_threads)
        env["NUMEXPR_NUM_THREADS"] = std::to_string(*spec.numexpr_threads);
    if (spec.omp_threads)
    {
        env["OMP_NUM_THREADS"] = std::to_string(*spec.omp_threads);
        if (spec.extra_aliases)
        {
            env["OPENBLAS_NUM_THREADS"] = std::to_string(*spec.omp_threads);
            env["VECLIB_MAXIMUM_THREADS"] = std::to_string(*spec.omp_threads);
        }
    }
    return env;
}

EnvMap merge_env(const std::vector<EnvMap>& layers)
{
    EnvMap out;
    for (const auto& layer : layers)
        for (const auto& [k, v] : layer)
            out[k] = v;
    return out;
}

EnvMap current_environment()
{
    EnvMap env;
    for (char** e = environ; e && *e; ++e)
    {
        std::string_view kv(*e);
        auto eq = kv.find('=');
        if (eq == std::string_view::npos || eq == 0)
            continue;
        env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
    }
    return env;
}

std::vector<std::string> to_envp(const EnvMap& env)
{
    std::vector<std::string> out;
    out.reserve(env.size());
    for (const auto& [k, v] : env)
        out.push_back(k + "=" + v);
    return out;
}

} // namespace jobjail
