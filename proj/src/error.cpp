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

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <cerrno>
#include <cstring>

namespace jobjail {

const char* to_string(ErrorKind kind) noexcept
{
    switch (kind)
    {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::BackendUnsupported: return "backend-unsupported";
        case ErrorKind::Spawn: return "spawn";
        case ErrorKind::Io: return "io";
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::MalformedTrace: return "malformed-trace";
        case ErrorKind::UnknownDescriptor: return "unknown-descriptor";
        case ErrorKind::PartialSnapshot: return "partial-snapshot";
        case ErrorKind::EmptySeries: return "empty-series";
    }
    return "unknown";
}

void throw_errno(ErrorKind kind, const std::string& context)
{
    throw_errno(kind, context, errno);
}

void throw_errno(ErrorKind kind, const std::string& context, int err)
{
    throw Error(kind, fmt::format("{}: {}", context, std::strerror(err)));
}

} // namespace jobjail
