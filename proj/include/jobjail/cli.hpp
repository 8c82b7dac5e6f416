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

#include "jobjail/orchestrator.hpp"
#include "jobjail/pymem.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace jobjail {

struct PymemCommand
{
    enum class Action { Simulate, Size } action = Action::Simulate;
    std::filesystem::path trace;
    std::filesystem::path out;
    std::optional<std::filesystem::path> sizes;
    pymem::ArenaConfig arena;
    pymem::GcConfig gc;
    std::string value_class;
};

struct CliCommand
{
    enum class Kind { Run, Pymem, Help } kind = Kind::Help;
    JobSpec job;
    PymemCommand pymem;
    std::string help_text;
};

// argv[0] is the program name. Throws Usage for anything the grammar rejects.
CliCommand parse_args(const std::vector<std::string>& argv);

// Full command-line entry point; returns the process exit code.
int cli_main(int argc, char** argv);

} // namespace jobjail
