#pragma once

#include <string>

#include <json.hpp>

#include "runconfig.hpp"

namespace pv {

// File-level command implementations behind the CLI and the C API. Each
// command reads a request of the form {"config": <RunConfig>, "args": {...}}
// and writes its artifacts under config.output. Errors are pv::Error.
//
// Commands: synth, extract, train, embed, segment, metrics, manifold, render.
void run_command(const std::string& command, const nlohmann::json& request);

}  // namespace pv
