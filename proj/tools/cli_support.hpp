#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nnc/passes.hpp"
#include "nnc/runtime.hpp"

namespace nnc::cli {

/// Parses the --vdims grammar: comma-separated `#k=true|false|<int>`
/// tokens. `true` enables, `false` disables, a positive integer
/// overrides; unmentioned symbols default to disabled. Throws
/// Error{BadToken} naming the offending position.
passes::VdimBinding parse_vdims_flag(const std::string& text);

/// Content identity of a weight tensor (dtype, dims, raw bytes).
uint64_t weight_content_hash(const Tensor& t);

/// Device-state persistence for cross-process offload runs: text lines
/// of "<hex hash> <name>".
std::map<std::string, uint64_t> load_device_state(const std::string& path);
void save_device_state(const std::string& path, const runtime::HostModel& model);

} // namespace nnc::cli
