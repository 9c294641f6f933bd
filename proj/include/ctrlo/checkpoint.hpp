#pragma once

#include <string>

#include "ctrlo/params.hpp"

namespace ctrlo {

// Checkpoint format (little-endian):
//   magic "CTCK", version u32 = 1
//   config echo: u64 length + bytes (plain key=value text)
//   param count u64
//   per param: name (u32 length + bytes), ndims u32 = 2, dims 2*u32
//              (rows, cols), then rows*cols f64 row-major

/// Writes every registered parameter with the resolved config text.
void save_checkpoint(const std::string& path, const ParamRegistry& reg,
                     const std::string& config_echo);

/// Reads just the embedded config text.
std::string read_checkpoint_config(const std::string& path);

/// Loads parameters into an already-shaped registry. Name or shape mismatch
/// raises config_error (the checkpoint does not match the model dims).
void load_checkpoint(const std::string& path, const ParamRegistry& reg);

}  // namespace ctrlo
