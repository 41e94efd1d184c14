#pragma once

#include <cstdint>
#include <string>

#include "sparsecot/model.hpp"

namespace sparsecot {

/// Parameter checkpoint: a text header listing tensor names and shapes,
/// followed by the flat values as 64-bit little-endian floats in header
/// order. Round-trips bit-exactly. The dimension mask rides along as a 0/1
/// tensor named "dim_mask"; `step` records how many training steps produced
/// the parameters.
void save_checkpoint(const std::string &path, const ModelParams &params, std::size_t step = 0);

struct LoadedCheckpoint {
    ModelParams params;
    std::size_t step = 0;
};

/// Loads a checkpoint into parameters shaped by the config; name or shape
/// mismatches fail loudly.
LoadedCheckpoint load_checkpoint(const std::string &path, const ModelConfig &config);

} // namespace sparsecot
