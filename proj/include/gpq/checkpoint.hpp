#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "gpq/model.hpp"

namespace gpq {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct BadVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct TruncatedPayloadError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct HeaderParseError : CheckpointError {
    using CheckpointError::CheckpointError;
};

// "GPQ1" magic, a text header (version, hyperparameters, alive-index list,
// iteration, seed, per-array name+shape), then the raw little-endian float32
// payload. The reference-point array is stored at its original size so a
// pruned checkpoint keeps the retired coordinates; the alive list restores
// the pruned model on load. save -> load -> save is byte-identical.
struct LoadedCheckpoint {
    Model model;
    uint64_t seed = 0;
    int64_t iteration = 0;
};

void save_checkpoint(Model& m, const std::string& path, uint64_t seed, int64_t iteration);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace gpq
