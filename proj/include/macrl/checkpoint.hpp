#pragma once

#include <string>

#include "macrl/train.hpp"

// Versioned binary container for a Checkpoint: a magic tag, a format version,
// a key=value text header carrying the model configuration and run state,
// then length-prefixed named blobs of little-endian 32-bit floats, in a fixed
// deterministic order so save -> load -> save is byte-identical.
//
// Blob names: "<group>/<path>" for the six parameter stores,
// "opt.m/<group>/<path>" and "opt.v/<group>/<path>" for Adam moments, and
// "bank/keys" for the memory bank. Checkpoints from the supervised stages
// carry only the encoder and classifier groups.

namespace macrl {

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path);

// Rebuilds the model from the header's configuration, then overwrites every
// stored tensor from the blobs, validating shapes. Bad magic, unsupported
// version, truncation, unknown or missing tensors, and shape mismatches are
// each rejected with a distinct message; nothing is returned on failure.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

}  // namespace macrl
