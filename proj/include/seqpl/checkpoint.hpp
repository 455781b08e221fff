#pragma once
// Versioned model checkpoints: dims + vocabulary + every weight matrix in a
// JSON container with an FNV-1a checksum. Round-trips are bit-exact.

#include <string>

#include "seqpl/recognizer.hpp"

namespace seqpl {

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
};

std::string checkpoint_to_string(const ModelParams& params, const Vocabulary& vocab);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace seqpl
