#pragma once

#include <string>

#include "cbfkit/config.hpp"
#include "cbfkit/network.hpp"

namespace cbfkit {

// Self-contained snapshot of a trained operator: everything simulate/grid
// need to rebuild the system, the constraint tree, and the network.
struct Checkpoint {
    SystemSpec system;
    EnvironmentSpec environment;
    ModelConfig model;  // includes input_dim; normalization lives in params
    MlpParams params;
    long step = 0;
    bool has_optimizer = false;
    MlpParams adam_m, adam_v;  // shaped like params when has_optimizer
};

// Atomic write (temp then rename). Weights are serialized losslessly.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Validates the format tag and the shape chain; throws std::invalid_argument
// on malformed content, std::runtime_error on I/O failure.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cbfkit
