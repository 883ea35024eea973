#pragma once

#include <cstdint>
#include <string>

#include "cbfkit/environment.hpp"
#include "cbfkit/network.hpp"
#include "cbfkit/systems.hpp"

namespace cbfkit {

// Which built-in dynamics to instantiate.
struct SystemSpec {
    std::string name = "double_integrator";
    double speed = 1.0;  // dubins only
};

// Constraint tree plus the sampling ranges of its parameter vector.
struct EnvironmentSpec {
    int param_dim = 0;
    TreeSpec tree;
    EnvDistribution ranges;
};

struct DatasetSpec {
    int environments = 1;
    int states_per_env = 1000;
    // true pairs one shared state pool with every environment; false draws
    // a fresh state set per environment
    bool shared_state_pool = false;
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 4096;
    double learning_rate = 1e-3;
    double lr_final = 0.0;  // > 0 decays the rate geometrically to this over the step budget
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int checkpoint_interval = 1000;
    long max_steps = 0;  // 0 means no cap
    DatasetSpec dataset;
};

// One self-contained training run description (the `train --config` file).
struct TrainRecipe {
    SystemSpec system;
    EnvironmentSpec environment;
    ModelConfig model;  // input_dim/normalization filled by finalize_model
    TrainConfig train;
};

ControlAffineSystem instantiate_system(const SystemSpec& spec);

// Builds the constraint tree against the system's state width.
ConstraintTree instantiate_tree(const ControlAffineSystem& sys, const EnvironmentSpec& env);

// Fills model.input_dim and the normalization spans from the system domain
// and environment ranges; validates the assembled config.
void finalize_model(TrainRecipe& recipe, const ControlAffineSystem& sys);

// Parse/serialize the recipe. Parse errors throw std::invalid_argument with
// a dotted field path (e.g. "train.dataset.environments: expected integer").
TrainRecipe parse_train_recipe(const std::string& json_text);
TrainRecipe load_train_recipe(const std::string& path);
std::string train_recipe_to_text(const TrainRecipe& recipe);

}  // namespace cbfkit
