#pragma once

#include <string>

#include "cbfkit/checkpoint.hpp"
#include "cbfkit/config.hpp"
#include "cbfkit/network.hpp"

namespace cbfkit {

// Joint sample set: every environment row paired with a block of state rows.
// Per-env mode stores disjoint state blocks (env-major); shared-pool mode
// pairs one state pool with every environment.
struct JointDataset {
    Mat environments;  // M x n_e
    Mat states;        // shared: N x n_x, else (M*N) x n_x
    int states_per_env = 0;
    bool shared_pool = false;

    std::size_t count() const {
        return environments.rows * static_cast<std::size_t>(states_per_env);
    }
    // copies joint sample k as [x, e] into xi
    void assemble(std::size_t k, double* xi) const;
};

// Uniform draws: M environments from dist, states from the box; deterministic
// per seed. The state box may extend beyond the safe set.
JointDataset build_dataset(const EnvDistribution& dist, const Vec& box_lo, const Vec& box_hi,
                           int environments, int states_per_env, std::uint64_t seed,
                           bool shared_pool = false);

// Pointwise pieces of the steady-state PDE: min(delta, H + gamma h) and the
// positive part of -(H + gamma h).
double residual_hj(const MlpParams& p, const ControlAffineSystem& sys, const ConstraintTree& tree,
                   const Vec& x, const Vec& e, double gamma, double beta);
double cbf_violation(const MlpParams& p, const ControlAffineSystem& sys,
                     const ConstraintTree& tree, const Vec& x, const Vec& e, double gamma,
                     double beta);

// Mean squared residual plus lambda times mean squared violation.
LossValue combined_loss(const MlpParams& p, const Mat& batch, const ControlAffineSystem& sys,
                        const ConstraintTree& tree, const LossSpec& spec);

struct AdamState {
    MlpParams m, v;
    long step = 0;
};

// Standard bias-corrected update, in place. Shapes must match; lr = 0 leaves
// params untouched while the moments still decay. The two-rate form applies
// `rate` instead of cfg.learning_rate (schedules live in the caller).
void adam_step(AdamState& st, MlpParams& params, const ParamGradient& grad,
               const TrainConfig& cfg, double rate);
inline void adam_step(AdamState& st, MlpParams& params, const ParamGradient& grad,
                      const TrainConfig& cfg) {
    adam_step(st, params, grad, cfg, cfg.learning_rate);
}

struct TrainOutput {
    MlpParams params;
    long steps = 0;
    LossValue final_loss;
};

// Minibatch loop: per-epoch shuffle, loss_param_gradient, adam_step. Writes a
// checkpoint every checkpoint_interval steps and at the end (checkpoint_path
// nonempty), appends CSV rows step,epoch,loss_total,loss_hj,loss_cbf,wall_ms
// (csv_path nonempty). resume continues from a loaded checkpoint's params,
// optimizer state, and step counter; the stream of batches picks up exactly
// where the interrupted run left off. Non-finite losses abort by rethrowing;
// the last written checkpoint stays on disk.
TrainOutput train(const TrainRecipe& recipe, const ControlAffineSystem& sys,
                  const ConstraintTree& tree, const JointDataset& ds,
                  const std::string& checkpoint_path, const std::string& csv_path,
                  const Checkpoint* resume = nullptr);

}  // namespace cbfkit
