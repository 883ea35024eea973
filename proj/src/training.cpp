#include "cbfkit/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cbfkit/io.hpp"
#include "cbfkit/kernels.hpp"
#include "cbfkit/rng.hpp"

namespace cbfkit {

using namespace kernels;

namespace {

// rng stream salts: dataset environments, dataset states, init, per-epoch shuffle
constexpr std::uint64_t kSaltEnvs = 0xE1;
constexpr std::uint64_t kSaltStates = 0x51;
constexpr std::uint64_t kSaltInit = 0x11;
constexpr std::uint64_t kSaltEpoch = 0x9000;

}  // namespace

void JointDataset::assemble(std::size_t k, double* xi) const {
    const std::size_t n = static_cast<std::size_t>(states_per_env);
    const std::size_t env = k / n;
    const std::size_t srow = shared_pool ? k % n : k;
    const std::size_t nx = states.cols, ne = environments.cols;
    std::memcpy(xi, states.row(srow), nx * sizeof(double));
    if (ne > 0) std::memcpy(xi + nx, environments.row(env), ne * sizeof(double));
}

JointDataset build_dataset(const EnvDistribution& dist, const Vec& box_lo, const Vec& box_hi,
                           int environments, int states_per_env, std::uint64_t seed,
                           bool shared_pool) {
    if (environments < 1 || states_per_env < 1)
        throw std::invalid_argument("dataset counts must be positive");
    if (box_lo.size() != box_hi.size() || box_lo.empty())
        throw std::invalid_argument("sampling box shape mismatch");
    for (std::size_t d = 0; d < box_lo.size(); ++d)
        if (!(box_lo[d] <= box_hi[d])) throw std::invalid_argument("sampling box inverted");

    JointDataset ds;
    ds.states_per_env = states_per_env;
    ds.shared_pool = shared_pool;
    if (dist.dim() > 0) {
        ds.environments = sample_environments(dist, environments, derive_seed(seed, kSaltEnvs));
    } else {
        ds.environments = Mat(environments, 0);
    }
    const std::size_t rows = shared_pool
                                 ? static_cast<std::size_t>(states_per_env)
                                 : static_cast<std::size_t>(environments) * states_per_env;
    ds.states = Mat(rows, box_lo.size());
    std::mt19937_64 g(derive_seed(seed, kSaltStates));
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = ds.states.row(i);
        for (std::size_t d = 0; d < box_lo.size(); ++d) row[d] = uniform(g, box_lo[d], box_hi[d]);
    }
    return ds;
}

double residual_hj(const MlpParams& p, const ControlAffineSystem& sys, const ConstraintTree& tree,
                   const Vec& x, const Vec& e, double gamma, double beta) {
    return eval_sample(p, sys, tree, x, e, gamma, beta).residual;
}

double cbf_violation(const MlpParams& p, const ControlAffineSystem& sys,
                     const ConstraintTree& tree, const Vec& x, const Vec& e, double gamma,
                     double beta) {
    return eval_sample(p, sys, tree, x, e, gamma, beta).violation;
}

LossValue combined_loss(const MlpParams& p, const Mat& batch, const ControlAffineSystem& sys,
                        const ConstraintTree& tree, const LossSpec& spec) {
    return batch_loss(p, batch, spec, sys, tree);
}

void adam_step(AdamState& st, MlpParams& params, const ParamGradient& grad,
               const TrainConfig& cfg, double rate) {
    if (st.m.W.empty()) {
        ensure_zeroed_like(st.m, params);
        ensure_zeroed_like(st.v, params);
    }
    auto pv = tensor_views(params);
    auto gv = tensor_views(grad);
    auto mv = tensor_views(st.m);
    auto vv = tensor_views(st.v);
    if (gv.size() != pv.size()) throw std::invalid_argument("gradient shape mismatch");
    for (std::size_t t = 0; t < pv.size(); ++t)
        if (gv[t].second != pv[t].second) throw std::invalid_argument("gradient shape mismatch");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    for (std::size_t t = 0; t < pv.size(); ++t)
        adam_update(pv[t].second, gv[t].first, mv[t].first, vv[t].first, pv[t].first, rate,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, 1.0 / bc1, 1.0 / bc2);
}

namespace {

void gather_batch(const JointDataset& ds, const std::vector<std::uint64_t>& perm, std::size_t lo,
                  std::size_t hi, Mat& batch) {
    const std::size_t width =
        ds.states.cols + ds.environments.cols;
    batch.rows = hi - lo;
    batch.cols = width;
    batch.a.resize(batch.rows * width);
    for (std::size_t i = lo; i < hi; ++i) ds.assemble(perm[i], batch.row(i - lo));
}

Checkpoint make_checkpoint(const TrainRecipe& recipe, const MlpParams& params,
                           const AdamState& adam, long step) {
    Checkpoint ck;
    ck.system = recipe.system;
    ck.environment = recipe.environment;
    ck.model = recipe.model;
    ck.params = params;
    ck.step = step;
    ck.has_optimizer = true;
    ck.adam_m = adam.m;
    ck.adam_v = adam.v;
    return ck;
}

}  // namespace

TrainOutput train(const TrainRecipe& recipe, const ControlAffineSystem& sys,
                  const ConstraintTree& tree, const JointDataset& ds,
                  const std::string& checkpoint_path, const std::string& csv_path,
                  const Checkpoint* resume) {
    validate_config(recipe.model);
    if (recipe.model.input_dim != sys.state_dim + tree.n_e)
        throw std::invalid_argument("model input width does not match system plus environment");
    const std::size_t total = ds.count();
    if (total == 0) throw std::invalid_argument("empty dataset");
    const TrainConfig& tc = recipe.train;
    const std::size_t bs = std::min<std::size_t>(tc.batch_size, total);
    const std::size_t steps_per_epoch = (total + bs - 1) / bs;

    MlpParams params;
    AdamState adam;
    long step = 0;
    if (resume) {
        params = resume->params;
        step = resume->step;
        if (params.input_dim() != recipe.model.input_dim)
            throw std::invalid_argument("resume checkpoint does not match the recipe");
        if (resume->has_optimizer) {
            adam.m = resume->adam_m;
            adam.v = resume->adam_v;
            adam.step = step;
        }
    } else {
        params = init_params(recipe.model, derive_seed(tc.seed, kSaltInit));
    }
    // the recipe owns the evaluation scalars; resumed weights are reshaped by it
    params.out_sharpness = recipe.model.out_sharpness;
    if (adam.m.W.empty() || adam.v.W.empty()) {
        ensure_zeroed_like(adam.m, params);
        ensure_zeroed_like(adam.v, params);
    }

    std::ofstream csv;
    if (!csv_path.empty()) {
        const bool fresh = !resume || step == 0;
        csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
        if (fresh) csv << "step,epoch,loss_total,loss_hj,loss_cbf,wall_ms\n";
    }

    const LossSpec spec{recipe.model.gamma, recipe.model.lambda, recipe.model.beta};
    // Geometric rate schedule over the step budget; resume keeps the same clock.
    long budget = tc.epochs * static_cast<long>(steps_per_epoch);
    if (tc.max_steps > 0) budget = std::min(budget, tc.max_steps);
    const auto step_rate = [&](long s) {
        if (tc.lr_final <= 0.0 || tc.lr_final >= tc.learning_rate || budget <= 1)
            return tc.learning_rate;
        const double frac = std::min(1.0, static_cast<double>(s) / static_cast<double>(budget - 1));
        return tc.learning_rate * std::pow(tc.lr_final / tc.learning_rate, frac);
    };
    std::vector<std::uint64_t> perm(total);
    Mat batch;
    ParamGradient grad;
    LossValue last{};
    bool capped = false;

    const long start_epoch = step / static_cast<long>(steps_per_epoch);
    const std::size_t start_offset = static_cast<std::size_t>(step) % steps_per_epoch;
    for (long epoch = start_epoch; epoch < tc.epochs && !capped; ++epoch) {
        std::iota(perm.begin(), perm.end(), std::uint64_t{0});
        std::mt19937_64 g(derive_seed(tc.seed, kSaltEpoch + static_cast<std::uint64_t>(epoch)));
        shuffle(perm, g);
        for (std::size_t b = epoch == start_epoch ? start_offset : 0; b < steps_per_epoch; ++b) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t lo = b * bs, hi = std::min(total, lo + bs);
            gather_batch(ds, perm, lo, hi, batch);
            last = loss_param_gradient(params, batch, spec, sys, tree, grad);
            adam_step(adam, params, grad, tc, step_rate(step));
            ++step;
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            if (csv.is_open())
                csv << step << ',' << epoch << ',' << format_double(last.total) << ','
                    << format_double(last.hj) << ',' << format_double(last.cbf) << ','
                    << format_double(ms) << '\n';
            if (!checkpoint_path.empty() && tc.checkpoint_interval > 0 &&
                step % tc.checkpoint_interval == 0) {
                save_checkpoint(checkpoint_path, make_checkpoint(recipe, params, adam, step));
                if (csv.is_open()) csv.flush();
            }
            if (tc.max_steps > 0 && step >= tc.max_steps) {
                capped = true;
                break;
            }
        }
    }

    if (!checkpoint_path.empty())
        save_checkpoint(checkpoint_path, make_checkpoint(recipe, params, adam, step));
    return {std::move(params), step, last};
}

}  // namespace cbfkit
