#pragma once

#include <cstdint>
#include <utility>

#include "cbfkit/environment.hpp"
#include "cbfkit/systems.hpp"

namespace cbfkit {

// MLP recipe plus the scalars that shape the safety operator and its loss.
struct ModelConfig {
    int input_dim = 0;  // n_x + n_e
    int hidden_layers = 4;
    int hidden_width = 50;
    double gamma = 1.0;   // class-K slope in hdot + gamma * h
    double lambda = 1.0;  // feasibility-penalty weight
    double beta = 10.0;   // LSE sharpness for the constraint lower bound
    // Initial output gap: the final bias is set so delta starts near this
    // value everywhere. A conservative (large) gap keeps the softplus away
    // from its flat tail early in training. ln 2 matches a zero bias.
    double init_gap = 0.6931471805599453;
    // Output saturation scale: delta = softplus(q * y) / q. Values below 1
    // widen the softplus knee, so a preactivation driven far negative keeps
    // a usable slope instead of flatlining. 1 is the plain softplus.
    double out_sharpness = 1.0;
    // Per-input affine normalization (x - center) / half applied before the
    // first layer. Empty means identity.
    Vec in_center, in_half;
};

void validate_config(const ModelConfig& cfg);

// Weights and biases, W[l] applied as z_{l+1} = act(W[l] z_l + b[l]); the
// last layer maps hidden_width -> 1. The normalization constants ride along
// so evaluation needs nothing but this struct; they are not trainable.
struct MlpParams {
    std::vector<Mat> W;
    std::vector<Vec> b;
    Vec in_center, in_half;
    double out_sharpness = 1.0;  // rides along like the normalization; not trainable

    int layer_count() const { return static_cast<int>(W.size()); }
    int input_dim() const { return W.empty() ? 0 : static_cast<int>(W.front().cols); }
    std::size_t scalar_count() const;
    void set_zero();  // zeroes W and b, leaves normalization alone
};
using ParamGradient = MlpParams;

// Contiguous (pointer, length) spans over W0, b0, W1, b1, ... for optimizers
// and finite-difference loops.
std::vector<std::pair<double*, std::size_t>> tensor_views(MlpParams& p);
std::vector<std::pair<const double*, std::size_t>> tensor_views(const MlpParams& p);

// Reshapes g to match p (zeroing) if needed, else just zeroes it.
void ensure_zeroed_like(ParamGradient& g, const MlpParams& p);

// Glorot-uniform weights, zero biases except the output bias, which is set
// so the initial delta sits near cfg.init_gap. Deterministic per seed.
MlpParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// (center, half) spans covering the system's domain box then the environment
// ranges; degenerate dimensions get half = 1.
std::pair<Vec, Vec> input_normalization(const ControlAffineSystem& sys,
                                        const EnvDistribution& dist);

// Scratch for one forward/reverse sweep with `channels` directional-derivative
// channels riding along. Reusable across calls; resize is cheap when shapes
// already match.
struct NetWorkspace {
    std::vector<Vec> z;     // z[0] = normalized input, z[l+1] = tanh output of layer l
    std::vector<Vec> d;     // d[l] = 1 - tanh^2 at layer l
    std::vector<Mat> zdot;  // zdot[l]: channels x len(z[l])
    std::vector<Mat> adot;  // adot[l]: channels x width, pre-activation tangents
    Vec ydot;               // channels
    double y = 0.0;         // pre-softplus output
    // reverse-sweep ping-pong buffers
    Vec tbar, tbar_next;
    Mat tdotbar, tdotbar_next;
    Vec abar, scratch;
    Mat adotbar;

    void resize(const MlpParams& p, int channels);
};

// delta(xi) = softplus(q * mlp(normalize(xi))) / q >= 0, q = out_sharpness.
double delta_forward(const MlpParams& p, const Vec& xi);

// h(x,e) = smooth lower bound of the constraint minus delta([x,e]).
double h_forward(const MlpParams& p, const ConstraintTree& tree, const Vec& x, const Vec& e,
                 double beta);

// Analytic d h / d x via forward directional channels through the MLP plus
// the tree's smoothed gradient.
Vec h_gradient_x(const MlpParams& p, const ConstraintTree& tree, const Vec& x, const Vec& e,
                 double beta);

// Fused allocation-free form of the two calls above; writes grad_x (length
// n_x) and returns h.
double h_with_gradient_x(const MlpParams& p, const ConstraintTree& tree, const double* x,
                         const double* e, double beta, NetWorkspace& nws, TreeWorkspace& tws,
                         double* grad_x);

struct LossSpec {
    double gamma = 1.0;
    double lambda = 1.0;
    double beta = 10.0;
};

// Everything the pointwise PDE residual produces for one joint sample.
struct SampleEval {
    double c_lower = 0.0;      // smoothed constraint lower bound
    double delta = 0.0;        // learned gap, equals c_lower - h
    double h = 0.0;            // operator value
    double hamiltonian = 0.0;  // max_u grad_h . (f + g u)
    double i_gamma = 0.0;      // hamiltonian + gamma * h
    double residual = 0.0;     // min(delta, i_gamma)
    double violation = 0.0;    // max(0, -i_gamma)
    Vec grad_x_h;
    Vec u_star;
};

SampleEval eval_sample(const MlpParams& p, const ControlAffineSystem& sys,
                       const ConstraintTree& tree, const Vec& x, const Vec& e, double gamma,
                       double beta);

struct LossValue {
    double total = 0.0;  // hj + lambda * cbf
    double hj = 0.0;     // mean squared residual
    double cbf = 0.0;    // mean squared violation
};

// Mean loss over the batch (rows are joint samples [x, e]) without gradient.
LossValue batch_loss(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                     const ControlAffineSystem& sys, const ConstraintTree& tree);

// Mean loss and its exact parameter gradient. The nested spatial gradient is
// differentiated through; the Hamiltonian maximizer, the residual's min, and
// the violation's positive part are held at their active branch. Throws
// std::runtime_error naming the offending sample on non-finite values.
LossValue loss_param_gradient(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                              const ControlAffineSystem& sys, const ConstraintTree& tree,
                              ParamGradient& grad);

}  // namespace cbfkit
