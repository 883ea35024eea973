#include "cbfkit/network.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cbfkit/kernels.hpp"
#include "cbfkit/rng.hpp"
#include "cbfkit/threading.hpp"

namespace cbfkit {

using namespace kernels;

namespace {

double softplus(double y) { return std::fmax(y, 0.0) + std::log1p(std::exp(-std::fabs(y))); }

double sigmoid(double y) {
    if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
    const double t = std::exp(y);
    return t / (1.0 + t);
}

// Output shaping delta = softplus(q y) / q; slope in y is sigmoid(q y).
double out_value(double y, double q) { return softplus(q * y) / q; }
double out_slope(double y, double q) { return sigmoid(q * y); }

void fit(Mat& m, std::size_t r, std::size_t c) {
    if (m.rows != r || m.cols != c) m = Mat(r, c);
}

// Primal sweep plus `channels` forward directional derivatives. The input is
// split as (x[0..nx), e[0..input_dim-nx)); e may be null when nx covers the
// whole input. Channel c is seeded with the c-th input direction, scaled by
// the normalization so tangents are derivatives w.r.t. the raw input.
void mlp_forward(const MlpParams& p, const double* x, int nx, const double* e, int channels,
                 NetWorkspace& ws) {
    ws.resize(p, channels);
    const int L = p.layer_count() - 1;
    const int in = p.input_dim();
    for (int i = 0; i < in; ++i) {
        const double raw = i < nx ? x[i] : e[i - nx];
        ws.z[0][i] = (raw - p.in_center[i]) / p.in_half[i];
    }
    if (channels > 0) {
        ws.zdot[0].fill(0.0);
        for (int c = 0; c < channels; ++c) ws.zdot[0](c, c) = 1.0 / p.in_half[c];
    }
    for (int l = 0; l < L; ++l) {
        const Mat& W = p.W[l];
        affine(W.rows, W.cols, W.data(), p.b[l].data(), ws.z[l].data(), ws.scratch.data());
        tanh_fwd(W.rows, ws.scratch.data(), ws.z[l + 1].data(), ws.d[l].data());
        for (int c = 0; c < channels; ++c) {
            matvec(W.rows, W.cols, W.data(), ws.zdot[l].row(c), ws.adot[l].row(c));
            vmul(W.rows, ws.d[l].data(), ws.adot[l].row(c), ws.zdot[l + 1].row(c));
        }
    }
    const Mat& Wo = p.W[L];
    ws.y = dot(Wo.cols, Wo.row(0), ws.z[L].data()) + p.b[L][0];
    for (int c = 0; c < channels; ++c) ws.ydot[c] = dot(Wo.cols, Wo.row(0), ws.zdot[L].row(c));
}

// Reverse accumulation of the parameter gradient for a scalar function with
// seeds on delta = out_value(y) and on its channel tangents. Adds into grad.
// The tangent-of-tanh path needs the stored pre-activation tangents: with
// t = tanh(a), d = 1 - t^2, tdot = d . adot, the adjoint of a picks up
// -2 t d . adot . tdotbar from each channel.
void mlp_reverse(const MlpParams& p, int channels, NetWorkspace& ws, double delta_bar,
                 const double* deltadot_bar, MlpParams& grad) {
    const int L = p.layer_count() - 1;
    const double q = p.out_sharpness;
    const double s = out_slope(ws.y, q);
    double ybar = delta_bar * s;
    if (channels > 0) {
        const double sprime = q * s * (1.0 - s);
        for (int c = 0; c < channels; ++c) ybar += deltadot_bar[c] * sprime * ws.ydot[c];
    }
    const Mat& Wo = p.W[L];
    const std::size_t wd = Wo.cols;
    axpy(wd, ybar, ws.z[L].data(), grad.W[L].row(0));
    grad.b[L][0] += ybar;
    for (std::size_t i = 0; i < wd; ++i) ws.tbar[i] = ybar * Wo.row(0)[i];
    for (int c = 0; c < channels; ++c) {
        const double ydb = deltadot_bar[c] * s;
        axpy(wd, ydb, ws.zdot[L].row(c), grad.W[L].row(0));
        double* row = ws.tdotbar.row(c);
        for (std::size_t i = 0; i < wd; ++i) row[i] = ydb * Wo.row(0)[i];
    }
    for (int l = L - 1; l >= 0; --l) {
        const Mat& W = p.W[l];
        const std::size_t m = W.rows, n = W.cols;
        vmul(m, ws.d[l].data(), ws.tbar.data(), ws.abar.data());
        if (channels > 0) {
            vmul(m, ws.z[l + 1].data(), ws.d[l].data(), ws.scratch.data());
            for (int c = 0; c < channels; ++c)
                vmul3_acc(m, -2.0, ws.scratch.data(), ws.adot[l].row(c), ws.tdotbar.row(c),
                          ws.abar.data());
        }
        for (int c = 0; c < channels; ++c)
            vmul(m, ws.d[l].data(), ws.tdotbar.row(c), ws.adotbar.row(c));
        ger_acc(m, n, 1.0, ws.abar.data(), ws.z[l].data(), grad.W[l].data());
        axpy(m, 1.0, ws.abar.data(), grad.b[l].data());
        for (int c = 0; c < channels; ++c)
            ger_acc(m, n, 1.0, ws.adotbar.row(c), ws.zdot[l].row(c), grad.W[l].data());
        if (l > 0) {
            matvec_t(m, n, W.data(), ws.abar.data(), ws.tbar_next.data());
            for (int c = 0; c < channels; ++c)
                matvec_t(m, n, W.data(), ws.adotbar.row(c), ws.tdotbar_next.row(c));
            std::swap(ws.tbar, ws.tbar_next);
            std::swap(ws.tdotbar, ws.tdotbar_next);
        }
    }
}

void check_point_dims(const MlpParams& p, const ConstraintTree& tree, std::size_t nx,
                      std::size_t ne, double beta) {
    if (static_cast<int>(nx) != tree.n_x || static_cast<int>(ne) != tree.n_e)
        throw std::invalid_argument("state/environment sizes do not match the tree");
    if (p.input_dim() != tree.n_x + tree.n_e)
        throw std::invalid_argument("params input width does not match x plus e");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
}

// Per-thread scratch for the batch loss loops.
struct LossScratch {
    NetWorkspace net;
    TreeWorkspace tws;
    Vec gc, grad_h, f, G, u, w, ddbar;

    void prepare(int n, int m) {
        gc.resize(n);
        grad_h.resize(n);
        f.resize(n);
        G.resize(static_cast<std::size_t>(n) * m);
        u.resize(m);
        w.resize(n);
        ddbar.resize(n);
    }
};

[[noreturn]] void throw_sample_diag(std::size_t idx, const double* xi, std::size_t len,
                                    double c_low, double delta, double H) {
    std::ostringstream os;
    os << "non-finite loss at sample " << idx << ": xi=[";
    for (std::size_t i = 0; i < len; ++i) os << (i ? ", " : "") << xi[i];
    os << "] c_lower=" << c_low << " delta=" << delta << " hamiltonian=" << H;
    throw std::runtime_error(os.str());
}

// One sample's residual and violation; when gblock is set, also accumulates
// the sample's parameter gradient. The residual's min, the violation's
// positive part, and the Hamiltonian maximizer are held at their active
// branch (ties resolve to the delta branch / lower vertex).
void sample_loss(const MlpParams& p, const LossSpec& spec, const ControlAffineSystem& sys,
                 const ConstraintTree& tree, const double* xi, std::size_t idx, LossScratch& S,
                 MlpParams* gblock, double& r2_acc, double& v2_acc) {
    const int n = tree.n_x;
    const double* x = xi;
    const double* e = xi + n;
    const double c_low = smooth_lower_grad(tree, x, e, spec.beta, S.tws, S.gc.data(), nullptr);
    mlp_forward(p, x, n, e, n, S.net);
    const double s = out_slope(S.net.y, p.out_sharpness);
    const double delta = out_value(S.net.y, p.out_sharpness);
    for (int c = 0; c < n; ++c) S.grad_h[c] = S.gc[c] - s * S.net.ydot[c];
    const double H = hamiltonian_closed_loop(sys, x, S.grad_h.data(), S.f.data(), S.G.data(),
                                             S.u.data(), S.w.data());
    if (!std::isfinite(c_low) || !std::isfinite(delta) || !std::isfinite(H))
        throw_sample_diag(idx, xi, static_cast<std::size_t>(tree.n_x + tree.n_e), c_low, delta,
                          H);
    const double h = c_low - delta;
    const double ig = H + spec.gamma * h;
    const bool delta_branch = delta <= ig;
    const double r = delta_branch ? delta : ig;
    const double v = ig < 0.0 ? -ig : 0.0;
    r2_acc += r * r;
    v2_acc += v * v;
    if (!gblock) return;

    double dbar = 0.0;
    std::fill(S.ddbar.begin(), S.ddbar.end(), 0.0);
    if (delta_branch) {
        dbar += 2.0 * r;
    } else {
        dbar += -2.0 * r * spec.gamma;
        for (int c = 0; c < n; ++c) S.ddbar[c] += -2.0 * r * S.w[c];
    }
    if (spec.lambda > 0.0 && v > 0.0) {
        dbar += 2.0 * spec.lambda * v * spec.gamma;
        for (int c = 0; c < n; ++c) S.ddbar[c] += 2.0 * spec.lambda * v * S.w[c];
    }
    mlp_reverse(p, n, S.net, dbar, S.ddbar.data(), *gblock);
}

void check_loss_inputs(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                       const ControlAffineSystem& sys, const ConstraintTree& tree) {
    if (batch.rows == 0) throw std::invalid_argument("empty batch");
    if (tree.n_x != sys.state_dim)
        throw std::invalid_argument("tree state width does not match the system");
    if (static_cast<int>(batch.cols) != tree.n_x + tree.n_e)
        throw std::invalid_argument("batch columns must be state plus environment width");
    if (p.input_dim() != static_cast<int>(batch.cols))
        throw std::invalid_argument("params input width does not match the batch");
    if (!(spec.gamma > 0.0) || !(spec.beta > 0.0) || spec.lambda < 0.0)
        throw std::invalid_argument("loss spec requires gamma>0, beta>0, lambda>=0");
}

constexpr std::size_t kBlock = 256;

LossValue batch_loss_impl(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                          const ControlAffineSystem& sys, const ConstraintTree& tree,
                          ParamGradient* grad) {
    check_loss_inputs(p, batch, spec, sys, tree);
    const std::size_t B = batch.rows;
    const std::size_t nb = (B + kBlock - 1) / kBlock;
    static thread_local std::vector<MlpParams> pool;
    static thread_local std::vector<double> r2s, v2s;
    if (grad && pool.size() < nb) pool.resize(nb);
    if (grad)
        for (std::size_t i = 0; i < nb; ++i) ensure_zeroed_like(pool[i], p);
    r2s.assign(nb, 0.0);
    v2s.assign(nb, 0.0);

    parallel_blocks(nb, [&](std::size_t bi) {
        static thread_local LossScratch S;
        S.prepare(sys.state_dim, sys.input_dim);
        const std::size_t lo = bi * kBlock, hi = std::min(B, lo + kBlock);
        double r2 = 0.0, v2 = 0.0;
        MlpParams* gb = grad ? &pool[bi] : nullptr;
        for (std::size_t i = lo; i < hi; ++i)
            sample_loss(p, spec, sys, tree, batch.row(i), i, S, gb, r2, v2);
        r2s[bi] = r2;
        v2s[bi] = v2;
    });

    double r2 = 0.0, v2 = 0.0;
    for (std::size_t bi = 0; bi < nb; ++bi) {
        r2 += r2s[bi];
        v2 += v2s[bi];
    }
    if (grad) {
        ensure_zeroed_like(*grad, p);
        auto dst = tensor_views(*grad);
        for (std::size_t bi = 0; bi < nb; ++bi) {
            auto src = tensor_views(pool[bi]);
            for (std::size_t t = 0; t < dst.size(); ++t)
                axpy(dst[t].second, 1.0, src[t].first, dst[t].first);
        }
        const double inv = 1.0 / static_cast<double>(B);
        for (auto& [ptr, len] : dst) scale(len, inv, ptr);
    }
    LossValue lv;
    lv.hj = r2 / static_cast<double>(B);
    lv.cbf = v2 / static_cast<double>(B);
    lv.total = lv.hj + spec.lambda * lv.cbf;
    return lv;
}

}  // namespace

void validate_config(const ModelConfig& cfg) {
    if (cfg.input_dim < 1) throw std::invalid_argument("input_dim must be positive");
    if (cfg.hidden_layers < 1) throw std::invalid_argument("hidden_layers must be positive");
    if (cfg.hidden_width < 1) throw std::invalid_argument("hidden_width must be positive");
    if (!(cfg.gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (cfg.lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (!(cfg.beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (!(cfg.init_gap > 0.0) || !std::isfinite(cfg.init_gap))
        throw std::invalid_argument("init_gap must be positive and finite");
    if (!(cfg.out_sharpness > 0.0) || !std::isfinite(cfg.out_sharpness))
        throw std::invalid_argument("out_sharpness must be positive and finite");
    const std::size_t in = static_cast<std::size_t>(cfg.input_dim);
    if (!cfg.in_center.empty() && cfg.in_center.size() != in)
        throw std::invalid_argument("in_center length must equal input_dim");
    if (!cfg.in_half.empty()) {
        if (cfg.in_half.size() != in)
            throw std::invalid_argument("in_half length must equal input_dim");
        for (double hw : cfg.in_half)
            if (!(hw > 0.0)) throw std::invalid_argument("in_half entries must be positive");
    }
}

std::size_t MlpParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& w : W) n += w.size();
    for (const auto& v : b) n += v.size();
    return n;
}

void MlpParams::set_zero() {
    for (auto& w : W) w.fill(0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
}

std::vector<std::pair<double*, std::size_t>> tensor_views(MlpParams& p) {
    std::vector<std::pair<double*, std::size_t>> out;
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        out.emplace_back(p.W[l].data(), p.W[l].size());
        out.emplace_back(p.b[l].data(), p.b[l].size());
    }
    return out;
}

std::vector<std::pair<const double*, std::size_t>> tensor_views(const MlpParams& p) {
    std::vector<std::pair<const double*, std::size_t>> out;
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        out.emplace_back(p.W[l].data(), p.W[l].size());
        out.emplace_back(p.b[l].data(), p.b[l].size());
    }
    return out;
}

void ensure_zeroed_like(ParamGradient& g, const MlpParams& p) {
    bool match = g.W.size() == p.W.size() && g.b.size() == p.b.size();
    for (std::size_t l = 0; match && l < p.W.size(); ++l)
        match = g.W[l].rows == p.W[l].rows && g.W[l].cols == p.W[l].cols &&
                g.b[l].size() == p.b[l].size();
    if (!match) {
        g.W.clear();
        g.b.clear();
        for (std::size_t l = 0; l < p.W.size(); ++l) {
            g.W.emplace_back(p.W[l].rows, p.W[l].cols);
            g.b.emplace_back(p.b[l].size(), 0.0);
        }
        g.in_center = p.in_center;
        g.in_half = p.in_half;
        g.out_sharpness = p.out_sharpness;
    } else {
        g.set_zero();
    }
}

MlpParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    MlpParams p;
    std::vector<int> dims{cfg.input_dim};
    for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
    dims.push_back(1);
    std::mt19937_64 g(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l], fan_out = dims[l + 1];
        Mat W(fan_out, fan_in);
        const double lim = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : W.a) w = uniform(g, -lim, lim);
        p.W.push_back(std::move(W));
        p.b.emplace_back(fan_out, 0.0);
    }
    // Inverse of the output shaping: delta starts near init_gap regardless
    // of depth or sharpness.
    p.out_sharpness = cfg.out_sharpness;
    p.b.back()[0] = std::log(std::expm1(cfg.out_sharpness * cfg.init_gap)) / cfg.out_sharpness;
    p.in_center = cfg.in_center.empty() ? Vec(cfg.input_dim, 0.0) : cfg.in_center;
    p.in_half = cfg.in_half.empty() ? Vec(cfg.input_dim, 1.0) : cfg.in_half;
    return p;
}

std::pair<Vec, Vec> input_normalization(const ControlAffineSystem& sys,
                                        const EnvDistribution& dist) {
    Vec center, half;
    auto push = [&](double lo, double hi) {
        center.push_back(0.5 * (lo + hi));
        half.push_back(hi > lo ? 0.5 * (hi - lo) : 1.0);
    };
    for (int i = 0; i < sys.state_dim; ++i) push(sys.domain_lower[i], sys.domain_upper[i]);
    for (std::size_t i = 0; i < dist.lo.size(); ++i) push(dist.lo[i], dist.hi[i]);
    return {std::move(center), std::move(half)};
}

void NetWorkspace::resize(const MlpParams& p, int channels) {
    const int L = p.layer_count() - 1;
    const std::size_t in = static_cast<std::size_t>(p.input_dim());
    const std::size_t ch = static_cast<std::size_t>(channels);
    z.resize(L + 1);
    d.resize(L);
    zdot.resize(L + 1);
    adot.resize(L);
    z[0].resize(in);
    fit(zdot[0], ch, in);
    std::size_t maxw = 1;
    for (int l = 0; l < L; ++l) {
        const std::size_t w = p.W[l].rows;
        maxw = std::max(maxw, w);
        z[l + 1].resize(w);
        d[l].resize(w);
        fit(zdot[l + 1], ch, w);
        fit(adot[l], ch, w);
    }
    ydot.resize(ch);
    tbar.resize(maxw);
    tbar_next.resize(maxw);
    abar.resize(maxw);
    scratch.resize(maxw);
    fit(tdotbar, ch, maxw);
    fit(tdotbar_next, ch, maxw);
    fit(adotbar, ch, maxw);
}

double delta_forward(const MlpParams& p, const Vec& xi) {
    if (static_cast<int>(xi.size()) != p.input_dim())
        throw std::invalid_argument("input length does not match params");
    static thread_local NetWorkspace ws;
    mlp_forward(p, xi.data(), static_cast<int>(xi.size()), nullptr, 0, ws);
    return out_value(ws.y, p.out_sharpness);
}

double h_forward(const MlpParams& p, const ConstraintTree& tree, const Vec& x, const Vec& e,
                 double beta) {
    check_point_dims(p, tree, x.size(), e.size(), beta);
    static thread_local NetWorkspace ws;
    mlp_forward(p, x.data(), tree.n_x, e.data(), 0, ws);
    return eval_smooth_lower(tree, x, e, beta) - out_value(ws.y, p.out_sharpness);
}

Vec h_gradient_x(const MlpParams& p, const ConstraintTree& tree, const Vec& x, const Vec& e,
                 double beta) {
    check_point_dims(p, tree, x.size(), e.size(), beta);
    static thread_local NetWorkspace nws;
    static thread_local TreeWorkspace tws;
    Vec g(tree.n_x);
    h_with_gradient_x(p, tree, x.data(), e.data(), beta, nws, tws, g.data());
    return g;
}

double h_with_gradient_x(const MlpParams& p, const ConstraintTree& tree, const double* x,
                         const double* e, double beta, NetWorkspace& nws, TreeWorkspace& tws,
                         double* grad_x) {
    const double c_low = smooth_lower_grad(tree, x, e, beta, tws, grad_x, nullptr);
    mlp_forward(p, x, tree.n_x, e, tree.n_x, nws);
    const double s = out_slope(nws.y, p.out_sharpness);
    for (int c = 0; c < tree.n_x; ++c) grad_x[c] -= s * nws.ydot[c];
    return c_low - out_value(nws.y, p.out_sharpness);
}

SampleEval eval_sample(const MlpParams& p, const ControlAffineSystem& sys,
                       const ConstraintTree& tree, const Vec& x, const Vec& e, double gamma,
                       double beta) {
    check_point_dims(p, tree, x.size(), e.size(), beta);
    if (tree.n_x != sys.state_dim)
        throw std::invalid_argument("tree state width does not match the system");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    static thread_local NetWorkspace nws;
    static thread_local TreeWorkspace tws;
    SampleEval ev;
    ev.grad_x_h.resize(tree.n_x);
    Vec gc(tree.n_x);
    ev.c_lower = smooth_lower_grad(tree, x.data(), e.data(), beta, tws, gc.data(), nullptr);
    mlp_forward(p, x.data(), tree.n_x, e.data(), tree.n_x, nws);
    const double s = out_slope(nws.y, p.out_sharpness);
    ev.delta = out_value(nws.y, p.out_sharpness);
    for (int c = 0; c < tree.n_x; ++c) ev.grad_x_h[c] = gc[c] - s * nws.ydot[c];
    ev.h = ev.c_lower - ev.delta;
    Vec f(sys.state_dim), G(static_cast<std::size_t>(sys.state_dim) * sys.input_dim),
        w(sys.state_dim);
    ev.u_star.resize(sys.input_dim);
    ev.hamiltonian = hamiltonian_closed_loop(sys, x.data(), ev.grad_x_h.data(), f.data(),
                                             G.data(), ev.u_star.data(), w.data());
    ev.i_gamma = ev.hamiltonian + gamma * ev.h;
    ev.residual = std::min(ev.delta, ev.i_gamma);
    ev.violation = ev.i_gamma < 0.0 ? -ev.i_gamma : 0.0;
    return ev;
}

LossValue batch_loss(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                     const ControlAffineSystem& sys, const ConstraintTree& tree) {
    return batch_loss_impl(p, batch, spec, sys, tree, nullptr);
}

LossValue loss_param_gradient(const MlpParams& p, const Mat& batch, const LossSpec& spec,
                              const ControlAffineSystem& sys, const ConstraintTree& tree,
                              ParamGradient& grad) {
    return batch_loss_impl(p, batch, spec, sys, tree, &grad);
}

}  // namespace cbfkit
