#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cbfkit/network.hpp"
#include "cbfkit/rng.hpp"
#include "cbfkit/systems.hpp"

using namespace cbfkit;

namespace {

// Double integrator with one keepout disc in the (x, v) plane plus the safe
// box; e = (radius, cx, cv). Small enough for finite-difference sweeps.
ConstraintTree small_tree() {
    return build_tree(2, 3,
                      min_spec({circle_spec({0, 1}, {1, 2}, 0), halfspace_lower_spec(0, 0.0),
                                halfspace_upper_spec(0, 10.0), halfspace_lower_spec(1, -5.0),
                                halfspace_upper_spec(1, 5.0)}));
}

EnvDistribution small_dist() { return {{1.0, 2.0, -3.0}, {2.0, 8.0, 3.0}}; }

ModelConfig small_config(const ControlAffineSystem& sys, const EnvDistribution& dist,
                         int layers = 2, int width = 6) {
    ModelConfig cfg;
    cfg.input_dim = sys.state_dim + static_cast<int>(dist.lo.size());
    cfg.hidden_layers = layers;
    cfg.hidden_width = width;
    auto [c, h] = input_normalization(sys, dist);
    cfg.in_center = c;
    cfg.in_half = h;
    return cfg;
}

double loss_at(MlpParams& p, const Mat& batch, const LossSpec& spec,
               const ControlAffineSystem& sys, const ConstraintTree& tree) {
    return batch_loss(p, batch, spec, sys, tree).total;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("init: shapes, bounds, determinism") {
    ModelConfig cfg;
    cfg.input_dim = 4;
    auto p = init_params(cfg, 3);
    REQUIRE(p.W.size() == 5);
    CHECK(p.W[0].rows == 50);
    CHECK(p.W[0].cols == 4);
    CHECK(p.b[0].size() == 50);
    CHECK(p.W[4].rows == 1);
    CHECK(p.W[4].cols == 50);
    CHECK(p.scalar_count() == 50 * 4 + 50 + 3 * (50 * 50 + 50) + 50 + 1);
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        const double lim = std::sqrt(6.0 / (p.W[l].rows + p.W[l].cols));
        for (double w : p.W[l].a) CHECK(std::fabs(w) <= lim);
        for (double b : p.b[l]) CHECK(b == 0.0);
    }
    auto q = init_params(cfg, 3);
    for (std::size_t l = 0; l < p.W.size(); ++l) CHECK(p.W[l].a == q.W[l].a);
    auto r = init_params(cfg, 4);
    CHECK(p.W[0].a != r.W[0].a);

    cfg.gamma = 0.0;
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
    cfg.gamma = 1.0;
    cfg.in_half = {1.0, 1.0};
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
}

TEST_CASE("init: output gap sets the starting delta level") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_layers = 2;
    cfg.hidden_width = 16;

    // Default gap reproduces the zero-bias initialization exactly.
    CHECK(init_params(cfg, 7).b.back()[0] == 0.0);

    cfg.init_gap = 3.0;
    auto p = init_params(cfg, 7);
    CHECK(p.b.back()[0] == doctest::Approx(std::log(std::expm1(3.0))));
    // With random tanh features the output stays near the requested gap.
    std::mt19937_64 g(5);
    Vec x(2);
    for (int i = 0; i < 50; ++i) {
        for (auto& v : x) v = uniform(g, -2.0, 2.0);
        CHECK(delta_forward(p, x) == doctest::Approx(3.0).epsilon(0.35));
    }

    // A reshaped output still starts at the requested gap: the bias absorbs
    // the sharpness through the inverse map.
    cfg.out_sharpness = 0.35;
    auto ps = init_params(cfg, 7);
    CHECK(ps.out_sharpness == 0.35);
    CHECK(ps.b.back()[0] == doctest::Approx(std::log(std::expm1(0.35 * 3.0)) / 0.35));
    for (int i = 0; i < 50; ++i) {
        for (auto& v : x) v = uniform(g, -2.0, 2.0);
        CHECK(delta_forward(ps, x) == doctest::Approx(3.0).epsilon(0.35));
    }
    cfg.out_sharpness = 1.0;

    cfg.init_gap = 0.0;
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
    cfg.init_gap = -1.0;
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
    cfg.init_gap = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
    cfg.init_gap = 3.0;
    cfg.out_sharpness = 0.0;
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
    cfg.out_sharpness = -2.0;
    CHECK_THROWS_AS(init_params(cfg, 1), std::invalid_argument);
}

TEST_CASE("delta_forward: constant net and hand-composed fixture") {
    ModelConfig cfg;
    cfg.input_dim = 3;
    auto p = init_params(cfg, 0);
    p.set_zero();
    std::mt19937_64 g(2);
    for (int i = 0; i < 20; ++i) {
        Vec xi = {uniform(g, -5, 5), uniform(g, -5, 5), uniform(g, -5, 5)};
        CHECK(delta_forward(p, xi) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }

    // 2-neuron identity-ish net, no normalization
    MlpParams t;
    t.W.push_back(Mat(2, 2));
    t.W.back()(0, 0) = 1.0;
    t.W.back()(1, 1) = 1.0;
    t.b.push_back(Vec(2, 0.0));
    t.W.push_back(Mat(1, 2));
    t.W.back()(0, 0) = 1.0;
    t.W.back()(0, 1) = 1.0;
    t.b.push_back(Vec(1, 0.0));
    t.in_center = {0.0, 0.0};
    t.in_half = {1.0, 1.0};
    const double y = std::tanh(0.3) + std::tanh(-0.2);
    CHECK(delta_forward(t, {0.3, -0.2}) ==
          doctest::Approx(std::log1p(std::exp(y))).epsilon(1e-13));
    CHECK(delta_forward(t, {0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    // softplus output is nonnegative for arbitrary params
    auto cfg2 = small_config(make_double_integrator(), small_dist());
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto q = init_params(cfg2, s);
        Vec xi(cfg2.input_dim);
        for (auto& v : xi) v = uniform(g, -20, 20);
        CHECK(delta_forward(q, xi) >= 0.0);
    }

    CHECK_THROWS_AS(delta_forward(p, {1.0}), std::invalid_argument);
}

TEST_CASE("h_forward: containment under the exact constraint") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto dist = small_dist();
    auto cfg = small_config(sys, dist, 3, 16);
    std::mt19937_64 g(7);
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto p = init_params(cfg, s);
        Mat envs = sample_environments(dist, 40, 100 + s);
        for (int i = 0; i < 40; ++i) {
            Vec e(envs.row(i), envs.row(i) + 3);
            Vec x = {uniform(g, -1, 11), uniform(g, -6, 6)};
            double beta = uniform(g, 1.0, 100.0);
            double h = h_forward(p, tree, x, e, beta);
            double clow = eval_smooth_lower(tree, x, e, beta);
            CHECK(h <= clow);
            CHECK(clow <= eval_constraint(tree, x, e) + 1e-12);
        }
    }

    auto p0 = init_params(cfg, 0);
    p0.set_zero();
    Vec e = {1.5, 5.0, 0.0};
    Vec x = {2.0, -1.0};
    CHECK(h_forward(p0, tree, x, e, 10.0) ==
          doctest::Approx(eval_smooth_lower(tree, x, e, 10.0) - std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("h_gradient_x: constant-net circle fixture") {
    auto sys = make_double_integrator();
    auto tree = build_tree(2, 3, circle_spec({0, 1}, {1, 2}, 0));
    ModelConfig cfg = small_config(sys, small_dist());
    auto p = init_params(cfg, 0);
    p.set_zero();
    Vec gx = h_gradient_x(p, tree, {2.0, 0.0}, {1.0, 0.0, 0.0}, 10.0);
    CHECK(gx[0] == 4.0);
    CHECK(gx[1] == 0.0);

    // dominant branch of a min: gradient concentrates there
    auto wide = build_tree(2, 0,
                           min_spec({halfspace_lower_spec(0, 0.0), halfspace_upper_spec(0, 90.0),
                                     halfspace_upper_spec(1, 80.0)}));
    auto q = init_params(ModelConfig{2, 2, 4}, 1);
    q.set_zero();
    Vec gd = h_gradient_x(q, wide, {1.0, 0.0}, {}, 10.0);
    CHECK(gd[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::fabs(gd[1]) <= 1e-6);
}

TEST_CASE("h_gradient_x matches central differences") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto dist = small_dist();
    auto cfg = small_config(sys, dist, 4, 20);
    std::mt19937_64 g(13);
    int checked = 0;
    for (std::uint64_t s = 0; s < 4; ++s) {
        auto p = init_params(cfg, s);
        for (int rep = 0; rep < 250; ++rep) {
            Vec e = {uniform(g, 1.0, 2.0), uniform(g, 2.0, 8.0), uniform(g, -3.0, 3.0)};
            Vec x = {uniform(g, -1, 11), uniform(g, -6, 6)};
            double beta = uniform(g, 2.0, 50.0);
            Vec gx = h_gradient_x(p, tree, x, e, beta);
            for (int d = 0; d < 2; ++d) {
                // fixed step: scaling it by |x| inflates truncation error of
                // the sharply curved LSE surface at high beta
                const double h0 = 1e-5;
                Vec xp = x, xm = x;
                xp[d] += h0;
                xm[d] -= h0;
                const double fd =
                    (h_forward(p, tree, xp, e, beta) - h_forward(p, tree, xm, e, beta)) /
                    (2.0 * h0);
                CHECK(std::fabs(gx[d] - fd) <=
                      1e-6 * std::max({1.0, std::fabs(gx[d]), std::fabs(fd)}));
                ++checked;
            }
        }
    }
    CHECK(checked == 2000);
}

TEST_CASE("loss gradient matches parameter-wise finite differences") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto dist = small_dist();
    auto cfg = small_config(sys, dist);
    auto p = init_params(cfg, 11);

    // hand-picked joint samples away from branch ties: mix of interior-safe
    // and inside-obstacle states so both residual branches and the violation
    // path are exercised
    Mat batch(6, 5);
    const double rows[6][5] = {
        {5.0, 0.5, 1.2, 5.0, 0.0},   // near the disc, safe
        {5.0, 0.2, 1.5, 5.2, 0.3},   // inside the disc: c very negative
        {9.0, -2.0, 1.0, 3.0, -1.0}, // safe box interior
        {0.5, 4.0, 1.3, 7.0, 2.0},   // near box edge, moving up
        {4.4, 0.1, 1.8, 4.6, 0.2},   // deep inside the disc
        {-0.5, -5.5, 1.0, 5.0, 0.0}, // outside the safe box
    };
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) batch(i, j) = rows[i][j];

    // confirm the fixture hits all three branch combinations and sits away
    // from the ties the envelope treatment pins
    bool saw_delta_branch = false, saw_ham_branch = false, saw_violation = false;
    for (int i = 0; i < 6; ++i) {
        Vec x = {batch(i, 0), batch(i, 1)};
        Vec e = {batch(i, 2), batch(i, 3), batch(i, 4)};
        auto ev = eval_sample(p, sys, tree, x, e, 1.0, 10.0);
        CHECK(std::fabs(ev.delta - ev.i_gamma) > 1e-3);
        CHECK(std::fabs(ev.i_gamma) > 1e-3);
        (ev.delta <= ev.i_gamma ? saw_delta_branch : saw_ham_branch) = true;
        if (ev.violation > 0.0) saw_violation = true;
    }
    CHECK(saw_delta_branch);
    CHECK(saw_ham_branch);
    CHECK(saw_violation);

    auto fd_check = [&](const LossSpec& spec) {
        ParamGradient grad;
        const LossValue lv = loss_param_gradient(p, batch, spec, sys, tree, grad);
        CHECK(lv.total == doctest::Approx(lv.hj + spec.lambda * lv.cbf).epsilon(1e-15));
        auto views = tensor_views(p);
        auto gviews = tensor_views(grad);
        for (std::size_t t = 0; t < views.size(); ++t) {
            for (std::size_t i = 0; i < views[t].second; ++i) {
                double* slot = views[t].first + i;
                const double orig = *slot;
                const double step = 1e-5 * std::max(1.0, std::fabs(orig));
                *slot = orig + step;
                const double lp = loss_at(p, batch, spec, sys, tree);
                *slot = orig - step;
                const double lm = loss_at(p, batch, spec, sys, tree);
                *slot = orig;
                const double fd = (lp - lm) / (2.0 * step);
                const double an = gviews[t].first[i];
                if (std::fabs(an) < 1e-8 && std::fabs(fd) < 1e-8)
                    CHECK(std::fabs(an - fd) <= 1e-8);
                else
                    CHECK(std::fabs(an - fd) <= 1e-5 * std::max(std::fabs(an), std::fabs(fd)));
            }
        }
    };

    SUBCASE("hj term alone") { fd_check({1.0, 0.0, 10.0}); }
    SUBCASE("combined, which by linearity also pins the cbf term") {
        fd_check({1.0, 1.0, 10.0});
        fd_check({0.7, 2.5, 8.0});
    }
    SUBCASE("reshaped output: sharpness rides through both derivative orders") {
        auto cfgs = cfg;
        cfgs.out_sharpness = 0.35;
        p = init_params(cfgs, 11);
        // the fixture must stay clear of branch ties under the new shaping
        for (int i = 0; i < 6; ++i) {
            Vec x = {batch(i, 0), batch(i, 1)};
            Vec e = {batch(i, 2), batch(i, 3), batch(i, 4)};
            auto ev = eval_sample(p, sys, tree, x, e, 1.0, 10.0);
            CHECK(std::fabs(ev.delta - ev.i_gamma) > 1e-3);
            CHECK(std::fabs(ev.i_gamma) > 1e-3);
        }
        fd_check({1.0, 1.0, 10.0});
    }
}

TEST_CASE("branch isolation: min at the delta branch reduces to grad of delta^2") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto cfg = small_config(sys, small_dist());
    auto p = init_params(cfg, 4);

    // interior-safe, slow state: i_gamma ~ gamma*h is large, min picks delta
    Vec x = {5.0, 0.1};
    Vec e = {1.0, 8.0, -2.5};
    auto ev = eval_sample(p, sys, tree, x, e, 1.0, 10.0);
    REQUIRE(ev.delta < ev.i_gamma - 1e-3);
    REQUIRE(ev.i_gamma > 1e-3);

    Mat batch(1, 5);
    for (int j = 0; j < 2; ++j) batch(0, j) = x[j];
    for (int j = 0; j < 3; ++j) batch(0, 2 + j) = e[j];
    ParamGradient grad;
    loss_param_gradient(p, batch, {1.0, 0.0, 10.0}, sys, tree, grad);

    Vec xi = {x[0], x[1], e[0], e[1], e[2]};
    auto views = tensor_views(p);
    auto gviews = tensor_views(grad);
    for (std::size_t t = 0; t < views.size(); ++t) {
        for (std::size_t i = 0; i < views[t].second; ++i) {
            double* slot = views[t].first + i;
            const double orig = *slot;
            const double step = 1e-5 * std::max(1.0, std::fabs(orig));
            *slot = orig + step;
            const double dp = delta_forward(p, xi);
            *slot = orig - step;
            const double dm = delta_forward(p, xi);
            *slot = orig;
            const double fd = (dp * dp - dm * dm) / (2.0 * step);
            const double an = gviews[t].first[i];
            if (std::fabs(an) < 1e-8 && std::fabs(fd) < 1e-8)
                CHECK(std::fabs(an - fd) <= 1e-8);
            else
                CHECK(std::fabs(an - fd) <= 1e-5 * std::max(std::fabs(an), std::fabs(fd)));
        }
    }
}

TEST_CASE("mean reduction and repeatability") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto cfg = small_config(sys, small_dist());
    auto p = init_params(cfg, 9);
    LossSpec spec{1.0, 1.0, 10.0};

    Mat one(1, 5);
    const double xi[5] = {4.0, 1.0, 1.4, 5.0, 0.5};
    for (int j = 0; j < 5; ++j) one(0, j) = xi[j];
    Mat two(2, 5);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 5; ++j) two(i, j) = xi[j];

    ParamGradient g1, g2;
    auto l1 = loss_param_gradient(p, one, spec, sys, tree, g1);
    auto l2 = loss_param_gradient(p, two, spec, sys, tree, g2);
    CHECK(l1.total == l2.total);
    CHECK(l1.hj == l2.hj);
    CHECK(l1.cbf == l2.cbf);
    auto v1 = tensor_views(g1), v2 = tensor_views(g2);
    // fused multiply-accumulate rounds (g + g) once per entry, so doubling
    // then halving may differ from the single-sample gradient by one ulp
    for (std::size_t t = 0; t < v1.size(); ++t)
        for (std::size_t i = 0; i < v1[t].second; ++i) {
            const double a = v1[t].first[i], b = v2[t].first[i];
            CHECK(std::fabs(a - b) <= 1e-14 * std::max({1.0, std::fabs(a), std::fabs(b)}));
        }

    // value-only and value+gradient paths agree exactly
    std::mt19937_64 g(3);
    Mat batch(300, 5);
    for (std::size_t i = 0; i < 300; ++i) {
        batch(i, 0) = uniform(g, -1, 11);
        batch(i, 1) = uniform(g, -6, 6);
        batch(i, 2) = uniform(g, 1, 2);
        batch(i, 3) = uniform(g, 2, 8);
        batch(i, 4) = uniform(g, -3, 3);
    }
    ParamGradient g3;
    auto a = loss_param_gradient(p, batch, spec, sys, tree, g3);
    auto b = batch_loss(p, batch, spec, sys, tree);
    CHECK(a.total == b.total);
    CHECK(a.hj == b.hj);
    CHECK(a.cbf == b.cbf);
    CHECK(a.total > 0.0);

    // residual never exceeds delta under the subtraction parameterization
    for (int i = 0; i < 50; ++i) {
        Vec x = {batch(i, 0), batch(i, 1)};
        Vec e = {batch(i, 2), batch(i, 3), batch(i, 4)};
        auto ev = eval_sample(p, sys, tree, x, e, 1.0, 10.0);
        CHECK(ev.residual <= ev.delta);
        CHECK(ev.violation >= 0.0);
        CHECK(ev.h == ev.c_lower - ev.delta);
    }
}

TEST_CASE("non-finite parameters abort with a sample diagnostic") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto cfg = small_config(sys, small_dist());
    auto p = init_params(cfg, 1);
    p.W[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    Mat batch(1, 5);
    batch(0, 0) = 5.0;
    batch(0, 1) = 0.0;
    batch(0, 2) = 1.5;
    batch(0, 3) = 5.0;
    batch(0, 4) = 0.0;
    ParamGradient grad;
    CHECK_THROWS_WITH_AS(loss_param_gradient(p, batch, {1.0, 1.0, 10.0}, sys, tree, grad),
                         doctest::Contains("sample 0"), std::runtime_error);
}

TEST_CASE("input normalization spans domain and environment ranges") {
    auto sys = make_double_integrator();
    EnvDistribution dist{{1.0, 3.0, 3.0}, {2.0, 3.0, 9.0}};
    auto [c, h] = input_normalization(sys, dist);
    REQUIRE(c.size() == 5);
    CHECK(c[0] == 5.0);
    CHECK(h[0] == 6.0);
    CHECK(c[1] == 0.0);
    CHECK(h[1] == 6.0);
    CHECK(c[2] == 1.5);
    CHECK(h[2] == 0.5);
    CHECK(c[3] == 3.0);
    CHECK(h[3] == 1.0);  // degenerate range
    CHECK(c[4] == 6.0);
    CHECK(h[4] == 3.0);

    auto cfg = small_config(sys, dist);
    auto p = init_params(cfg, 0);
    CHECK(p.in_center == c);
    CHECK(p.in_half == h);
}

TEST_CASE("batch validation errors") {
    auto sys = make_double_integrator();
    auto tree = small_tree();
    auto cfg = small_config(sys, small_dist());
    auto p = init_params(cfg, 0);
    ParamGradient g;
    Mat empty(0, 5), narrow(3, 4);
    CHECK_THROWS_AS(loss_param_gradient(p, empty, {1, 1, 10}, sys, tree, g),
                    std::invalid_argument);
    CHECK_THROWS_AS(loss_param_gradient(p, narrow, {1, 1, 10}, sys, tree, g),
                    std::invalid_argument);
    Mat ok(1, 5);
    CHECK_THROWS_AS(loss_param_gradient(p, ok, {0.0, 1, 10}, sys, tree, g),
                    std::invalid_argument);
}

}  // TEST_SUITE
