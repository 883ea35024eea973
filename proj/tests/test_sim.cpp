#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "cbfkit/sim.hpp"

using namespace cbfkit;

namespace {

const char* kScenarioJson = R"({
  "system": {"name": "double_integrator"},
  "checkpoint": "model.ckpt.json",
  "environment": {
    "param_dim": 3,
    "tree": {"kind": "min", "children": [
      {"kind": "circle", "position_dims": [0, 1], "center_slots": [1, 2], "radius_slot": 0},
      {"kind": "halfspace_lower", "dim": 0, "bound": 0.0},
      {"kind": "halfspace_upper", "dim": 0, "bound": 10.0},
      {"kind": "halfspace_lower", "dim": 1, "bound": -5.0},
      {"kind": "halfspace_upper", "dim": 1, "bound": 5.0}
    ]},
    "motion": {"times": [0.0, 10.0], "values": [[1.0, 2.0, -3.0], [1.5, 8.0, 3.0]]}
  },
  "start": [0.5, 0.0],
  "target": [9.0],
  "controller": {"type": "pd", "kp": 1.0, "kd": 2.0},
  "dt": 0.01,
  "horizon": 1500,
  "gamma": 1.0,
  "beta": 10.0,
  "seed": 7
})";

// corridor-only double integrator tree, no parameters
TreeSpec box_tree() {
    return min_spec({halfspace_lower_spec(0, 0.0), halfspace_upper_spec(0, 10.0),
                     halfspace_lower_spec(1, -5.0), halfspace_upper_spec(1, 5.0)});
}

MlpParams zero_params(int input_dim) {
    ModelConfig cfg;
    cfg.input_dim = input_dim;
    cfg.in_center.assign(static_cast<std::size_t>(input_dim), 0.0);
    cfg.in_half.assign(static_cast<std::size_t>(input_dim), 1.0);
    MlpParams p = init_params(cfg, 1);
    for (auto& W : p.W) W.fill(0.0);
    for (auto& b : p.b) b.assign(b.size(), 0.0);
    return p;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char ch : s)
        if (ch == '\n') ++n;
    return n;
}

bool in_analytic_kernel(double x, double v) {
    if (x < 0.0 || x > 10.0 || v < -5.0 || v > 5.0) return false;
    if (v > 0.0 && x > 10.0 - v * v / 2.0) return false;
    if (v < 0.0 && x < v * v / 2.0) return false;
    return true;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("motion script interpolates linearly and holds the ends") {
    MotionScript ms;
    ms.times = {1.0, 3.0, 7.0};
    ms.values = {{0.0, 10.0}, {4.0, 10.0}, {4.0, -6.0}};
    CHECK(ms.at(-2.0) == Vec{0.0, 10.0});
    CHECK(ms.at(1.0) == Vec{0.0, 10.0});
    CHECK(ms.at(2.0) == Vec{2.0, 10.0});
    CHECK(ms.at(5.0) == Vec{4.0, 2.0});
    CHECK(ms.at(7.0) == Vec{4.0, -6.0});
    CHECK(ms.at(100.0) == Vec{4.0, -6.0});

    MotionScript still;
    still.times = {0.0};
    still.values = {{2.5}};
    CHECK(still.at(17.0) == Vec{2.5});
}

TEST_CASE("scenario round trips through json") {
    const Scenario sc = parse_scenario(kScenarioJson);
    CHECK(sc.system.name == "double_integrator");
    CHECK(sc.checkpoint == "model.ckpt.json");
    CHECK(sc.param_dim == 3);
    CHECK(sc.motion.times == Vec{0.0, 10.0});
    CHECK(sc.motion.values.size() == 2);
    CHECK(sc.motion.values[1] == Vec{1.5, 8.0, 3.0});
    CHECK(sc.start == Vec{0.5, 0.0});
    CHECK(sc.target == Vec{9.0});
    CHECK(sc.controller.type == "pd");
    CHECK(sc.controller.kd == 2.0);
    CHECK(sc.dt == 0.01);
    CHECK(sc.horizon == 1500);
    CHECK(sc.gamma == 1.0);
    CHECK(sc.beta == 10.0);
    CHECK(sc.seed == 7);

    const Scenario rt = parse_scenario(scenario_to_text(sc));
    CHECK(rt.motion.values == sc.motion.values);
    CHECK(rt.start == sc.start);
    CHECK(rt.controller.kp == sc.controller.kp);
    CHECK(rt.horizon == sc.horizon);
    // the parsed tree matches the original probe for probe
    const auto sys = instantiate_system(rt.system);
    const auto tree = build_tree(sys.state_dim, rt.param_dim, rt.tree);
    const auto tree0 = build_tree(2, 3, parse_scenario(kScenarioJson).tree);
    const Vec x = {3.0, 1.0}, e = {1.5, 4.0, 0.5};
    CHECK(eval_constraint(tree, x, e) == eval_constraint(tree0, x, e));

    validate_scenario(rt, sys, tree);
}

TEST_CASE("scenario validation names the offending field") {
    auto expect_fail = [&](const char* mutate_key, auto&& mutate, const char* needle) {
        Scenario sc = parse_scenario(kScenarioJson);
        mutate(sc);
        const auto sys = instantiate_system(sc.system);
        const auto tree = build_tree(sys.state_dim, sc.param_dim, sc.tree);
        CAPTURE(mutate_key);
        CHECK_THROWS_WITH_AS(validate_scenario(sc, sys, tree),
                             doctest::Contains(needle), std::invalid_argument);
    };
    expect_fail("dt", [](Scenario& sc) { sc.dt = 0.0; }, "scenario.dt");
    expect_fail("horizon", [](Scenario& sc) { sc.horizon = 0; }, "scenario.horizon");
    expect_fail("gamma", [](Scenario& sc) { sc.gamma = -1.0; }, "scenario.gamma");
    expect_fail("start", [](Scenario& sc) { sc.start = {1.0}; }, "scenario.start");
    expect_fail("target", [](Scenario& sc) { sc.target = {1.0, 2.0}; }, "scenario.target");
    expect_fail("type", [](Scenario& sc) { sc.controller.type = "lqr"; },
                "scenario.controller.type");
    expect_fail("times", [](Scenario& sc) { sc.motion.times = {0.0, 0.0}; },
                "must increase strictly");
    expect_fail("values", [](Scenario& sc) { sc.motion.values[0] = {1.0}; },
                "one entry per environment parameter");
    expect_fail("radius", [](Scenario& sc) { sc.motion.values[1][0] = 0.0; },
                "must stay positive");

    CHECK_THROWS_WITH_AS(parse_scenario("{\"system\": {\"name\": 3}}"),
                         doctest::Contains("scenario.system.name"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_scenario("not json"), doctest::Contains("scenario"),
                         std::invalid_argument);
}

TEST_CASE("equilibrium scenario stays put with constant h") {
    Scenario sc = parse_scenario(kScenarioJson);
    sc.motion.times = {0.0};
    sc.motion.values = {{1.0, 8.0, 3.0}};  // disc far from the resting point
    sc.start = {5.0, 0.0};
    sc.target = {5.0};
    sc.controller.kp = 0.0;
    sc.controller.kd = 0.0;
    sc.horizon = 50;

    const MlpParams p = zero_params(5);
    const Trajectory traj = simulate(sc, p);
    REQUIRE(!traj.aborted);
    REQUIRE(traj.records.size() == 50);
    for (std::size_t k = 0; k < traj.records.size(); ++k) {
        const auto& r = traj.records[k];
        CHECK(r.t == static_cast<double>(k) * sc.dt);
        CHECK(r.x == sc.start);
        CHECK(r.u_ref == Vec{0.0});
        CHECK(r.u_safe == Vec{0.0});
        CHECK(r.status == FilterStatus::optimal);
        CHECK(r.h == traj.records[0].h);
        CHECK(r.c == traj.records[0].c);
    }
    CHECK(traj.final_state == sc.start);
    CHECK(traj.records[0].h > 0.0);
}

TEST_CASE("conservative closed loop brakes before the wall") {
    // untrained (all-zero) weights make h the smoothed constraint minus log 2:
    // a valid, conservative barrier wherever it is positive. Starting inside
    // that region and driving hard at a target past the wall must still leave
    // the exact constraint nonnegative at every step.
    Scenario sc = parse_scenario(kScenarioJson);
    sc.param_dim = 0;
    sc.tree = box_tree();
    sc.motion.times = {0.0};
    sc.motion.values = {{}};
    sc.start = {2.0, 0.0};
    sc.target = {9.5};
    sc.horizon = 2000;

    const Trajectory traj = simulate(sc, zero_params(2));
    REQUIRE(!traj.aborted);
    REQUIRE(traj.records.size() == 2000);
    double cmin = 1e300, xmax = -1e300;
    for (const auto& r : traj.records) {
        cmin = std::min(cmin, r.c);
        xmax = std::max(xmax, r.x[0]);
        CHECK(r.u_safe[0] >= -1.0);
        CHECK(r.u_safe[0] <= 1.0);
    }
    const auto sys = instantiate_system(sc.system);
    const auto tree = build_tree(2, 0, sc.tree);
    cmin = std::min(cmin, eval_constraint(tree, traj.final_state, {}));
    CHECK(cmin >= -1e-6);
    CHECK(xmax > 5.0);     // made real progress toward the target
    CHECK(xmax < 10.0);    // never crossed the wall
    CHECK(traj.records.back().x[1] < 0.5);  // settled, not still charging
}

TEST_CASE("integration blow-up aborts with the partial trace kept") {
    Scenario sc = parse_scenario(kScenarioJson);
    sc.param_dim = 0;
    sc.tree = box_tree();
    sc.motion.times = {0.0};
    sc.motion.values = {{}};
    sc.start = {5.0, 0.5};
    sc.target = {9.0};
    sc.dt = 1e308;
    sc.horizon = 5;

    const Trajectory traj = simulate(sc, zero_params(2));
    CHECK(traj.aborted);
    CHECK(traj.records.size() == 1);
    CHECK(traj.final_state == sc.start);
}

TEST_CASE("trajectory csv is deterministic and well formed") {
    Scenario sc = parse_scenario(kScenarioJson);
    sc.horizon = 40;
    const MlpParams p = zero_params(5);
    const std::string csv1 = trajectory_to_csv(simulate(sc, p));
    const std::string csv2 = trajectory_to_csv(simulate(sc, p));
    CHECK(csv1 == csv2);
    CHECK(count_lines(csv1) == 41);
    CHECK(csv1.substr(0, csv1.find('\n')) ==
          "t,x0,x1,uref0,usafe0,status,h,c,e0,e1,e2");
    // first row starts at t=0 with the scenario start state
    const std::string row = csv1.substr(csv1.find('\n') + 1);
    CHECK(row.substr(0, 10) == "0,0.5,0,8.");  // t, x0, x1, uref0 = kp*(9-0.5)
}

TEST_CASE("grid evaluation matches the constant-delta fixture") {
    const TreeSpec circle = circle_spec({0, 1}, {1, 2}, 0);
    const auto tree = build_tree(2, 3, circle);
    const MlpParams p = zero_params(5);
    const Vec e = {1.0, 0.5, 0.5};
    GridAxes axes;
    axes.lo0 = -1.0;
    axes.hi0 = 1.0;
    axes.lo1 = -1.0;
    axes.hi1 = 1.0;
    axes.n0 = 2;
    axes.n1 = 2;
    axes.base_state = {0.0, 0.0};
    const GridReport g = eval_grid(p, tree, e, axes, 10.0);
    REQUIRE(g.h.size() == 4);
    const double log2 = std::log(2.0);
    for (std::size_t i0 = 0; i0 < 2; ++i0)
        for (std::size_t i1 = 0; i1 < 2; ++i1) {
            const Vec x = {grid_coord(-1.0, 1.0, i0, 2), grid_coord(-1.0, 1.0, i1, 2)};
            const std::size_t idx = i0 * 2 + i1;
            CHECK(g.h[idx] == doctest::Approx(eval_smooth_lower(tree, x, e, 10.0) - log2)
                                  .epsilon(1e-12));
            CHECK(g.c[idx] == eval_constraint(tree, x, e));
            CHECK(g.h[idx] <= g.c[idx]);
        }
}

TEST_CASE("grid refinement reproduces coarse nodes bitwise") {
    const auto tree = build_tree(2, 0, box_tree());
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.in_center = {5.0, 0.0};
    cfg.in_half = {6.0, 6.0};
    const MlpParams p = init_params(cfg, 99);  // random weights
    GridAxes coarse;
    coarse.lo0 = 0.0;
    coarse.hi0 = 10.0;
    coarse.lo1 = -5.0;
    coarse.hi1 = 5.0;
    coarse.n0 = 5;
    coarse.n1 = 4;
    coarse.base_state = {0.0, 0.0};
    GridAxes fine = coarse;
    fine.n0 = 9;   // 2*5 - 1
    fine.n1 = 7;   // 2*4 - 1
    const GridReport gc = eval_grid(p, tree, {}, coarse, 10.0);
    const GridReport gf = eval_grid(p, tree, {}, fine, 10.0);
    for (std::size_t i0 = 0; i0 < coarse.n0; ++i0)
        for (std::size_t i1 = 0; i1 < coarse.n1; ++i1)
            CHECK(gc.h[i0 * coarse.n1 + i1] == gf.h[(2 * i0) * fine.n1 + 2 * i1]);

    const std::string csv = grid_to_csv(gc);
    CHECK(csv.substr(0, 10) == "x0,x1,h,c\n");
    CHECK(count_lines(csv) == 21);

    GridAxes bad = coarse;
    bad.dim1 = 0;
    CHECK_THROWS_AS(eval_grid(p, tree, {}, bad, 10.0), std::invalid_argument);
    bad = coarse;
    bad.base_state = {0.0};
    CHECK_THROWS_AS(eval_grid(p, tree, {}, bad, 10.0), std::invalid_argument);
}

TEST_CASE("value iteration keeps already-invariant grids whole") {
    // driftless system, c > 0 on the whole grid: nothing ever leaves
    ControlAffineSystem sys;
    sys.name = "driftless";
    sys.state_dim = 2;
    sys.input_dim = 1;
    sys.drift = [](const double*, double* f) { f[0] = f[1] = 0.0; };
    sys.actuation = [](const double*, double* g) {
        g[0] = 0.0;
        g[1] = 1.0;
    };
    sys.input_lower = {-1.0};
    sys.input_upper = {1.0};
    sys.domain_lower = {0.0, -1.0};
    sys.domain_upper = {1.0, 1.0};
    const auto tree = build_tree(2, 0, halfspace_lower_spec(0, -100.0));
    GridAxes axes;
    axes.lo0 = 0.0;
    axes.hi0 = 1.0;
    axes.lo1 = -1.0;
    axes.hi1 = 1.0;
    axes.n0 = 21;
    axes.n1 = 21;
    const KernelGrid kg = grid_viability_kernel(sys, tree, {}, axes, 1.0, 0.0, 500, 1e-9);
    CHECK(kg.converged);
    CHECK(kg.iters == 1);
    for (std::size_t i = 0; i < kg.mask.size(); ++i) {
        CHECK(kg.mask[i] == 1);
        CHECK(kg.values[i] == kg.c[i]);
    }
}

TEST_CASE("value iteration empties a fully blocked grid") {
    const auto sys = make_double_integrator();
    const auto tree = build_tree(2, 3, circle_spec({0, 1}, {1, 2}, 0));
    GridAxes axes;
    axes.lo0 = 0.0;
    axes.hi0 = 10.0;
    axes.lo1 = -5.0;
    axes.hi1 = 5.0;
    axes.n0 = 31;
    axes.n1 = 31;
    const Vec e = {100.0, 5.0, 0.0};  // disc swallows the whole box
    const KernelGrid kg = grid_viability_kernel(sys, tree, e, axes, 1.0, 0.0, 200, 1e-9);
    for (std::size_t i = 0; i < kg.mask.size(); ++i) {
        CHECK(kg.mask[i] == 0);
        CHECK(kg.c[i] < 0.0);
    }
}

TEST_CASE("value iteration dominates its successor pointwise") {
    const auto sys = make_double_integrator();
    const auto tree = build_tree(2, 0, box_tree());
    GridAxes axes;
    axes.lo0 = 0.0;
    axes.hi0 = 10.0;
    axes.lo1 = -5.0;
    axes.hi1 = 5.0;
    axes.n0 = 41;
    axes.n1 = 41;
    KernelGrid prev = grid_viability_kernel(sys, tree, {}, axes, 1.0, 0.0, 1, 1e-12);
    for (std::size_t iters = 2; iters <= 8; ++iters) {
        const KernelGrid next = grid_viability_kernel(sys, tree, {}, axes, 1.0, 0.0, iters, 1e-12);
        REQUIRE(next.values.size() == prev.values.size());
        for (std::size_t i = 0; i < next.values.size(); ++i)
            CHECK(next.values[i] <= prev.values[i]);
        prev = next;
    }
}

TEST_CASE("value iteration recovers the braking parabola") {
    // one-unit margin all around: the negative constraint values outside the
    // box are the boundary data that carve the kernel
    const auto sys = make_double_integrator();
    const auto tree = build_tree(2, 0, box_tree());
    GridAxes axes;
    axes.lo0 = -1.0;
    axes.hi0 = 11.0;
    axes.lo1 = -6.0;
    axes.hi1 = 6.0;
    axes.n0 = 241;
    axes.n1 = 241;
    const KernelGrid kg = grid_viability_kernel(sys, tree, {}, axes, 1.0, 0.0, 20000, 1e-6);
    CHECK(kg.converged);

    // compare the 201x201 nodes spanning the box itself
    std::size_t agree = 0, inside_c = 0, box_nodes = 0;
    for (std::size_t i0 = 0; i0 < axes.n0; ++i0)
        for (std::size_t i1 = 0; i1 < axes.n1; ++i1) {
            const std::size_t idx = i0 * axes.n1 + i1;
            // soundness on every node: the kernel never pokes outside {c >= 0}
            if (kg.mask[idx] == 1) {
                REQUIRE(kg.c[idx] >= 0.0);
                ++inside_c;
            }
            if (i0 < 20 || i0 > 220 || i1 < 20 || i1 > 220) continue;
            ++box_nodes;
            const double x = grid_coord(axes.lo0, axes.hi0, i0, axes.n0);
            const double v = grid_coord(axes.lo1, axes.hi1, i1, axes.n1);
            if ((kg.mask[idx] == 1) == in_analytic_kernel(x, v)) ++agree;
        }
    REQUIRE(box_nodes == 201 * 201);
    const double frac = static_cast<double>(agree) / static_cast<double>(box_nodes);
    CAPTURE(frac);
    CAPTURE(kg.iters);
    CHECK(frac >= 0.98);
    CHECK(inside_c > 20000);  // a real kernel, not a degenerate empty mask
}

TEST_CASE("value iteration rejects bad arguments") {
    const auto di = make_double_integrator();
    const auto uni = make_unicycle();
    const auto tree = build_tree(2, 0, box_tree());
    const auto tree3 = build_tree(3, 0, halfspace_lower_spec(0, 0.0));
    GridAxes axes;
    axes.lo0 = 0.0;
    axes.hi0 = 10.0;
    axes.lo1 = -5.0;
    axes.hi1 = 5.0;
    axes.n0 = 11;
    axes.n1 = 11;
    CHECK_THROWS_AS(grid_viability_kernel(uni, tree3, {}, axes, 1.0, 0.0, 10, 1e-6),
                    std::invalid_argument);
    CHECK_THROWS_AS(grid_viability_kernel(di, tree, {}, axes, 0.0, 0.0, 10, 1e-6),
                    std::invalid_argument);
    CHECK_THROWS_AS(grid_viability_kernel(di, tree, {}, axes, 1.0, 0.0, 10, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(grid_viability_kernel(di, tree, {}, axes, 1.0, 0.0, 0, 1e-6),
                    std::invalid_argument);
    // a timestep past the stability bound is refused, the auto step is not
    CHECK_THROWS_WITH_AS(grid_viability_kernel(di, tree, {}, axes, 1.0, 1.0, 10, 1e-6),
                         doctest::Contains("stable step"), std::invalid_argument);
    CHECK_THROWS_AS(grid_viability_kernel(di, tree, {1.0}, axes, 1.0, 0.0, 10, 1e-6),
                    std::invalid_argument);
}

}  // TEST_SUITE
