#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbfkit/config.hpp"
#include "cbfkit/environment.hpp"
#include "cbfkit/filter.hpp"
#include "cbfkit/network.hpp"
#include "cbfkit/systems.hpp"

namespace cbfkit {

// Scripted obstacle motion: e(t) interpolates linearly between knots and
// holds the first/last value outside the knot range. Knot-wise positive radii
// stay positive in between because the interpolation is linear.
struct MotionScript {
    Vec times;                // strictly increasing, at least one knot
    std::vector<Vec> values;  // one parameter vector per knot
    Vec at(double t) const;
};

struct ControllerSpec {
    std::string type = "pd";          // "pd" (1 input) or "unicycle" (2 inputs)
    double kp = 1.0, kd = 2.0;        // pd gains
    double k_omega = 2.0, k_v = 1.0;  // unicycle gains
};

// One closed-loop run description (the `simulate --scenario` file).
struct Scenario {
    SystemSpec system;
    std::string checkpoint;  // path to the trained model
    int param_dim = 0;
    TreeSpec tree;
    MotionScript motion;
    Vec start;    // initial state
    Vec target;   // pd: scalar position target; unicycle: (x, y)
    ControllerSpec controller;
    double dt = 0.01;
    long horizon = 2000;
    double gamma = 1.0;  // barrier decay rate used by the filter
    double beta = 10.0;  // smooth-min sharpness used by the filter
    std::uint64_t seed = 0;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_text(const Scenario& sc);

// Shape/positivity checks against the instantiated system and tree; throws
// std::invalid_argument naming the offending field.
void validate_scenario(const Scenario& sc, const ControlAffineSystem& sys,
                       const ConstraintTree& tree);

struct StepRecord {
    double t = 0.0;
    Vec x;
    Vec u_ref, u_safe;
    FilterStatus status = FilterStatus::optimal;
    double h = 0.0;  // learned barrier at (x, e)
    double c = 0.0;  // exact constraint at (x, e)
    Vec e;
};

struct Trajectory {
    std::vector<StepRecord> records;  // one per executed step, t = k*dt
    Vec final_state;                  // state after the last executed step
    bool aborted = false;             // integration blew up; partial records kept
};

// Closed loop: e(t) from the script, reference from the configured
// controller, safety filter with the instantaneous e, then one RK4 step with
// the filtered input held. Deterministic.
Trajectory simulate(const Scenario& sc, const MlpParams& params);

// t,x*,uref*,usafe*,status,h,c,e* rows, 17-significant-digit decimals;
// status is 0 when the QP was optimal, 1 when the fallback engaged.
std::string trajectory_to_csv(const Trajectory& traj);

// Two state coordinates sweep a rectangle; the rest stay at base_state.
struct GridAxes {
    int dim0 = 0, dim1 = 1;
    double lo0 = 0.0, hi0 = 1.0;
    double lo1 = 0.0, hi1 = 1.0;
    std::size_t n0 = 2, n1 = 2;
    Vec base_state;  // one entry per state dim; dim0/dim1 slots ignored
};

// Endpoint-inclusive node coordinate; bitwise-reproducible so a 2x refined
// grid hits coarse nodes exactly.
double grid_coord(double lo, double hi, std::size_t i, std::size_t n);

struct GridReport {
    GridAxes axes;
    Vec h, c;  // row-major, index = i0 * n1 + i1
};

// h_forward and eval_constraint at every node, parallel over rows with
// deterministic output.
GridReport eval_grid(const MlpParams& params, const ConstraintTree& tree, const Vec& e,
                     const GridAxes& axes, double beta);

// Header exactly "x0,x1,h,c"; rows in row-major node order.
std::string grid_to_csv(const GridReport& g);

// Discretized fixed-point iteration for the maximal control invariant subset
// of {c >= 0} on a 2-state system: B0 = c, then
//   B <- min(c, B + dt*(max_u grad B . (f + g u) + gamma*B))
// with per-input-vertex upwind differences (Jacobi sweeps, read old write
// new). Values are floored at min(0, min c over the grid), which pins the
// divergent strictly-unsafe region without touching any sign. The grid must
// extend past the safe box: the negative constraint values in the margin are
// the boundary data that carve the kernel (a grid that stops at the box edge
// has nothing negative to propagate and reports the whole box).
struct KernelGrid {
    GridAxes axes;
    Vec values;                      // fixed-point B at nodes, row-major
    std::vector<std::uint8_t> mask;  // values >= 0
    Vec c;                           // exact constraint at nodes
    bool converged = false;
    double final_delta = 0.0;  // last max |update|
    std::size_t iters = 0;
};

// dt <= 0 picks the largest step passing the stability bound
// dt*(gamma + sum_d |w_d|/h_d) <= 0.9 over all nodes and input vertices; an
// explicit dt beyond the bound throws. Stops when the max update drops below
// tol (converged) or after max_iters (reported, not thrown).
KernelGrid grid_viability_kernel(const ControlAffineSystem& sys, const ConstraintTree& tree,
                                 const Vec& e, const GridAxes& axes, double gamma, double dt,
                                 std::size_t max_iters, double tol);

}  // namespace cbfkit
