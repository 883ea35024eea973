#include "cbfkit/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cbfkit/io.hpp"
#include "cbfkit/threading.hpp"
#include "serializers.hpp"

namespace cbfkit {

namespace ju = jsonutil;
using ju::json;

Vec MotionScript::at(double t) const {
    if (times.empty()) throw std::logic_error("motion script has no knots");
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    std::size_t k = 1;
    while (times[k] < t) ++k;
    const double ta = times[k - 1], tb = times[k];
    const double s = (t - ta) / (tb - ta);
    Vec out(values[k - 1].size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = values[k - 1][i] + s * (values[k][i] - values[k - 1][i]);
    return out;
}

namespace {

ControllerSpec controller_from_json(const json& j, const std::string& path) {
    ControllerSpec c;
    c.type = ju::str_or(j, "type", c.type, path);
    c.kp = ju::num_or(j, "kp", c.kp, path);
    c.kd = ju::num_or(j, "kd", c.kd, path);
    c.k_omega = ju::num_or(j, "k_omega", c.k_omega, path);
    c.k_v = ju::num_or(j, "k_v", c.k_v, path);
    return c;
}

bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
    const json j = ju::parse_text(json_text, "scenario");
    if (!j.is_object()) ju::fail("scenario", "expected an object");
    Scenario sc;
    sc.system = ju::system_from_json(ju::member(j, "system", "scenario"), "scenario.system");
    sc.checkpoint = ju::str_or(j, "checkpoint", "", "scenario");

    const json& env = ju::member(j, "environment", "scenario");
    const std::string ep = "scenario.environment";
    sc.param_dim = static_cast<int>(ju::as_int(ju::member(env, "param_dim", ep), ep + ".param_dim"));
    if (sc.param_dim < 0) ju::fail(ep + ".param_dim", "must be nonnegative");
    sc.tree = ju::tree_from_json(ju::member(env, "tree", ep), ep + ".tree");

    const json& mo = ju::member(env, "motion", ep);
    const std::string mp = ep + ".motion";
    sc.motion.times = ju::as_vec(ju::member(mo, "times", mp), mp + ".times");
    const json& vals = ju::member(mo, "values", mp);
    if (!vals.is_array()) ju::fail(mp + ".values", "expected an array of parameter vectors");
    for (std::size_t i = 0; i < vals.size(); ++i)
        sc.motion.values.push_back(
            ju::as_vec(vals[i], mp + ".values[" + std::to_string(i) + "]"));

    sc.start = ju::as_vec(ju::member(j, "start", "scenario"), "scenario.start");
    sc.target = ju::as_vec(ju::member(j, "target", "scenario"), "scenario.target");
    if (const json* c = ju::member_opt(j, "controller", "scenario"))
        sc.controller = controller_from_json(*c, "scenario.controller");
    sc.dt = ju::num_or(j, "dt", sc.dt, "scenario");
    sc.horizon = ju::int_or(j, "horizon", sc.horizon, "scenario");
    sc.gamma = ju::num_or(j, "gamma", sc.gamma, "scenario");
    sc.beta = ju::num_or(j, "beta", sc.beta, "scenario");
    const long seed = ju::int_or(j, "seed", 0, "scenario");
    if (seed < 0) ju::fail("scenario.seed", "must be nonnegative");
    sc.seed = static_cast<std::uint64_t>(seed);
    return sc;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path)); }

std::string scenario_to_text(const Scenario& sc) {
    json j;
    j["system"] = ju::system_to_json(sc.system);
    if (!sc.checkpoint.empty()) j["checkpoint"] = sc.checkpoint;
    json mo;
    mo["times"] = sc.motion.times;
    json vals = json::array();
    for (const auto& v : sc.motion.values) vals.push_back(v);
    mo["values"] = vals;
    j["environment"] = {
        {"param_dim", sc.param_dim}, {"tree", ju::tree_to_json(sc.tree)}, {"motion", mo}};
    j["start"] = sc.start;
    j["target"] = sc.target;
    j["controller"] = {{"type", sc.controller.type},
                       {"kp", sc.controller.kp},
                       {"kd", sc.controller.kd},
                       {"k_omega", sc.controller.k_omega},
                       {"k_v", sc.controller.k_v}};
    j["dt"] = sc.dt;
    j["horizon"] = sc.horizon;
    j["gamma"] = sc.gamma;
    j["beta"] = sc.beta;
    j["seed"] = sc.seed;
    return j.dump(2) + "\n";
}

void validate_scenario(const Scenario& sc, const ControlAffineSystem& sys,
                       const ConstraintTree& tree) {
    if (!(sc.dt > 0.0) || !std::isfinite(sc.dt)) ju::fail("scenario.dt", "must be positive");
    if (sc.horizon < 1) ju::fail("scenario.horizon", "must be at least 1");
    if (!(sc.gamma > 0.0)) ju::fail("scenario.gamma", "must be positive");
    if (!(sc.beta > 0.0)) ju::fail("scenario.beta", "must be positive");
    if (static_cast<int>(sc.start.size()) != sys.state_dim)
        ju::fail("scenario.start", "needs one entry per state dimension");
    if (!all_finite(sc.start)) ju::fail("scenario.start", "entries must be finite");
    if (!all_finite(sc.target)) ju::fail("scenario.target", "entries must be finite");

    if (sc.controller.type == "pd") {
        if (sys.state_dim != 2 || sys.input_dim != 1)
            ju::fail("scenario.controller.type", "pd drives a 2-state single-input system");
        if (sc.target.size() != 1)
            ju::fail("scenario.target", "pd expects a scalar position target");
    } else if (sc.controller.type == "unicycle") {
        if (sys.state_dim != 3 || sys.input_dim != 2)
            ju::fail("scenario.controller.type", "unicycle drives a 3-state 2-input system");
        if (sc.target.size() != 2)
            ju::fail("scenario.target", "unicycle expects an (x, y) target");
    } else {
        ju::fail("scenario.controller.type", "unknown controller '" + sc.controller.type + "'");
    }

    const auto& ms = sc.motion;
    if (ms.times.empty()) ju::fail("scenario.environment.motion.times", "needs at least one knot");
    if (ms.times.size() != ms.values.size())
        ju::fail("scenario.environment.motion", "times and values must pair up");
    for (std::size_t k = 0; k < ms.times.size(); ++k) {
        const std::string kp = "scenario.environment.motion.values[" + std::to_string(k) + "]";
        if (!std::isfinite(ms.times[k]))
            ju::fail("scenario.environment.motion.times", "entries must be finite");
        if (k > 0 && !(ms.times[k] > ms.times[k - 1]))
            ju::fail("scenario.environment.motion.times", "must increase strictly");
        if (static_cast<int>(ms.values[k].size()) != sc.param_dim)
            ju::fail(kp, "needs one entry per environment parameter");
        if (!all_finite(ms.values[k])) ju::fail(kp, "entries must be finite");
    }
    // linear interpolation keeps knot-positive radii positive over any horizon
    for (int slot : tree.radius_slots())
        for (std::size_t k = 0; k < ms.values.size(); ++k)
            if (!(ms.values[k][static_cast<std::size_t>(slot)] > 0.0))
                ju::fail("scenario.environment.motion.values[" + std::to_string(k) + "]",
                         "radius slot " + std::to_string(slot) + " must stay positive");
}

namespace {

Vec reference_control(const Scenario& sc, const Vec& x) {
    if (sc.controller.type == "pd")
        return {pd_controller(x, sc.target[0], sc.controller.kp, sc.controller.kd)};
    return unicycle_controller(x, sc.target, sc.controller.k_omega, sc.controller.k_v);
}

}  // namespace

Trajectory simulate(const Scenario& sc, const MlpParams& params) {
    const ControlAffineSystem sys = instantiate_system(sc.system);
    const ConstraintTree tree = build_tree(sys.state_dim, sc.param_dim, sc.tree);
    validate_scenario(sc, sys, tree);
    if (params.input_dim() != sys.state_dim + sc.param_dim)
        throw std::invalid_argument(
            "checkpoint input width does not match the scenario's state plus parameter dims");

    Trajectory out;
    out.records.reserve(static_cast<std::size_t>(sc.horizon));
    Vec x = sc.start;
    for (long k = 0; k < sc.horizon; ++k) {
        StepRecord rec;
        rec.t = static_cast<double>(k) * sc.dt;
        rec.x = x;
        rec.e = sc.motion.at(rec.t);
        try {
            rec.u_ref = reference_control(sc, x);
            const FilterDecision d =
                safety_filter(params, sys, tree, x, rec.e, rec.u_ref, sc.gamma, sc.beta);
            rec.u_safe = d.u;
            rec.status = d.status;
            rec.h = h_forward(params, tree, x, rec.e, sc.beta);
            rec.c = eval_constraint(tree, x, rec.e);
            out.records.push_back(rec);
            x = rk4_step(sys, x, d.u, sc.dt);
        } catch (const std::runtime_error&) {
            out.aborted = true;  // keep the partial trace; x stays at the last good state
            break;
        }
    }
    out.final_state = x;
    return out;
}

std::string trajectory_to_csv(const Trajectory& traj) {
    std::string s = "t";
    const std::size_t n = traj.records.empty() ? 0 : traj.records.front().x.size();
    const std::size_t m = traj.records.empty() ? 0 : traj.records.front().u_ref.size();
    const std::size_t p = traj.records.empty() ? 0 : traj.records.front().e.size();
    for (std::size_t i = 0; i < n; ++i) s += ",x" + std::to_string(i);
    for (std::size_t j = 0; j < m; ++j) s += ",uref" + std::to_string(j);
    for (std::size_t j = 0; j < m; ++j) s += ",usafe" + std::to_string(j);
    s += ",status,h,c";
    for (std::size_t i = 0; i < p; ++i) s += ",e" + std::to_string(i);
    s += "\n";
    for (const auto& r : traj.records) {
        s += format_double(r.t);
        for (double v : r.x) s += "," + format_double(v);
        for (double v : r.u_ref) s += "," + format_double(v);
        for (double v : r.u_safe) s += "," + format_double(v);
        s += r.status == FilterStatus::optimal ? ",0" : ",1";
        s += "," + format_double(r.h) + "," + format_double(r.c);
        for (double v : r.e) s += "," + format_double(v);
        s += "\n";
    }
    return s;
}

double grid_coord(double lo, double hi, std::size_t i, std::size_t n) {
    // (hi-lo)*i/(n-1) in this exact order: halving the spacing then doubling
    // the index reproduces the same value bitwise
    return n == 1 ? lo
                  : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

namespace {

void validate_axes(const GridAxes& axes, int state_dim) {
    if (axes.dim0 < 0 || axes.dim1 < 0 || axes.dim0 >= state_dim || axes.dim1 >= state_dim ||
        axes.dim0 == axes.dim1)
        throw std::invalid_argument("grid axes must name two distinct state dimensions");
    if (axes.n0 < 2 || axes.n1 < 2)
        throw std::invalid_argument("grid needs at least 2 nodes per axis");
    if (!(axes.hi0 > axes.lo0) || !(axes.hi1 > axes.lo1))
        throw std::invalid_argument("grid ranges must be nonempty");
    if (static_cast<int>(axes.base_state.size()) != state_dim)
        throw std::invalid_argument("grid base state needs one entry per state dimension");
}

}  // namespace

GridReport eval_grid(const MlpParams& params, const ConstraintTree& tree, const Vec& e,
                     const GridAxes& axes, double beta) {
    validate_axes(axes, tree.n_x);
    validate_env(tree, e);
    if (params.input_dim() != tree.n_x + tree.n_e)
        throw std::invalid_argument("model input width does not match the constraint tree");
    GridReport g;
    g.axes = axes;
    const std::size_t total = axes.n0 * axes.n1;
    g.h.resize(total);
    g.c.resize(total);
    parallel_blocks(axes.n0, [&](std::size_t i0) {
        Vec x = axes.base_state;
        x[static_cast<std::size_t>(axes.dim0)] = grid_coord(axes.lo0, axes.hi0, i0, axes.n0);
        for (std::size_t i1 = 0; i1 < axes.n1; ++i1) {
            x[static_cast<std::size_t>(axes.dim1)] = grid_coord(axes.lo1, axes.hi1, i1, axes.n1);
            g.h[i0 * axes.n1 + i1] = h_forward(params, tree, x, e, beta);
            g.c[i0 * axes.n1 + i1] = eval_constraint(tree, x, e);
        }
    });
    return g;
}

std::string grid_to_csv(const GridReport& g) {
    std::string s = "x0,x1,h,c\n";
    for (std::size_t i0 = 0; i0 < g.axes.n0; ++i0) {
        const std::string c0 = format_double(grid_coord(g.axes.lo0, g.axes.hi0, i0, g.axes.n0));
        for (std::size_t i1 = 0; i1 < g.axes.n1; ++i1) {
            const std::size_t idx = i0 * g.axes.n1 + i1;
            s += c0 + "," + format_double(grid_coord(g.axes.lo1, g.axes.hi1, i1, g.axes.n1)) +
                 "," + format_double(g.h[idx]) + "," + format_double(g.c[idx]) + "\n";
        }
    }
    return s;
}

KernelGrid grid_viability_kernel(const ControlAffineSystem& sys, const ConstraintTree& tree,
                                 const Vec& e, const GridAxes& axes, double gamma, double dt,
                                 std::size_t max_iters, double tol) {
    if (sys.state_dim != 2)
        throw std::invalid_argument("the grid solver only covers 2-state systems");
    if (tree.n_x != 2) throw std::invalid_argument("constraint tree is not 2-state");
    if (axes.dim0 != 0 || axes.dim1 != 1)
        throw std::invalid_argument("the grid solver sweeps state dims 0 and 1");
    GridAxes ax = axes;
    ax.base_state.assign(2, 0.0);
    validate_axes(ax, 2);
    validate_env(tree, e);
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");

    const std::size_t n0 = ax.n0, n1 = ax.n1, total = n0 * n1;
    const double h0 = (ax.hi0 - ax.lo0) / static_cast<double>(n0 - 1);
    const double h1 = (ax.hi1 - ax.lo1) / static_cast<double>(n1 - 1);
    const int m = sys.input_dim;
    const std::size_t K = std::size_t{1} << m;

    KernelGrid kg;
    kg.axes = ax;
    kg.c.resize(total);
    // per-vertex closed-loop velocity fields are state-dependent only, so
    // they are computed once
    std::vector<Vec> w0(K, Vec(total)), w1(K, Vec(total));
    double rate_max = 0.0;
    {
        Vec x(2), f(2), G(static_cast<std::size_t>(2 * m)), u(static_cast<std::size_t>(m));
        for (std::size_t i0 = 0; i0 < n0; ++i0) {
            x[0] = grid_coord(ax.lo0, ax.hi0, i0, n0);
            for (std::size_t i1 = 0; i1 < n1; ++i1) {
                x[1] = grid_coord(ax.lo1, ax.hi1, i1, n1);
                const std::size_t idx = i0 * n1 + i1;
                kg.c[idx] = eval_constraint(tree, x.data(), e.data());
                sys.drift(x.data(), f.data());
                sys.actuation(x.data(), G.data());
                for (std::size_t k = 0; k < K; ++k) {
                    for (int j = 0; j < m; ++j)
                        u[static_cast<std::size_t>(j)] =
                            (k >> j) & 1 ? sys.input_upper[static_cast<std::size_t>(j)]
                                         : sys.input_lower[static_cast<std::size_t>(j)];
                    double a = f[0], b = f[1];
                    for (int j = 0; j < m; ++j) {
                        a += G[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(j)];
                        b += G[static_cast<std::size_t>(m + j)] * u[static_cast<std::size_t>(j)];
                    }
                    w0[k][idx] = a;
                    w1[k][idx] = b;
                    rate_max = std::max(rate_max,
                                        gamma + std::fabs(a) / h0 + std::fabs(b) / h1);
                }
            }
        }
    }
    const double dt_max = 0.9 / rate_max;
    if (dt <= 0.0)
        dt = dt_max;
    else if (dt > dt_max)
        throw std::invalid_argument("dt exceeds the stable step " + format_double(dt_max));

    double floor = 0.0;
    for (double v : kg.c) floor = std::min(floor, v);

    Vec B = kg.c, Bn(total);
    Vec row_delta(n0);
    for (kg.iters = 0; kg.iters < max_iters; ++kg.iters) {
        parallel_blocks(n0, [&](std::size_t i0) {
            double dmax = 0.0;
            for (std::size_t i1 = 0; i1 < n1; ++i1) {
                const std::size_t idx = i0 * n1 + i1;
                double ham = -1e300;
                for (std::size_t k = 0; k < K; ++k) {
                    const double a = w0[k][idx], b = w1[k][idx];
                    // upwind: difference toward where the vertex flow goes;
                    // zero-gradient fallback at the grid edge stays monotone
                    double d0 = 0.0, d1 = 0.0;
                    if (a > 0.0)
                        d0 = i0 + 1 < n0 ? (B[idx + n1] - B[idx]) / h0 : 0.0;
                    else if (a < 0.0)
                        d0 = i0 > 0 ? (B[idx] - B[idx - n1]) / h0 : 0.0;
                    if (b > 0.0)
                        d1 = i1 + 1 < n1 ? (B[idx + 1] - B[idx]) / h1 : 0.0;
                    else if (b < 0.0)
                        d1 = i1 > 0 ? (B[idx] - B[idx - 1]) / h1 : 0.0;
                    ham = std::max(ham, a * d0 + b * d1);
                }
                const double next =
                    std::max(floor, std::min(kg.c[idx], B[idx] + dt * (ham + gamma * B[idx])));
                Bn[idx] = next;
                dmax = std::max(dmax, std::fabs(next - B[idx]));
            }
            row_delta[i0] = dmax;
        });
        std::swap(B, Bn);
        kg.final_delta = 0.0;
        for (double d : row_delta) kg.final_delta = std::max(kg.final_delta, d);
        if (kg.final_delta < tol) {
            kg.converged = true;
            ++kg.iters;
            break;
        }
    }
    kg.values = std::move(B);
    kg.mask.resize(total);
    for (std::size_t i = 0; i < total; ++i) kg.mask[i] = kg.values[i] >= 0.0 ? 1 : 0;
    return kg;
}

}  // namespace cbfkit
