#include "cbfkit/filter.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cbfkit {

namespace {

constexpr double kFeasTol = 1e-9;
// matches the Hamiltonian vertex tie rule: zero-coefficient inputs sit at
// the lower bound
constexpr double kTieTol = 1e-12;

void validate_problem(const FilterProblem& prob) {
    const std::size_t m = prob.u_ref.size();
    if (m == 0) throw std::invalid_argument("empty input vector");
    if (prob.a.size() != m || prob.box_lo.size() != m || prob.box_hi.size() != m)
        throw std::invalid_argument("filter problem width mismatch");
    for (std::size_t j = 0; j < m; ++j) {
        if (!std::isfinite(prob.u_ref[j]) || !std::isfinite(prob.a[j]) ||
            !std::isfinite(prob.box_lo[j]) || !std::isfinite(prob.box_hi[j]))
            throw std::invalid_argument("non-finite filter problem entry");
        if (!(prob.box_lo[j] <= prob.box_hi[j]))
            throw std::invalid_argument("empty input box");
    }
    if (!std::isfinite(prob.b)) throw std::invalid_argument("non-finite filter problem entry");
}

double objective(const Vec& u, const Vec& u_ref) {
    double s = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double d = u[j] - u_ref[j];
        s += d * d;
    }
    return s;
}

bool feasible(const Vec& u, const FilterProblem& prob) {
    double au = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        if (u[j] < prob.box_lo[j] - kFeasTol || u[j] > prob.box_hi[j] + kFeasTol) return false;
        au += prob.a[j] * u[j];
    }
    return au >= prob.b - kFeasTol;
}

}  // namespace

FilterDecision solve_halfspace_box_qp(const FilterProblem& prob) {
    validate_problem(prob);
    const std::size_t m = prob.u_ref.size();

    // box maximizer of a'u: both the feasibility certificate and the
    // least-unsafe fallback
    Vec umax(m);
    double amax = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        umax[j] = prob.a[j] > kTieTol ? prob.box_hi[j] : prob.box_lo[j];
        amax += prob.a[j] * umax[j];
    }
    if (amax < prob.b) return {std::move(umax), FilterStatus::infeasible};

    // slack halfspace: the box projection is already optimal
    Vec best(m);
    double au = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        best[j] = std::min(prob.box_hi[j], std::max(prob.box_lo[j], prob.u_ref[j]));
        au += prob.a[j] * best[j];
    }
    if (au >= prob.b) return {std::move(best), FilterStatus::optimal};

    // otherwise the halfspace is active at the optimum; enumerate every
    // lo/hi/free assignment and keep the best feasible candidate
    double best_obj = std::numeric_limits<double>::infinity();
    bool found = false;
    std::size_t faces = 1;
    for (std::size_t j = 0; j < m; ++j) faces *= 3;
    Vec u(m);
    for (std::size_t code = 0; code < faces; ++code) {
        std::size_t rem = code;
        double pinned = 0.0, proj = 0.0, na2 = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t state = rem % 3;
            rem /= 3;
            if (state == 0) {
                u[j] = prob.u_ref[j];
                proj += prob.a[j] * prob.u_ref[j];
                na2 += prob.a[j] * prob.a[j];
            } else {
                u[j] = state == 1 ? prob.box_lo[j] : prob.box_hi[j];
                pinned += prob.a[j] * u[j];
            }
        }
        if (na2 > 0.0) {
            const double mu = (prob.b - pinned - proj) / na2;
            std::size_t rem2 = code;
            for (std::size_t j = 0; j < m; ++j) {
                if (rem2 % 3 == 0) u[j] = prob.u_ref[j] + mu * prob.a[j];
                rem2 /= 3;
            }
        }
        if (!feasible(u, prob)) continue;
        const double obj = objective(u, prob.u_ref);
        if (obj < best_obj) {
            best_obj = obj;
            best = u;
            found = true;
        }
    }
    // umax is itself an enumerated, feasible candidate whenever amax >= b
    if (!found) throw std::logic_error("halfspace-box qp missed a nonempty feasible set");
    for (std::size_t j = 0; j < m; ++j)
        best[j] = std::min(prob.box_hi[j], std::max(prob.box_lo[j], best[j]));
    return {std::move(best), FilterStatus::optimal};
}

FilterDecision safety_filter(const MlpParams& p, const ControlAffineSystem& sys,
                             const ConstraintTree& tree, const Vec& x, const Vec& e,
                             const Vec& u_ref, double gamma, double beta) {
    if (static_cast<int>(u_ref.size()) != sys.input_dim)
        throw std::invalid_argument("reference input width does not match the system");
    SampleEval ev = eval_sample(p, sys, tree, x, e, gamma, beta);

    const int n = sys.state_dim, m = sys.input_dim;
    Vec f(n), G(static_cast<std::size_t>(n) * m);
    sys.drift(x.data(), f.data());
    sys.actuation(x.data(), G.data());

    FilterProblem prob;
    prob.u_ref = u_ref;
    prob.a.assign(m, 0.0);
    double gf = 0.0;
    for (int i = 0; i < n; ++i) {
        gf += ev.grad_x_h[i] * f[i];
        for (int j = 0; j < m; ++j) prob.a[j] += ev.grad_x_h[i] * G[i * m + j];
    }
    prob.b = -gf - gamma * ev.h;
    prob.box_lo = sys.input_lower;
    prob.box_hi = sys.input_upper;
    return solve_halfspace_box_qp(prob);
}

double pd_controller(const Vec& x, double target, double kp, double kd) {
    if (x.size() != 2) throw std::invalid_argument("pd controller expects (position, velocity)");
    return kp * (target - x[0]) - kd * x[1];
}

Vec unicycle_controller(const Vec& state, const Vec& target, double k_omega, double k_v) {
    if (state.size() != 3 || target.size() != 2)
        throw std::invalid_argument("unicycle controller expects (x, y, psi) and (x_f, y_f)");
    const double c = std::cos(state[2]), s = std::sin(state[2]);
    const double dx = target[0] - state[0], dy = target[1] - state[1];
    const double ex = c * dx + s * dy;   // body-frame forward error
    const double ey = -s * dx + c * dy;  // body-frame lateral error
    const double d = (ex == 0.0 && ey == 0.0) ? 0.0 : std::atan2(ey, ex);
    return {k_v * std::cos(d), k_omega * d};
}

}  // namespace cbfkit
