#pragma once

#include "cbfkit/environment.hpp"
#include "cbfkit/network.hpp"
#include "cbfkit/systems.hpp"

namespace cbfkit {

enum class FilterStatus { optimal, infeasible };

// minimize ||u - u_ref||^2 over {u in [box_lo, box_hi] : a'u >= b}
struct FilterProblem {
    Vec u_ref;
    Vec a;
    double b = 0.0;
    Vec box_lo, box_hi;
};

struct FilterDecision {
    Vec u;
    FilterStatus status = FilterStatus::optimal;
};

// Exact minimizer by face enumeration (intended for m <= 2; correct for any
// small m). status is infeasible iff max over the box of a'u falls below b;
// the returned u then still holds that box maximizer so callers can fall
// back to the least-unsafe input.
FilterDecision solve_halfspace_box_qp(const FilterProblem& prob);

// Assembles the barrier constraint a = g'grad_h, b = -grad_h.f - gamma*h at
// (x, e) from the learned surface and projects u_ref through the QP. On an
// infeasible constraint the Hamiltonian-maximizing vertex is returned with
// status reported.
FilterDecision safety_filter(const MlpParams& p, const ControlAffineSystem& sys,
                             const ConstraintTree& tree, const Vec& x, const Vec& e,
                             const Vec& u_ref, double gamma, double beta);

// u = kp*(target - position) - kd*velocity; unclamped, the QP box saturates.
double pd_controller(const Vec& x, double target, double kp, double kd);

// Body-frame pursuit: rerr = R(psi)^T (target - position), bearing
// d = atan2(rerr_y, rerr_x) (0 when on target), omega = k_omega*d,
// v = k_v*cos(d); unclamped.
Vec unicycle_controller(const Vec& state, const Vec& target, double k_omega, double k_v);

}  // namespace cbfkit
