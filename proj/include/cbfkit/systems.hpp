#pragma once

#include <functional>
#include <string>

#include "cbfkit/linalg.hpp"

namespace cbfkit {

// Control-affine dynamics xdot = f(x) + g(x) u with a box input set and a
// box state domain used for sampling. Immutable after construction; all
// operations below are pure.
struct ControlAffineSystem {
    std::string name;
    int state_dim = 0;
    int input_dim = 0;
    // drift writes f(x) (length n); actuation writes g(x) row-major (n x m)
    std::function<void(const double* x, double* f)> drift;
    std::function<void(const double* x, double* g)> actuation;
    Vec input_lower, input_upper;
    Vec domain_lower, domain_upper;
};

ControlAffineSystem make_double_integrator();
ControlAffineSystem make_unicycle();
ControlAffineSystem make_dubins(double speed);
// Config-facing factory: "double_integrator", "unicycle", "dubins".
// dubins_speed applies to "dubins" only. Throws std::invalid_argument on
// unknown names.
ControlAffineSystem make_system(const std::string& name, double dubins_speed = 1.0);

// Shape/box sanity; throws std::invalid_argument.
void validate_system(const ControlAffineSystem& sys);

// f(x) + g(x) u. Rejects non-finite x and u outside the box beyond 1e-9.
Vec eval_dynamics(const ControlAffineSystem& sys, const Vec& x, const Vec& u);

// Exact box maximum of p'(f + g u): p'f + sum_j (p'g_j)_+ hi_j + (p'g_j)_- lo_j.
// When |p'g_j| <= 1e-12 the reported maximizer takes the lower vertex (the
// value is unaffected); u_star may be null.
double hamiltonian_max(const ControlAffineSystem& sys, const Vec& x, const Vec& p,
                       Vec* u_star = nullptr);

// Allocation-free variant for hot loops: writes f (n), G (n x m, row-major),
// ustar (m) and the closed-loop velocity w = f + G ustar (n). Returns the
// Hamiltonian value.
double hamiltonian_closed_loop(const ControlAffineSystem& sys, const double* x, const double* p,
                               double* f, double* G, double* ustar, double* w);

// Classical RK4 with zero-order-hold input. Throws std::runtime_error when an
// intermediate state goes non-finite.
Vec rk4_step(const ControlAffineSystem& sys, const Vec& x, const Vec& u, double dt);

}  // namespace cbfkit
