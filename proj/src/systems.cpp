#include "cbfkit/systems.hpp"

#include <cmath>
#include <stdexcept>

#include "cbfkit/kernels.hpp"

namespace cbfkit {

namespace {

constexpr double kInputTol = 1e-9;
constexpr double kTieTol = 1e-12;

void check_state(const ControlAffineSystem& sys, const Vec& x) {
    if (static_cast<int>(x.size()) != sys.state_dim)
        throw std::invalid_argument("state dimension mismatch for system '" + sys.name + "'");
    if (!kernels::all_finite(x.size(), x.data()))
        throw std::invalid_argument("non-finite state passed to system '" + sys.name + "'");
}

void check_input(const ControlAffineSystem& sys, const Vec& u) {
    if (static_cast<int>(u.size()) != sys.input_dim)
        throw std::invalid_argument("input dimension mismatch for system '" + sys.name + "'");
    for (int j = 0; j < sys.input_dim; ++j) {
        if (!(u[j] >= sys.input_lower[j] - kInputTol && u[j] <= sys.input_upper[j] + kInputTol))
            throw std::invalid_argument("input outside the admissible box for system '" +
                                        sys.name + "'");
    }
}

// Unchecked core shared by eval_dynamics and rk4_step.
void dynamics_raw(const ControlAffineSystem& sys, const double* x, const double* u, double* f,
                  double* G, double* dx) {
    const int n = sys.state_dim, m = sys.input_dim;
    sys.drift(x, f);
    sys.actuation(x, G);
    for (int i = 0; i < n; ++i) {
        double s = f[i];
        for (int j = 0; j < m; ++j) s += G[i * m + j] * u[j];
        dx[i] = s;
    }
}

}  // namespace

ControlAffineSystem make_double_integrator() {
    ControlAffineSystem sys;
    sys.name = "double_integrator";
    sys.state_dim = 2;
    sys.input_dim = 1;
    sys.drift = [](const double* x, double* f) {
        f[0] = x[1];
        f[1] = 0.0;
    };
    sys.actuation = [](const double*, double* g) {
        g[0] = 0.0;
        g[1] = 1.0;
    };
    sys.input_lower = {-1.0};
    sys.input_upper = {1.0};
    sys.domain_lower = {-1.0, -6.0};
    sys.domain_upper = {11.0, 6.0};
    return sys;
}

ControlAffineSystem make_unicycle() {
    ControlAffineSystem sys;
    sys.name = "unicycle";
    sys.state_dim = 3;
    sys.input_dim = 2;
    sys.drift = [](const double*, double* f) { f[0] = f[1] = f[2] = 0.0; };
    sys.actuation = [](const double* x, double* g) {
        const double c = std::cos(x[2]), s = std::sin(x[2]);
        // columns: forward speed v, turn rate omega
        g[0] = c;
        g[1] = 0.0;
        g[2] = s;
        g[3] = 0.0;
        g[4] = 0.0;
        g[5] = 1.0;
    };
    sys.input_lower = {0.2, -1.0};
    sys.input_upper = {2.0, 1.0};
    // sampling box: the [0,10] x [-5,5] position corridor plus a one-unit
    // margin, so the net sees states on both sides of the boundary
    sys.domain_lower = {-1.0, -6.0, -M_PI};
    sys.domain_upper = {11.0, 6.0, M_PI};
    return sys;
}

ControlAffineSystem make_dubins(double speed) {
    if (!(speed > 0.0) || !std::isfinite(speed))
        throw std::invalid_argument("dubins speed must be positive and finite");
    ControlAffineSystem sys;
    sys.name = "dubins";
    sys.state_dim = 3;
    sys.input_dim = 1;
    sys.drift = [speed](const double* x, double* f) {
        f[0] = speed * std::cos(x[2]);
        f[1] = speed * std::sin(x[2]);
        f[2] = 0.0;
    };
    sys.actuation = [](const double*, double* g) {
        g[0] = 0.0;
        g[1] = 0.0;
        g[2] = 1.0;
    };
    sys.input_lower = {-1.0};
    sys.input_upper = {1.0};
    sys.domain_lower = {0.0, 0.0, -M_PI};
    sys.domain_upper = {10.0, 10.0, M_PI};
    return sys;
}

ControlAffineSystem make_system(const std::string& name, double dubins_speed) {
    if (name == "double_integrator") return make_double_integrator();
    if (name == "unicycle") return make_unicycle();
    if (name == "dubins") return make_dubins(dubins_speed);
    throw std::invalid_argument("unknown system '" + name +
                                "' (expected double_integrator, unicycle, or dubins)");
}

void validate_system(const ControlAffineSystem& sys) {
    if (sys.state_dim <= 0 || sys.input_dim <= 0)
        throw std::invalid_argument("system dimensions must be positive");
    if (!sys.drift || !sys.actuation)
        throw std::invalid_argument("system is missing drift or actuation");
    auto check_box = [](const Vec& lo, const Vec& hi, std::size_t dim, const char* what) {
        if (lo.size() != dim || hi.size() != dim)
            throw std::invalid_argument(std::string(what) + " box has wrong dimension");
        for (std::size_t j = 0; j < dim; ++j) {
            if (!(lo[j] <= hi[j]))
                throw std::invalid_argument(std::string(what) + " box has lower > upper");
        }
    };
    check_box(sys.input_lower, sys.input_upper, sys.input_dim, "input");
    check_box(sys.domain_lower, sys.domain_upper, sys.state_dim, "domain");
}

Vec eval_dynamics(const ControlAffineSystem& sys, const Vec& x, const Vec& u) {
    check_state(sys, x);
    check_input(sys, u);
    const int n = sys.state_dim, m = sys.input_dim;
    Vec f(n), G(static_cast<std::size_t>(n) * m), dx(n);
    dynamics_raw(sys, x.data(), u.data(), f.data(), G.data(), dx.data());
    if (!kernels::all_finite(dx.size(), dx.data()))
        throw std::runtime_error("dynamics returned non-finite rates for system '" + sys.name +
                                 "'");
    return dx;
}

double hamiltonian_closed_loop(const ControlAffineSystem& sys, const double* x, const double* p,
                               double* f, double* G, double* ustar, double* w) {
    const int n = sys.state_dim, m = sys.input_dim;
    sys.drift(x, f);
    sys.actuation(x, G);
    double H = 0.0;
    for (int i = 0; i < n; ++i) H += p[i] * f[i];
    for (int j = 0; j < m; ++j) {
        double pg = 0.0;
        for (int i = 0; i < n; ++i) pg += p[i] * G[i * m + j];
        H += pg > 0.0 ? pg * sys.input_upper[j] : pg * sys.input_lower[j];
        ustar[j] = pg > kTieTol ? sys.input_upper[j] : sys.input_lower[j];
    }
    for (int i = 0; i < n; ++i) {
        double s = f[i];
        for (int j = 0; j < m; ++j) s += G[i * m + j] * ustar[j];
        w[i] = s;
    }
    return H;
}

double hamiltonian_max(const ControlAffineSystem& sys, const Vec& x, const Vec& p, Vec* u_star) {
    check_state(sys, x);
    if (static_cast<int>(p.size()) != sys.state_dim)
        throw std::invalid_argument("costate dimension mismatch");
    const int n = sys.state_dim, m = sys.input_dim;
    Vec f(n), G(static_cast<std::size_t>(n) * m), us(m), w(n);
    double H = hamiltonian_closed_loop(sys, x.data(), p.data(), f.data(), G.data(), us.data(),
                                       w.data());
    if (!std::isfinite(H)) throw std::runtime_error("non-finite Hamiltonian value");
    if (u_star != nullptr) *u_star = us;
    return H;
}

Vec rk4_step(const ControlAffineSystem& sys, const Vec& x, const Vec& u, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_step requires dt > 0");
    check_state(sys, x);
    check_input(sys, u);
    const int n = sys.state_dim, m = sys.input_dim;
    Vec f(n), G(static_cast<std::size_t>(n) * m);
    Vec k1(n), k2(n), k3(n), k4(n), xt(n), out(n);

    auto stage = [&](const Vec& xs, Vec& k) {
        dynamics_raw(sys, xs.data(), u.data(), f.data(), G.data(), k.data());
        if (!kernels::all_finite(k.size(), k.data()))
            throw std::runtime_error("integration error: non-finite state rate in rk4_step");
    };

    stage(x, k1);
    for (int i = 0; i < n; ++i) xt[i] = x[i] + 0.5 * dt * k1[i];
    stage(xt, k2);
    for (int i = 0; i < n; ++i) xt[i] = x[i] + 0.5 * dt * k2[i];
    stage(xt, k3);
    for (int i = 0; i < n; ++i) xt[i] = x[i] + dt * k3[i];
    stage(xt, k4);
    for (int i = 0; i < n; ++i)
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!kernels::all_finite(out.size(), out.data()))
        throw std::runtime_error("integration error: non-finite state after rk4_step");
    return out;
}

}  // namespace cbfkit
