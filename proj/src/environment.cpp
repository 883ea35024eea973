#include "cbfkit/environment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cbfkit/rng.hpp"

namespace cbfkit {

namespace {

bool is_primitive(NodeKind k) {
    return k == NodeKind::circle || k == NodeKind::halfspace_lower ||
           k == NodeKind::halfspace_upper;
}

double primitive_value(const ConstraintTree::Node& n, const double* x, const double* e) {
    switch (n.kind) {
        case NodeKind::circle: {
            double s = 0.0;
            for (std::size_t k = 0; k < n.position_dims.size(); ++k) {
                double d = x[n.position_dims[k]] - e[n.center_slots[k]];
                s += d * d;
            }
            double r = e[n.radius_slot];
            return s - r * r;
        }
        case NodeKind::halfspace_lower:
            return x[n.dim] - n.bound;
        case NodeKind::halfspace_upper:
            return n.bound - x[n.dim];
        default:
            throw std::logic_error("primitive_value on composite node");
    }
}

// Accumulates w * d(primitive)/d(x,e).
void primitive_grad(const ConstraintTree::Node& n, const double* x, const double* e, double w,
                    double* grad_x, double* grad_e) {
    switch (n.kind) {
        case NodeKind::circle:
            for (std::size_t k = 0; k < n.position_dims.size(); ++k) {
                double d = x[n.position_dims[k]] - e[n.center_slots[k]];
                grad_x[n.position_dims[k]] += w * 2.0 * d;
                if (grad_e != nullptr) grad_e[n.center_slots[k]] -= w * 2.0 * d;
            }
            if (grad_e != nullptr) grad_e[n.radius_slot] -= w * 2.0 * e[n.radius_slot];
            break;
        case NodeKind::halfspace_lower:
            grad_x[n.dim] += w;
            break;
        case NodeKind::halfspace_upper:
            grad_x[n.dim] -= w;
            break;
        default:
            throw std::logic_error("primitive_grad on composite node");
    }
}

// LSE(vals; beta) with softmax weights written over vals.
double lse_weights_inplace(double* vals, std::size_t n, double beta) {
    double m = vals[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, vals[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        vals[i] = std::exp(beta * (vals[i] - m));
        sum += vals[i];
    }
    for (std::size_t i = 0; i < n; ++i) vals[i] /= sum;
    return m + std::log(sum) / beta;
}

int flatten(const TreeSpec& spec, ConstraintTree& tree) {
    std::vector<int> kids;
    kids.reserve(spec.children.size());
    for (const auto& c : spec.children) kids.push_back(flatten(c, tree));

    ConstraintTree::Node n;
    n.kind = spec.kind;
    n.position_dims = spec.position_dims;
    n.center_slots = spec.center_slots;
    n.radius_slot = spec.radius_slot;
    n.dim = spec.dim;
    n.bound = spec.bound;
    n.first_child = static_cast<int>(tree.child_index.size());
    n.n_children = static_cast<int>(kids.size());
    tree.child_index.insert(tree.child_index.end(), kids.begin(), kids.end());
    tree.nodes.push_back(std::move(n));
    return static_cast<int>(tree.nodes.size()) - 1;
}

void validate_node(const ConstraintTree& tree, const ConstraintTree::Node& n) {
    auto check_dim = [&](int d) {
        if (d < 0 || d >= tree.n_x)
            throw std::invalid_argument("tree references state dim out of range");
    };
    auto check_slot = [&](int s) {
        if (s < 0 || s >= tree.n_e)
            throw std::invalid_argument("tree references parameter slot out of range");
    };
    switch (n.kind) {
        case NodeKind::circle:
            if (n.position_dims.empty() || n.position_dims.size() != n.center_slots.size())
                throw std::invalid_argument(
                    "circle node needs matching position_dims and center_slots");
            for (int d : n.position_dims) check_dim(d);
            for (int s : n.center_slots) check_slot(s);
            check_slot(n.radius_slot);
            break;
        case NodeKind::halfspace_lower:
        case NodeKind::halfspace_upper:
            check_dim(n.dim);
            if (!std::isfinite(n.bound))
                throw std::invalid_argument("halfspace bound must be finite");
            break;
        case NodeKind::min:
        case NodeKind::max:
            if (n.n_children < 2)
                throw std::invalid_argument("min/max nodes need at least 2 children");
            break;
        case NodeKind::neg:
            if (n.n_children != 1) throw std::invalid_argument("neg nodes need exactly 1 child");
            break;
    }
}

}  // namespace

TreeSpec circle_spec(std::vector<int> position_dims, std::vector<int> center_slots,
                     int radius_slot) {
    TreeSpec s;
    s.kind = NodeKind::circle;
    s.position_dims = std::move(position_dims);
    s.center_slots = std::move(center_slots);
    s.radius_slot = radius_slot;
    return s;
}

TreeSpec halfspace_lower_spec(int dim, double bound) {
    TreeSpec s;
    s.kind = NodeKind::halfspace_lower;
    s.dim = dim;
    s.bound = bound;
    return s;
}

TreeSpec halfspace_upper_spec(int dim, double bound) {
    TreeSpec s;
    s.kind = NodeKind::halfspace_upper;
    s.dim = dim;
    s.bound = bound;
    return s;
}

TreeSpec min_spec(std::vector<TreeSpec> children) {
    TreeSpec s;
    s.kind = NodeKind::min;
    s.children = std::move(children);
    return s;
}

TreeSpec max_spec(std::vector<TreeSpec> children) {
    TreeSpec s;
    s.kind = NodeKind::max;
    s.children = std::move(children);
    return s;
}

TreeSpec neg_spec(TreeSpec child) {
    TreeSpec s;
    s.kind = NodeKind::neg;
    s.children.push_back(std::move(child));
    return s;
}

std::vector<int> ConstraintTree::radius_slots() const {
    std::vector<int> out;
    for (const auto& n : nodes) {
        if (n.kind == NodeKind::circle) out.push_back(n.radius_slot);
    }
    return out;
}

int ConstraintTree::composite_depth() const {
    std::vector<int> depth(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Node& n = nodes[i];
        if (is_primitive(n.kind)) continue;
        int d = 0;
        for (int k = 0; k < n.n_children; ++k)
            d = std::max(d, depth[child_index[n.first_child + k]]);
        depth[i] = d + 1;
    }
    return nodes.empty() ? 0 : depth.back();
}

int ConstraintTree::max_branching() const {
    int b = 1;
    for (const auto& n : nodes) b = std::max(b, n.n_children);
    return b;
}

ConstraintTree build_tree(int n_x, int n_e, const TreeSpec& root) {
    if (n_x <= 0) throw std::invalid_argument("tree needs a positive state dimension");
    if (n_e < 0) throw std::invalid_argument("tree parameter dimension cannot be negative");
    ConstraintTree tree;
    tree.n_x = n_x;
    tree.n_e = n_e;
    flatten(root, tree);
    for (const auto& n : tree.nodes) validate_node(tree, n);
    return tree;
}

void validate_env(const ConstraintTree& tree, const Vec& e) {
    if (static_cast<int>(e.size()) != tree.n_e)
        throw std::invalid_argument("environment vector has wrong length");
    for (int s : tree.radius_slots()) {
        if (!(e[s] > 0.0))
            throw std::invalid_argument("environment radius slots must be positive");
    }
}

double lse(const double* v, std::size_t n, double beta) {
    if (n == 0) throw std::invalid_argument("lse of an empty vector");
    if (!(beta > 0.0)) throw std::invalid_argument("lse needs beta > 0");
    double m = v[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(beta * (v[i] - m));
    return m + std::log(sum) / beta;
}

double lse(const Vec& v, double beta) { return lse(v.data(), v.size(), beta); }

double eval_constraint(const ConstraintTree& tree, const double* x, const double* e) {
    Vec val(tree.nodes.size());
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        switch (n.kind) {
            case NodeKind::min:
            case NodeKind::max: {
                double v = val[tree.child_index[n.first_child]];
                for (int k = 1; k < n.n_children; ++k) {
                    double c = val[tree.child_index[n.first_child + k]];
                    v = n.kind == NodeKind::min ? std::min(v, c) : std::max(v, c);
                }
                val[i] = v;
                break;
            }
            case NodeKind::neg:
                val[i] = -val[tree.child_index[n.first_child]];
                break;
            default:
                val[i] = primitive_value(n, x, e);
        }
    }
    return val.back();
}

double eval_constraint(const ConstraintTree& tree, const Vec& x, const Vec& e) {
    return eval_constraint(tree, x.data(), e.data());
}

void TreeWorkspace::resize(const ConstraintTree& tree) {
    lo.assign(tree.nodes.size(), 0.0);
    up.assign(tree.nodes.size(), 0.0);
    wlo.assign(tree.nodes.size(), 0.0);
    wup.assign(tree.nodes.size(), 0.0);
    edge_wlo.assign(tree.child_index.size(), 0.0);
    edge_wup.assign(tree.child_index.size(), 0.0);
    buf.assign(tree.max_branching(), 0.0);
}

namespace {

// Forward pass of the dual-bound recursion; fills ws.lo/ws.up and, when
// with_weights, the per-edge LSE weights used by the backward pass.
void smooth_forward(const ConstraintTree& tree, const double* x, const double* e, double beta,
                    TreeWorkspace& ws, bool with_weights) {
    const double inv_beta = 1.0 / beta;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        switch (n.kind) {
            case NodeKind::min:
            case NodeKind::max: {
                const bool is_min = n.kind == NodeKind::min;
                const double corr = std::log(static_cast<double>(n.n_children)) * inv_beta;
                // lower track
                for (int k = 0; k < n.n_children; ++k) {
                    double c = ws.lo[tree.child_index[n.first_child + k]];
                    ws.buf[k] = is_min ? -c : c;
                }
                double L = lse_weights_inplace(ws.buf.data(), n.n_children, beta);
                ws.lo[i] = is_min ? -L : L - corr;
                if (with_weights) {
                    for (int k = 0; k < n.n_children; ++k) ws.edge_wlo[n.first_child + k] = ws.buf[k];
                }
                // upper track
                for (int k = 0; k < n.n_children; ++k) {
                    double c = ws.up[tree.child_index[n.first_child + k]];
                    ws.buf[k] = is_min ? -c : c;
                }
                double U = lse_weights_inplace(ws.buf.data(), n.n_children, beta);
                ws.up[i] = is_min ? -U + corr : U;
                if (with_weights) {
                    for (int k = 0; k < n.n_children; ++k) ws.edge_wup[n.first_child + k] = ws.buf[k];
                }
                break;
            }
            case NodeKind::neg: {
                int c = tree.child_index[n.first_child];
                ws.lo[i] = -ws.up[c];
                ws.up[i] = -ws.lo[c];
                break;
            }
            default: {
                double v = primitive_value(n, x, e);
                ws.lo[i] = v;
                ws.up[i] = v;
            }
        }
    }
}

}  // namespace

double eval_smooth_lower(const ConstraintTree& tree, const double* x, const double* e,
                         double beta) {
    TreeWorkspace ws;
    ws.resize(tree);
    smooth_forward(tree, x, e, beta, ws, false);
    return ws.lo.back();
}

double eval_smooth_lower(const ConstraintTree& tree, const Vec& x, const Vec& e, double beta) {
    return eval_smooth_lower(tree, x.data(), e.data(), beta);
}

double smooth_lower_grad(const ConstraintTree& tree, const double* x, const double* e, double beta,
                         TreeWorkspace& ws, double* grad_x, double* grad_e) {
    ws.resize(tree);
    smooth_forward(tree, x, e, beta, ws, true);

    for (int d = 0; d < tree.n_x; ++d) grad_x[d] = 0.0;
    if (grad_e != nullptr) {
        for (int s = 0; s < tree.n_e; ++s) grad_e[s] = 0.0;
    }

    ws.wlo.back() = 1.0;
    for (std::size_t ri = tree.nodes.size(); ri-- > 0;) {
        const auto& n = tree.nodes[ri];
        const double wlo = ws.wlo[ri], wup = ws.wup[ri];
        if (wlo == 0.0 && wup == 0.0) continue;
        switch (n.kind) {
            case NodeKind::min:
            case NodeKind::max:
                for (int k = 0; k < n.n_children; ++k) {
                    int c = tree.child_index[n.first_child + k];
                    ws.wlo[c] += wlo * ws.edge_wlo[n.first_child + k];
                    ws.wup[c] += wup * ws.edge_wup[n.first_child + k];
                }
                break;
            case NodeKind::neg: {
                int c = tree.child_index[n.first_child];
                ws.wup[c] -= wlo;
                ws.wlo[c] -= wup;
                break;
            }
            default:
                primitive_grad(n, x, e, wlo + wup, grad_x, grad_e);
        }
    }
    return ws.lo.back();
}

void validate_distribution(const EnvDistribution& dist) {
    if (dist.lo.size() != dist.hi.size())
        throw std::invalid_argument("distribution lo/hi length mismatch");
    for (std::size_t i = 0; i < dist.lo.size(); ++i) {
        if (!(dist.lo[i] <= dist.hi[i]))
            throw std::invalid_argument("distribution range has lower > upper");
        if (!std::isfinite(dist.lo[i]) || !std::isfinite(dist.hi[i]))
            throw std::invalid_argument("distribution range must be finite");
    }
}

Mat sample_environments(const EnvDistribution& dist, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_environments needs count >= 1");
    validate_distribution(dist);
    std::mt19937_64 g(seed);
    Mat out(count, dist.dim());
    for (int i = 0; i < count; ++i) {
        double* row = out.row(i);
        for (std::size_t j = 0; j < dist.dim(); ++j) row[j] = uniform(g, dist.lo[j], dist.hi[j]);
    }
    return out;
}

}  // namespace cbfkit
