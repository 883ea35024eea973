#pragma once

#include <cstdint>
#include <vector>

#include "cbfkit/linalg.hpp"

namespace cbfkit {

// Safe sets are composition trees over constraint primitives, evaluated two
// ways: exactly (hard min/max/neg) and as a smooth guaranteed LOWER bound
// built from log-sum-exp. Negation flips which side of the sandwich you are
// on, so the smooth evaluation tracks lower and upper bounds together.

enum class NodeKind { circle, halfspace_lower, halfspace_upper, min, max, neg };

// Recursive builder form; flattened into ConstraintTree for evaluation.
struct TreeSpec {
    NodeKind kind;
    // circle keepout: sum_k (x[position_dims[k]] - e[center_slots[k]])^2 - e[radius_slot]^2
    std::vector<int> position_dims;
    std::vector<int> center_slots;
    int radius_slot = -1;
    // halfspace_lower: x[dim] - bound; halfspace_upper: bound - x[dim]
    int dim = -1;
    double bound = 0.0;
    std::vector<TreeSpec> children;
};

TreeSpec circle_spec(std::vector<int> position_dims, std::vector<int> center_slots,
                     int radius_slot);
TreeSpec halfspace_lower_spec(int dim, double bound);
TreeSpec halfspace_upper_spec(int dim, double bound);
TreeSpec min_spec(std::vector<TreeSpec> children);
TreeSpec max_spec(std::vector<TreeSpec> children);
TreeSpec neg_spec(TreeSpec child);

struct ConstraintTree {
    struct Node {
        NodeKind kind;
        // primitive payload (see TreeSpec)
        std::vector<int> position_dims;
        std::vector<int> center_slots;
        int radius_slot = -1;
        int dim = -1;
        double bound = 0.0;
        // composites: indices into `nodes`, always earlier than the node itself
        int first_child = 0;
        int n_children = 0;
    };

    // post-order: children precede parents, root is nodes.back()
    std::vector<Node> nodes;
    std::vector<int> child_index;
    int n_x = 0;
    int n_e = 0;

    std::vector<int> radius_slots() const;
    int composite_depth() const;  // levels of min/max/neg above the deepest leaf
    int max_branching() const;
};

// Flattens and validates; throws std::invalid_argument on structural errors
// (composites with < 2 children, out-of-range slots or dims, shape mismatch).
ConstraintTree build_tree(int n_x, int n_e, const TreeSpec& root);

// e has n_e entries and every radius slot is positive.
void validate_env(const ConstraintTree& tree, const Vec& e);

// Numerically stabilized (1/beta) log sum exp(beta v). beta > 0, v nonempty.
double lse(const double* v, std::size_t n, double beta);
double lse(const Vec& v, double beta);

// Exact nonsmooth evaluation.
double eval_constraint(const ConstraintTree& tree, const double* x, const double* e);
double eval_constraint(const ConstraintTree& tree, const Vec& x, const Vec& e);

// Scratch for the smooth evaluation; reusable across calls with the same tree.
struct TreeWorkspace {
    Vec lo, up;              // per node
    Vec wlo, wup;            // per node adjoints
    Vec edge_wlo, edge_wup;  // per child edge LSE weights
    Vec buf;                 // gather buffer, max branching wide
    void resize(const ConstraintTree& tree);
};

// Smooth lower bound built recursively: Min -> -LSE(-s), Max -> LSE(s)-log(K)/beta,
// Neg -> negated child UPPER bound. Guaranteed <= eval_constraint everywhere.
double eval_smooth_lower(const ConstraintTree& tree, const double* x, const double* e,
                         double beta);
double eval_smooth_lower(const ConstraintTree& tree, const Vec& x, const Vec& e, double beta);

// Value plus analytic gradient of the smooth lower bound. grad_x has n_x
// entries; grad_e (n_e entries) may be null when only the state gradient is
// needed. Overwrites both.
double smooth_lower_grad(const ConstraintTree& tree, const double* x, const double* e, double beta,
                         TreeWorkspace& ws, double* grad_x, double* grad_e);

// Per-slot uniform sampling ranges for e.
struct EnvDistribution {
    Vec lo, hi;
    std::size_t dim() const { return lo.size(); }
};

void validate_distribution(const EnvDistribution& dist);

// count rows of i.i.d. uniform draws, one row per environment; deterministic
// per seed. Degenerate ranges (lo == hi) collapse to the point.
Mat sample_environments(const EnvDistribution& dist, int count, std::uint64_t seed);

}  // namespace cbfkit
