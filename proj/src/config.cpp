#include "cbfkit/config.hpp"

#include "cbfkit/io.hpp"
#include "serializers.hpp"

namespace cbfkit {

namespace ju = jsonutil;
using ju::json;

namespace jsonutil {

namespace {

const char* kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::circle: return "circle";
        case NodeKind::halfspace_lower: return "halfspace_lower";
        case NodeKind::halfspace_upper: return "halfspace_upper";
        case NodeKind::min: return "min";
        case NodeKind::max: return "max";
        case NodeKind::neg: return "neg";
    }
    return "?";
}

}  // namespace

json tree_to_json(const TreeSpec& spec) {
    json j;
    j["kind"] = kind_name(spec.kind);
    switch (spec.kind) {
        case NodeKind::circle:
            j["position_dims"] = spec.position_dims;
            j["center_slots"] = spec.center_slots;
            j["radius_slot"] = spec.radius_slot;
            break;
        case NodeKind::halfspace_lower:
        case NodeKind::halfspace_upper:
            j["dim"] = spec.dim;
            j["bound"] = spec.bound;
            break;
        case NodeKind::min:
        case NodeKind::max: {
            json kids = json::array();
            for (const auto& c : spec.children) kids.push_back(tree_to_json(c));
            j["children"] = std::move(kids);
            break;
        }
        case NodeKind::neg:
            j["child"] = tree_to_json(spec.children.at(0));
            break;
    }
    return j;
}

TreeSpec tree_from_json(const json& j, const std::string& path) {
    const std::string kind = as_str(member(j, "kind", path), path + ".kind");
    if (kind == "circle") {
        return circle_spec(as_int_vec(member(j, "position_dims", path), path + ".position_dims"),
                           as_int_vec(member(j, "center_slots", path), path + ".center_slots"),
                           static_cast<int>(as_int(member(j, "radius_slot", path),
                                                   path + ".radius_slot")));
    }
    if (kind == "halfspace_lower" || kind == "halfspace_upper") {
        const int dim = static_cast<int>(as_int(member(j, "dim", path), path + ".dim"));
        const double bound = as_num(member(j, "bound", path), path + ".bound");
        return kind == "halfspace_lower" ? halfspace_lower_spec(dim, bound)
                                         : halfspace_upper_spec(dim, bound);
    }
    if (kind == "min" || kind == "max") {
        const json& kids = member(j, "children", path);
        if (!kids.is_array()) fail(path + ".children", "expected an array");
        std::vector<TreeSpec> children;
        for (std::size_t i = 0; i < kids.size(); ++i)
            children.push_back(
                tree_from_json(kids[i], path + ".children[" + std::to_string(i) + "]"));
        return kind == "min" ? min_spec(std::move(children)) : max_spec(std::move(children));
    }
    if (kind == "neg") return neg_spec(tree_from_json(member(j, "child", path), path + ".child"));
    fail(path + ".kind", "unknown kind '" + kind + "'");
}

json system_to_json(const SystemSpec& spec) {
    json j;
    j["name"] = spec.name;
    if (spec.name == "dubins") j["speed"] = spec.speed;
    return j;
}

SystemSpec system_from_json(const json& j, const std::string& path) {
    SystemSpec s;
    s.name = as_str(member(j, "name", path), path + ".name");
    s.speed = num_or(j, "speed", 1.0, path);
    return s;
}

json environment_to_json(const EnvironmentSpec& spec) {
    json j;
    j["param_dim"] = spec.param_dim;
    j["tree"] = tree_to_json(spec.tree);
    if (spec.param_dim > 0) j["ranges"] = {{"lo", spec.ranges.lo}, {"hi", spec.ranges.hi}};
    return j;
}

EnvironmentSpec environment_from_json(const json& j, const std::string& path) {
    EnvironmentSpec e;
    e.param_dim = static_cast<int>(as_int(member(j, "param_dim", path), path + ".param_dim"));
    if (e.param_dim < 0) fail(path + ".param_dim", "must be nonnegative");
    e.tree = tree_from_json(member(j, "tree", path), path + ".tree");
    if (e.param_dim > 0) {
        const json& r = member(j, "ranges", path);
        const std::string rp = path + ".ranges";
        e.ranges.lo = as_vec(member(r, "lo", rp), rp + ".lo");
        e.ranges.hi = as_vec(member(r, "hi", rp), rp + ".hi");
        if (e.ranges.lo.size() != static_cast<std::size_t>(e.param_dim) ||
            e.ranges.hi.size() != e.ranges.lo.size())
            fail(rp, "lo/hi must each have param_dim entries");
    }
    return e;
}

json model_to_json(const ModelConfig& cfg, bool include_derived) {
    json j;
    j["hidden_layers"] = cfg.hidden_layers;
    j["hidden_width"] = cfg.hidden_width;
    j["gamma"] = cfg.gamma;
    j["lambda"] = cfg.lambda;
    j["beta"] = cfg.beta;
    j["init_gap"] = cfg.init_gap;
    j["out_sharpness"] = cfg.out_sharpness;
    if (include_derived) j["input_dim"] = cfg.input_dim;
    return j;
}

ModelConfig model_from_json(const json& j, const std::string& path) {
    ModelConfig cfg;
    cfg.hidden_layers = static_cast<int>(int_or(j, "hidden_layers", cfg.hidden_layers, path));
    cfg.hidden_width = static_cast<int>(int_or(j, "hidden_width", cfg.hidden_width, path));
    cfg.gamma = num_or(j, "gamma", cfg.gamma, path);
    cfg.lambda = num_or(j, "lambda", cfg.lambda, path);
    cfg.beta = num_or(j, "beta", cfg.beta, path);
    cfg.init_gap = num_or(j, "init_gap", cfg.init_gap, path);
    cfg.out_sharpness = num_or(j, "out_sharpness", cfg.out_sharpness, path);
    cfg.input_dim = static_cast<int>(int_or(j, "input_dim", 0, path));
    return cfg;
}

}  // namespace jsonutil

namespace {

TrainConfig train_from_json(const json& j, const std::string& path) {
    TrainConfig t;
    t.epochs = static_cast<int>(ju::int_or(j, "epochs", t.epochs, path));
    t.batch_size = static_cast<int>(ju::int_or(j, "batch_size", t.batch_size, path));
    t.learning_rate = ju::num_or(j, "learning_rate", t.learning_rate, path);
    t.lr_final = ju::num_or(j, "lr_final", t.lr_final, path);
    t.adam_beta1 = ju::num_or(j, "adam_beta1", t.adam_beta1, path);
    t.adam_beta2 = ju::num_or(j, "adam_beta2", t.adam_beta2, path);
    t.adam_eps = ju::num_or(j, "adam_eps", t.adam_eps, path);
    const long seed = ju::int_or(j, "seed", 0, path);
    if (seed < 0) ju::fail(path + ".seed", "must be nonnegative");
    t.seed = static_cast<std::uint64_t>(seed);
    t.checkpoint_interval =
        static_cast<int>(ju::int_or(j, "checkpoint_interval", t.checkpoint_interval, path));
    t.max_steps = ju::int_or(j, "max_steps", t.max_steps, path);
    if (const json* d = ju::member_opt(j, "dataset", path)) {
        const std::string dp = path + ".dataset";
        t.dataset.environments =
            static_cast<int>(ju::int_or(*d, "environments", t.dataset.environments, dp));
        t.dataset.states_per_env =
            static_cast<int>(ju::int_or(*d, "states_per_env", t.dataset.states_per_env, dp));
        t.dataset.shared_state_pool =
            ju::bool_or(*d, "shared_state_pool", t.dataset.shared_state_pool, dp);
    }
    if (t.epochs < 0) ju::fail(path + ".epochs", "must be nonnegative");
    if (t.batch_size < 1) ju::fail(path + ".batch_size", "must be positive");
    if (!(t.learning_rate > 0.0)) ju::fail(path + ".learning_rate", "must be positive");
    if (t.lr_final < 0.0 || t.lr_final > t.learning_rate)
        ju::fail(path + ".lr_final", "must lie in [0, learning_rate]");
    if (!(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0))
        ju::fail(path + ".adam_beta1", "must lie in [0,1)");
    if (!(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0))
        ju::fail(path + ".adam_beta2", "must lie in [0,1)");
    if (!(t.adam_eps > 0.0)) ju::fail(path + ".adam_eps", "must be positive");
    if (t.checkpoint_interval < 0) ju::fail(path + ".checkpoint_interval", "must be nonnegative");
    if (t.max_steps < 0) ju::fail(path + ".max_steps", "must be nonnegative");
    if (t.dataset.environments < 1) ju::fail(path + ".dataset.environments", "must be positive");
    if (t.dataset.states_per_env < 1)
        ju::fail(path + ".dataset.states_per_env", "must be positive");
    return t;
}

json train_to_json(const TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["learning_rate"] = t.learning_rate;
    j["lr_final"] = t.lr_final;
    j["adam_beta1"] = t.adam_beta1;
    j["adam_beta2"] = t.adam_beta2;
    j["adam_eps"] = t.adam_eps;
    j["seed"] = t.seed;
    j["checkpoint_interval"] = t.checkpoint_interval;
    j["max_steps"] = t.max_steps;
    j["dataset"] = {{"environments", t.dataset.environments},
                    {"states_per_env", t.dataset.states_per_env},
                    {"shared_state_pool", t.dataset.shared_state_pool}};
    return j;
}

}  // namespace

ControlAffineSystem instantiate_system(const SystemSpec& spec) {
    return make_system(spec.name, spec.speed);
}

ConstraintTree instantiate_tree(const ControlAffineSystem& sys, const EnvironmentSpec& env) {
    ConstraintTree tree = build_tree(sys.state_dim, env.param_dim, env.tree);
    if (env.param_dim > 0) {
        validate_distribution(env.ranges);
        for (int slot : tree.radius_slots())
            if (!(env.ranges.lo[slot] > 0.0))
                throw std::invalid_argument("environment.ranges.lo[" + std::to_string(slot) +
                                            "]: radius slot must stay positive");
    }
    return tree;
}

void finalize_model(TrainRecipe& recipe, const ControlAffineSystem& sys) {
    recipe.model.input_dim = sys.state_dim + recipe.environment.param_dim;
    auto [center, half] = input_normalization(sys, recipe.environment.ranges);
    recipe.model.in_center = std::move(center);
    recipe.model.in_half = std::move(half);
    validate_config(recipe.model);
}

TrainRecipe parse_train_recipe(const std::string& json_text) {
    const json j = ju::parse_text(json_text, "config");
    TrainRecipe r;
    r.system = ju::system_from_json(ju::member(j, "system", "config"), "system");
    r.environment =
        ju::environment_from_json(ju::member(j, "environment", "config"), "environment");
    if (const json* m = ju::member_opt(j, "model", "config"))
        r.model = ju::model_from_json(*m, "model");
    r.train = train_from_json(ju::member(j, "train", "config"), "train");
    return r;
}

TrainRecipe load_train_recipe(const std::string& path) {
    return parse_train_recipe(read_text_file(path));
}

std::string train_recipe_to_text(const TrainRecipe& recipe) {
    json j;
    j["system"] = ju::system_to_json(recipe.system);
    j["environment"] = ju::environment_to_json(recipe.environment);
    j["model"] = ju::model_to_json(recipe.model, false);
    j["train"] = train_to_json(recipe.train);
    return j.dump(2) + "\n";
}

}  // namespace cbfkit
