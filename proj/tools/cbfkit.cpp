#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "cbfkit/checkpoint.hpp"
#include "cbfkit/io.hpp"
#include "cbfkit/sim.hpp"
#include "cbfkit/training.hpp"
#include "json_util.hpp"

namespace fs = std::filesystem;
using namespace cbfkit;

namespace {

namespace ju = jsonutil;

// "1,8,0", "[1, 8, 0]", "@params.json" (file holding an array), or "" -> {}
Vec parse_env_values(const std::string& arg) {
    if (arg.empty()) return {};
    std::string text = arg;
    if (arg.front() == '@') text = read_text_file(arg.substr(1));
    if (!text.empty() && text.find_first_of("[{") != std::string::npos)
        return ju::as_vec(ju::parse_text(text, "env"), "env");
    Vec out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        const std::string tok = text.substr(pos, next - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw std::invalid_argument("env: '" + tok + "' is not a number");
        }
        pos = next + 1;
    }
    return out;
}

// "0:lo:hi:n,1:lo:hi:n" in either dim order
GridAxes parse_axes(const std::string& arg, int state_dim, const Vec& base) {
    GridAxes axes;
    axes.base_state = base;
    if (base.empty()) axes.base_state.assign(static_cast<std::size_t>(state_dim), 0.0);
    bool seen[2] = {false, false};
    std::size_t pos = 0;
    int part = 0;
    while (pos < arg.size() && part < 2) {
        std::size_t next = arg.find(',', pos);
        if (next == std::string::npos) next = arg.size();
        const std::string seg = arg.substr(pos, next - pos);
        double f[4];
        if (std::sscanf(seg.c_str(), "%lf:%lf:%lf:%lf", &f[0], &f[1], &f[2], &f[3]) != 4)
            throw std::invalid_argument("axes: expected dim:lo:hi:count, got '" + seg + "'");
        const int dim = static_cast<int>(f[0]);
        if (dim != f[0] || f[3] != std::floor(f[3]) || f[3] < 2)
            throw std::invalid_argument("axes: dim must be an integer and count >= 2 in '" +
                                        seg + "'");
        if (part == 0) {
            axes.dim0 = dim;
            axes.lo0 = f[1];
            axes.hi0 = f[2];
            axes.n0 = static_cast<std::size_t>(f[3]);
        } else {
            axes.dim1 = dim;
            axes.lo1 = f[1];
            axes.hi1 = f[2];
            axes.n1 = static_cast<std::size_t>(f[3]);
        }
        seen[part] = true;
        ++part;
        pos = next + 1;
    }
    if (!seen[0] || !seen[1] || pos < arg.size())
        throw std::invalid_argument("axes: expected exactly two dim:lo:hi:count segments");
    return axes;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long seed_override,
              const std::string& resume_path) {
    TrainRecipe recipe = load_train_recipe(config_path);
    if (seed_override >= 0) recipe.train.seed = static_cast<std::uint64_t>(seed_override);
    const ControlAffineSystem sys = instantiate_system(recipe.system);
    const ConstraintTree tree = instantiate_tree(sys, recipe.environment);
    finalize_model(recipe, sys);

    fs::create_directories(out_dir);
    const std::string ck_path = (fs::path(out_dir) / "checkpoint.json").string();
    const std::string csv_path = (fs::path(out_dir) / "train_log.csv").string();

    Checkpoint resume;
    const bool resuming = !resume_path.empty();
    if (resuming) resume = load_checkpoint(resume_path);

    const JointDataset ds = build_dataset(
        recipe.environment.ranges, sys.domain_lower, sys.domain_upper,
        recipe.train.dataset.environments, recipe.train.dataset.states_per_env,
        recipe.train.seed, recipe.train.dataset.shared_state_pool);

    const TrainOutput out =
        train(recipe, sys, tree, ds, ck_path, csv_path, resuming ? &resume : nullptr);
    std::cout << "steps: " << out.steps << "\n"
              << "loss: total " << format_double(out.final_loss.total) << " hj "
              << format_double(out.final_loss.hj) << " cbf " << format_double(out.final_loss.cbf)
              << "\n"
              << "checkpoint: " << ck_path << "\n"
              << "log: " << csv_path << "\n";
    return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_path,
                 const std::string& ck_override) {
    Scenario sc = load_scenario(scenario_path);
    const std::string ck_path = ck_override.empty() ? sc.checkpoint : ck_override;
    if (ck_path.empty())
        throw std::invalid_argument("scenario.checkpoint: missing (or pass --checkpoint)");
    const Checkpoint ck = load_checkpoint(ck_path);
    if (ck.system.name != sc.system.name)
        throw std::invalid_argument("scenario system '" + sc.system.name +
                                    "' does not match the checkpoint's '" + ck.system.name + "'");
    // keys absent from the scenario inherit the trained model's values
    {
        const ju::json j = ju::parse_text(read_text_file(scenario_path), "scenario");
        if (!j.contains("gamma")) sc.gamma = ck.model.gamma;
        if (!j.contains("beta")) sc.beta = ck.model.beta;
    }

    const Trajectory traj = simulate(sc, ck.params);
    write_text_file_atomic(out_path, trajectory_to_csv(traj));

    double cmin = 1e300;
    std::size_t fallback = 0;
    for (const auto& r : traj.records) {
        cmin = std::min(cmin, r.c);
        if (r.status != FilterStatus::optimal) ++fallback;
    }
    std::cout << "steps: " << traj.records.size() << (traj.aborted ? " (aborted)" : "") << "\n"
              << "min c: " << format_double(cmin) << "\n"
              << "fallback steps: " << fallback << "\n"
              << "final state:";
    for (double v : traj.final_state) std::cout << " " << format_double(v);
    std::cout << "\ntrajectory: " << out_path << "\n";
    if (traj.aborted) std::cerr << "integration blew up; partial trajectory saved\n";
    return traj.aborted ? 2 : 0;
}

int cmd_grid(const std::string& ck_path, const std::string& env_arg, const std::string& axes_arg,
             const std::string& base_arg, double beta_override, const std::string& out_path) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const ControlAffineSystem sys = instantiate_system(ck.system);
    const ConstraintTree tree =
        build_tree(sys.state_dim, ck.environment.param_dim, ck.environment.tree);
    const Vec e = parse_env_values(env_arg);
    const GridAxes axes = parse_axes(axes_arg, sys.state_dim, parse_env_values(base_arg));
    const double beta = beta_override > 0.0 ? beta_override : ck.model.beta;
    const GridReport g = eval_grid(ck.params, tree, e, axes, beta);
    write_text_file_atomic(out_path, grid_to_csv(g));
    std::cout << "nodes: " << g.h.size() << "\ngrid: " << out_path << "\n";
    return 0;
}

int cmd_oracle(const std::string& system_name, const std::string& config_path,
               const std::string& env_arg, const std::string& axes_arg, double gamma, double dt,
               long max_iters, double tol, const std::string& out_path) {
    const TrainRecipe recipe = load_train_recipe(config_path);
    if (recipe.system.name != system_name)
        throw std::invalid_argument("config system '" + recipe.system.name +
                                    "' does not match --system " + system_name);
    const ControlAffineSystem sys = instantiate_system(recipe.system);
    const ConstraintTree tree = instantiate_tree(sys, recipe.environment);
    const Vec e = parse_env_values(env_arg);
    const GridAxes axes = parse_axes(axes_arg, sys.state_dim, {});
    if (max_iters < 1) throw std::invalid_argument("--max-iters must be positive");
    const KernelGrid kg = grid_viability_kernel(sys, tree, e, axes, gamma, dt,
                                                static_cast<std::size_t>(max_iters), tol);

    std::string csv = "x0,x1,b,mask,c\n";
    for (std::size_t i0 = 0; i0 < kg.axes.n0; ++i0) {
        const std::string c0 = format_double(grid_coord(kg.axes.lo0, kg.axes.hi0, i0, kg.axes.n0));
        for (std::size_t i1 = 0; i1 < kg.axes.n1; ++i1) {
            const std::size_t idx = i0 * kg.axes.n1 + i1;
            csv += c0 + "," + format_double(grid_coord(kg.axes.lo1, kg.axes.hi1, i1, kg.axes.n1)) +
                   "," + format_double(kg.values[idx]) + "," + (kg.mask[idx] ? "1" : "0") + "," +
                   format_double(kg.c[idx]) + "\n";
        }
    }
    write_text_file_atomic(out_path, csv);
    std::cout << "iterations: " << kg.iters << "\n"
              << "final delta: " << format_double(kg.final_delta) << "\n"
              << "kernel: " << out_path << "\n";
    if (!kg.converged)
        std::cerr << "did not converge within " << max_iters
                  << " iterations (last update " << format_double(kg.final_delta) << ")\n";
    return 0;
}

int cmd_check(const std::string& ck_path, long samples, long seed) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const ControlAffineSystem sys = instantiate_system(ck.system);
    const ConstraintTree tree =
        build_tree(sys.state_dim, ck.environment.param_dim, ck.environment.tree);
    for (const auto& [ptr, len] : tensor_views(ck.params))
        for (std::size_t i = 0; i < len; ++i)
            if (!std::isfinite(ptr[i]))
                throw std::invalid_argument("checkpoint holds non-finite parameters");
    if (samples < 1) throw std::invalid_argument("--samples must be positive");

    const int envs = ck.environment.param_dim > 0 ? 25 : 1;
    const int per = static_cast<int>((samples + envs - 1) / envs);
    const JointDataset ds =
        build_dataset(ck.environment.ranges, sys.domain_lower, sys.domain_upper, envs, per,
                      static_cast<std::uint64_t>(seed));

    double max_gap = -1e300, sum_r2 = 0.0, max_r = 0.0, sum_v2 = 0.0;
    Vec xi(static_cast<std::size_t>(tree.n_x + tree.n_e));
    Vec x(static_cast<std::size_t>(tree.n_x)), e(static_cast<std::size_t>(tree.n_e));
    const std::size_t total = ds.count();
    for (std::size_t k = 0; k < total; ++k) {
        ds.assemble(k, xi.data());
        std::copy(xi.begin(), xi.begin() + tree.n_x, x.begin());
        std::copy(xi.begin() + tree.n_x, xi.end(), e.begin());
        const SampleEval ev =
            eval_sample(ck.params, sys, tree, x, e, ck.model.gamma, ck.model.beta);
        max_gap = std::max(max_gap, ev.h - ev.c_lower);  // containment: h <= smoothed c
        sum_r2 += ev.residual * ev.residual;
        max_r = std::max(max_r, std::fabs(ev.residual));
        sum_v2 += ev.violation * ev.violation;
    }
    const double n = static_cast<double>(total);
    std::cout << "samples: " << total << "\n"
              << "containment max(h - smoothed c): " << format_double(max_gap) << "\n"
              << "pde residual mean square: " << format_double(sum_r2 / n) << "\n"
              << "pde residual max |.|: " << format_double(max_r) << "\n"
              << "feasibility violation mean square: " << format_double(sum_v2 / n) << "\n"
              << "step: " << ck.step << "\n";
    if (max_gap > 1e-12) {
        std::cerr << "containment violated\n";
        return 1;
    }
    return 0;
}

template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learned control-barrier operator toolkit"};
    app.require_subcommand(1);

    std::string config, out, resume, scenario, checkpoint, env_arg, axes_arg, base_arg, system;
    long seed = -1, max_iters = 20000, samples = 2000, check_seed = 1;
    double beta = 0.0, gamma = 1.0, dt = 0.0, tol = 1e-6;

    CLI::App* c_train = app.add_subcommand("train", "fit the barrier operator from a recipe");
    c_train->add_option("--config", config, "training recipe json")->required();
    c_train->add_option("--out", out, "output directory")->required();
    c_train->add_option("--seed", seed, "override the recipe seed");
    c_train->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* c_sim = app.add_subcommand("simulate", "run a closed-loop scenario");
    c_sim->add_option("--scenario", scenario, "scenario json")->required();
    c_sim->add_option("--out", out, "trajectory csv path")->required();
    c_sim->add_option("--checkpoint", checkpoint, "override the scenario's checkpoint");

    CLI::App* c_grid = app.add_subcommand("grid", "evaluate the barrier on a state grid");
    c_grid->add_option("--checkpoint", checkpoint, "trained checkpoint json")->required();
    c_grid->add_option("--env", env_arg, "parameters: \"1,8,0\", \"[1,8,0]\" or @file.json");
    c_grid->add_option("--axes", axes_arg, "two dim:lo:hi:count segments, comma separated")
        ->required();
    c_grid->add_option("--base", base_arg, "values for the swept-over state dims (default 0)");
    c_grid->add_option("--beta", beta, "smooth-min sharpness (default: the model's)");
    c_grid->add_option("--out", out, "grid csv path")->required();

    CLI::App* c_oracle =
        app.add_subcommand("oracle", "grid value iteration for the invariant set");
    c_oracle->add_option("--system", system, "system name (2-state only)")->required();
    c_oracle->add_option("--config", config, "recipe json naming the constraint tree")
        ->required();
    c_oracle->add_option("--env", env_arg, "parameters: \"1,8,0\", \"[1,8,0]\" or @file.json");
    c_oracle->add_option("--axes", axes_arg, "two dim:lo:hi:count segments")->required();
    c_oracle->add_option("--gamma", gamma, "decay rate (default 1)");
    c_oracle->add_option("--dt", dt, "iteration step; 0 picks the stable maximum");
    c_oracle->add_option("--max-iters", max_iters, "iteration cap (default 20000)");
    c_oracle->add_option("--tol", tol, "stop when the max update drops below this");
    c_oracle->add_option("--out", out, "kernel csv path")->required();

    CLI::App* c_check = app.add_subcommand("check", "audit a checkpoint's invariants");
    c_check->add_option("--checkpoint", checkpoint, "trained checkpoint json")->required();
    c_check->add_option("--samples", samples, "joint samples to audit (default 2000)");
    c_check->add_option("--seed", check_seed, "sampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (*c_train) return guarded([&] { return cmd_train(config, out, seed, resume); });
    if (*c_sim) return guarded([&] { return cmd_simulate(scenario, out, checkpoint); });
    if (*c_grid)
        return guarded([&] { return cmd_grid(checkpoint, env_arg, axes_arg, base_arg, beta, out); });
    if (*c_oracle)
        return guarded([&] {
            return cmd_oracle(system, config, env_arg, axes_arg, gamma, dt, max_iters, tol, out);
        });
    if (*c_check) return guarded([&] { return cmd_check(checkpoint, samples, check_seed); });
    return 1;
}
