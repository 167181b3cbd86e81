// Command-line front end: train / eval / refine / ablate / classify / gen-data.
// Exit codes: 0 success, 2 validation failure, 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pampose/checkpoint.hpp"
#include "pampose/config.hpp"
#include "pampose/data.hpp"
#include "pampose/harness.hpp"

namespace {

using namespace pampose;

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> sets;  // key=value overrides
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_file, "config file (key = value lines)");
    cmd->add_option("--set", args.sets, "override a config key, e.g. --set seed=7")
        ->take_all();
}

config::RunConfig resolve_config(const ConfigArgs& args) {
    std::map<std::string, std::string> kv;
    if (!args.config_file.empty()) kv = config::parse_file(args.config_file);
    for (const std::string& s : args.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("--set expects key=value, got '" + s + "'");
        }
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return config::from_kv(kv);
}

void print_schema() {
    std::printf("%-28s %-12s %-22s %s\n", "key", "type", "default", "description");
    for (const auto& spec : config::schema()) {
        std::printf("%-28s %-12s %-22s %s\n", spec.key.c_str(), spec.type.c_str(),
                    spec.default_value.c_str(), spec.help.c_str());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "'");
    os << text;
}

int cmd_train(const ConfigArgs& cargs, const std::string& out_dir) {
    const config::RunConfig cfg = resolve_config(cargs);
    const harness::TrainResult result = harness::train(cfg, out_dir);
    const auto& agg = result.report.unrefined.aggregate;
    std::printf("train: %d epochs done, final loss %.6f\n", cfg.epochs,
                result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back());
    std::printf("eval (unrefined): mean_error %.6f m, error/diameter %.4f, <2cm %.3f\n",
                agg.mean_error, agg.mean_error_ratio, agg.acc_at_2cm);
    if (result.report.refined) {
        const auto& ragg = result.report.refined->aggregate;
        std::printf("eval (refined K=%d): mean_error %.6f m, error/diameter %.4f, <2cm %.3f\n",
                    cfg.refine_iters, ragg.mean_error, ragg.mean_error_ratio, ragg.acc_at_2cm);
    }
    std::printf("artifacts in %s\n", out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& out_dir) {
    const metrics::MetricReport report = harness::evaluate_checkpoint(ckpt_path, out_dir);
    std::printf("%s", metrics::report_to_csv(report).c_str());
    return 0;
}

int cmd_refine(const std::string& ckpt_path, const std::string& model_path,
               const std::string& cloud_path, const std::string& init_path, int iters,
               const std::string& out_path) {
    const checkpoint::Checkpoint ckpt = checkpoint::read(ckpt_path);
    const config::RunConfig cfg = config::from_kv(ckpt.config);
    if (!cfg.refiner_enabled) {
        throw ValidationError("refine: checkpoint was trained without a refiner");
    }
    ag::Graph g;
    Rng init_rng(Rng::mix(cfg.seed, 7));
    posenet::PoseNet net(g, cfg.net, init_rng);
    posenet::RefinerNet refiner(g, cfg.net, init_rng);
    checkpoint::restore(g, ckpt);

    losses::ObjectModel model;
    model.id = "file";
    model.cloud = data::read_cloud(model_path);
    model.diameter = losses::max_pairwise_distance(model.cloud.points);

    harness::SceneSample scene;
    scene.observed = data::read_cloud(cloud_path);
    const geometry::Pose init = data::read_pose(init_path);

    harness::Refiner step = [&](const geometry::Pose& current,
                                const harness::SceneSample& observed) {
        const geometry::PointCloud moved = geometry::transform_points(current, model.cloud);
        return refiner.predict(g, moved, observed.observed);
    };
    const geometry::Pose refined = harness::iterative_refine(init, scene, step, iters);
    data::write_pose(out_path, refined);
    std::printf("refined pose written to %s\n", out_path.c_str());
    return 0;
}

int cmd_ablate(const ConfigArgs& cargs, const std::string& grid, const std::string& out_dir,
               int threads) {
    const config::RunConfig cfg = resolve_config(cargs);
    std::vector<harness::AblationArm> arms;
    if (grid == "paths") {
        arms = harness::paths_grid();
    } else if (grid == "reduction") {
        arms = harness::reduction_grid();
    } else {
        throw ValidationError("ablate: unknown grid '" + grid + "' (paths or reduction)");
    }
    const harness::SweepResult result = harness::ablation_sweep(cfg, arms, threads);
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/sweep_" + grid + ".csv", harness::sweep_to_csv(result));
    write_text(out_dir + "/sweep_" + grid + ".json", harness::sweep_to_json(result, cfg));
    std::printf("%s", harness::sweep_to_csv(result).c_str());
    for (const auto& arm : result.arms) {
        if (!arm.ok) std::fprintf(stderr, "arm '%s' failed: %s\n", arm.name.c_str(),
                                  arm.error.c_str());
    }
    return result.all_ok ? 0 : 2;
}

int cmd_classify(const ConfigArgs& cargs, const std::string& out_dir) {
    const config::RunConfig cfg = resolve_config(cargs);
    const harness::ClassifyResult result = harness::classify_experiment(cfg);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_text(out_dir + "/classify_report.json", harness::classify_to_json(result, cfg));
    }
    std::printf("classification accuracy: with attention %.4f (%lld params), "
                "without %.4f (%lld params)\n",
                result.accuracy_pam, static_cast<long long>(result.params_pam),
                result.accuracy_base, static_cast<long long>(result.params_base));
    return 0;
}

int cmd_gen_data(const std::string& shape, int points, std::uint64_t seed, int count,
                 double occlusion, double noise, double translation, int scene_points,
                 const std::string& out_dir) {
    const data::ShapeKind kind = data::shape_from_string(shape);
    const losses::ObjectModel model = data::gen_object(kind, points, seed);
    std::filesystem::create_directories(out_dir);
    data::write_cloud(out_dir + "/model.ply", model.cloud);
    const data::PoseRange range{translation};
    for (int i = 0; i < count; ++i) {
        const auto scene = data::gen_scene(model, range, occlusion, noise,
                                           Rng::mix(seed, 500 + static_cast<unsigned>(i)),
                                           scene_points);
        char idx[16];
        std::snprintf(idx, sizeof(idx), "%03d", i);
        data::write_cloud(out_dir + "/scene_" + idx + ".ply", scene.observed);
        data::write_pose(out_dir + "/pose_" + idx + ".txt", scene.gt);
    }
    std::printf("wrote model.ply and %d scene/pose pairs to %s\n", count, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-cloud pose estimation toolkit"};
    app.require_subcommand(1);

    ConfigArgs train_args, ablate_args, classify_args;
    std::string train_out = "out";
    auto* train_cmd = app.add_subcommand("train", "train the pose network and refiner");
    add_config_options(train_cmd, train_args);
    train_cmd->add_option("--out", train_out, "output directory");

    std::string eval_ckpt, eval_out = "out-eval";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--out", eval_out, "output directory");

    std::string ref_ckpt, ref_model, ref_cloud, ref_init, ref_out = "refined_pose.txt";
    int ref_iters = 2;
    auto* refine_cmd = app.add_subcommand("refine", "refine a pose for a scene file");
    refine_cmd->add_option("--checkpoint", ref_ckpt)->required();
    refine_cmd->add_option("--model", ref_model, "model cloud (PLY)")->required();
    refine_cmd->add_option("--cloud", ref_cloud, "observed cloud (PLY)")->required();
    refine_cmd->add_option("--init", ref_init, "initial pose file")->required();
    refine_cmd->add_option("--iters", ref_iters, "refinement iterations");
    refine_cmd->add_option("--out", ref_out, "output pose file");

    std::string ablate_grid = "paths", ablate_out = "out-ablate";
    int ablate_threads = 2;
    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
    add_config_options(ablate_cmd, ablate_args);
    ablate_cmd->add_option("--grid", ablate_grid, "paths | reduction");
    ablate_cmd->add_option("--out", ablate_out, "output directory");
    ablate_cmd->add_option("--threads", ablate_threads, "concurrent arms");

    std::string classify_out = "out-classify";
    auto* classify_cmd = app.add_subcommand("classify", "three-shape classification experiment");
    add_config_options(classify_cmd, classify_args);
    classify_cmd->add_option("--out", classify_out, "output directory");

    std::string gd_shape = "sphere", gd_out = "data";
    int gd_points = 500, gd_count = 10, gd_scene_points = 96;
    std::uint64_t gd_seed = 42;
    double gd_occlusion = 0.2, gd_noise = 0.001, gd_translation = 0.1;
    auto* gen_cmd = app.add_subcommand("gen-data", "export synthetic model and scene files");
    gen_cmd->add_option("--object", gd_shape, "sphere | box | cylinder");
    gen_cmd->add_option("--points", gd_points, "model points");
    gen_cmd->add_option("--seed", gd_seed);
    gen_cmd->add_option("--count", gd_count, "number of scenes");
    gen_cmd->add_option("--occlusion", gd_occlusion);
    gen_cmd->add_option("--noise", gd_noise);
    gen_cmd->add_option("--translation", gd_translation);
    gen_cmd->add_option("--scene-points", gd_scene_points);
    gen_cmd->add_option("--out", gd_out, "output directory");

    bool show_schema = false;
    app.add_flag("--help-config", show_schema, "print the config schema and exit");

    CLI11_PARSE(app, argc, argv);

    if (show_schema) {
        print_schema();
        return 0;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_args, train_out);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_out);
        if (refine_cmd->parsed())
            return cmd_refine(ref_ckpt, ref_model, ref_cloud, ref_init, ref_iters, ref_out);
        if (ablate_cmd->parsed())
            return cmd_ablate(ablate_args, ablate_grid, ablate_out, ablate_threads);
        if (classify_cmd->parsed()) return cmd_classify(classify_args, classify_out);
        if (gen_cmd->parsed())
            return cmd_gen_data(gd_shape, gd_points, gd_seed, gd_count, gd_occlusion, gd_noise,
                                gd_translation, gd_scene_points, gd_out);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
