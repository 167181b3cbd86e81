#include "pampose/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pampose/checkpoint.hpp"
#include "pampose/optim.hpp"

namespace pampose::harness {

namespace {

// independent stream labels hashed into scene seeds
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kRefinerStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kClassifyTrainStream = 4;
constexpr std::uint64_t kClassifyEvalStream = 5;

std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return Rng::mix(Rng::mix(seed, stream), index);
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    os << text;
    if (!os) {
        throw IoError("write failed for '" + path + "'");
    }
}

}  // namespace

Pose iterative_refine(const Pose& initial, const SceneSample& observed, const Refiner& refiner,
                      int iterations) {
    if (iterations < 0) {
        throw ContractError("iterative_refine: iterations must be >= 0");
    }
    Pose estimate = initial;
    for (int k = 0; k < iterations; ++k) {
        const Pose residual = refiner(estimate, observed);
        estimate = geometry::compose_poses(residual, estimate);
    }
    return estimate;
}

std::vector<ObjectModel> build_models(const RunConfig& config) {
    std::vector<ObjectModel> models;
    for (std::size_t i = 0; i < config.objects.size(); ++i) {
        const data::ShapeKind kind = data::shape_from_string(config.objects[i]);
        models.push_back(
            data::gen_object(kind, config.model_points, Rng::mix(config.seed, 100 + i)));
    }
    return models;
}

metrics::MetricReport evaluate(const std::vector<ObjectModel>& models, const RunConfig& config,
                               const Predictor& predict, const Predictor& refine) {
    const data::PoseRange range{config.translation_range};
    std::vector<metrics::ObjectErrorSet> unrefined(models.size()), refined(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
        unrefined[m].id = models[m].id;
        unrefined[m].diameter = models[m].diameter;
        refined[m].id = models[m].id;
        refined[m].diameter = models[m].diameter;
    }
    for (int s = 0; s < config.eval_scenes; ++s) {
        const std::size_t m = static_cast<std::size_t>(s) % models.size();
        const ObjectModel& model = models[m];
        const SceneSample scene =
            data::gen_scene(model, range, config.occlusion, config.noise_sigma,
                            scene_seed(config.seed, kEvalStream, static_cast<std::uint64_t>(s)),
                            config.scene_points);
        const Pose pose = predict(scene, model);
        unrefined[m].add_errors.push_back(losses::add_loss(model, scene.gt, pose));
        unrefined[m].adds_errors.push_back(losses::adds_loss(model, scene.gt, pose));
        unrefined[m].pose_errors.push_back(metrics::pose_error(model, scene.gt, pose));
        if (refine) {
            const Pose rpose = refine(scene, model);
            refined[m].add_errors.push_back(losses::add_loss(model, scene.gt, rpose));
            refined[m].adds_errors.push_back(losses::adds_loss(model, scene.gt, rpose));
            refined[m].pose_errors.push_back(metrics::pose_error(model, scene.gt, rpose));
        }
    }
    metrics::MetricReport report;
    report.seed = config.seed;
    report.config_hash = config::config_hash(config);
    report.unrefined = metrics::summarize(unrefined);
    if (refine) report.refined = metrics::summarize(refined);
    return report;
}

namespace {

// subset of a model's points and the same subset under the gt pose
std::pair<std::vector<geometry::Vec3>, std::vector<geometry::Vec3>> loss_point_pairs(
    const ObjectModel& model, const Pose& base, const Pose& gt, int loss_points) {
    std::size_t m = model.cloud.points.size();
    if (loss_points > 0) m = std::min(m, static_cast<std::size_t>(loss_points));
    std::vector<geometry::Vec3> from, to;
    from.reserve(m);
    to.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        from.push_back(geometry::apply_pose(base, model.cloud.points[j]));
        to.push_back(geometry::apply_pose(gt, model.cloud.points[j]));
    }
    return {std::move(from), std::move(to)};
}

struct TrainedNets {
    ag::Graph graph;
    std::optional<posenet::PoseNet> net;
    std::optional<posenet::RefinerNet> refiner;
    std::size_t watermark = 0;
    std::vector<double> epoch_losses;
    std::vector<double> refiner_epoch_losses;
};

Pose net_predict(ag::Graph& g, const posenet::PoseNet& net, std::size_t watermark,
                 const SceneSample& scene) {
    const posenet::PredictionSet preds = [&] {
        ag::Tensor feats = net.extract_features(g, scene.observed);
        const posenet::PoseNet::DenseNodes nodes = net.predict_dense(g, feats, scene.observed);
        return net.prediction_values(g, nodes);
    }();
    g.truncate(watermark);
    return posenet::select_pose(preds).first;
}

void train_nets(const RunConfig& config, TrainedNets& out) {
    Rng init_rng(Rng::mix(config.seed, 7));
    out.net.emplace(out.graph, config.net, init_rng);
    if (config.refiner_enabled) {
        out.refiner.emplace(out.graph, config.net, init_rng);
    }
    out.watermark = out.graph.mark();

    const std::vector<ObjectModel> models = build_models(config);
    const data::PoseRange range{config.translation_range};
    const losses::LossConfig loss_config{config.loss_w};

    // main network
    {
        std::vector<ag::Tensor> params;
        for (ag::Tensor t : out.graph.parameters()) {
            if (out.graph.name(t).rfind("net.", 0) == 0) params.push_back(t);
        }
        ag::Adam opt(out.graph, params, config.learning_rate);
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            double acc = 0.0;
            for (int s = 0; s < config.scenes_per_epoch; ++s) {
                const ObjectModel& model = models[static_cast<std::size_t>(s) % models.size()];
                const std::uint64_t sseed = scene_seed(
                    config.seed, kTrainStream,
                    static_cast<std::uint64_t>(epoch) * 1000003ULL + static_cast<std::uint64_t>(s));
                try {
                    const SceneSample scene = data::gen_scene(
                        model, range, config.occlusion, config.noise_sigma, sseed,
                        config.scene_points);
                    ag::Tensor feats = out.net->extract_features(out.graph, scene.observed);
                    const posenet::PoseNet::DenseNodes nodes =
                        out.net->predict_dense(out.graph, feats, scene.observed);
                    ag::Tensor loss = losses::dense_pose_loss(
                        out.graph, nodes.rotations, nodes.translations, nodes.confidences, model,
                        scene.gt, loss_config, config.loss_model_points);
                    acc += out.graph.value_scalar(loss);
                    out.graph.backward(loss);
                    opt.step();
                    out.graph.truncate(out.watermark);
                } catch (const NumericError& e) {
                    throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                       ", scene " + std::to_string(s) + ": " + e.what());
                }
            }
            out.epoch_losses.push_back(acc / config.scenes_per_epoch);
        }
    }

    // refiner on the frozen network
    if (config.refiner_enabled) {
        std::vector<ag::Tensor> params;
        for (ag::Tensor t : out.graph.parameters()) {
            if (out.graph.name(t).rfind("refiner.", 0) == 0) params.push_back(t);
        }
        ag::Adam opt(out.graph, params, config.learning_rate);
        const int iters = std::max(1, config.refine_iters);
        for (int epoch = 0; epoch < config.refiner_epochs; ++epoch) {
            double acc = 0.0;
            int steps = 0;
            for (int s = 0; s < config.scenes_per_epoch; ++s) {
                const ObjectModel& model = models[static_cast<std::size_t>(s) % models.size()];
                const std::uint64_t sseed = scene_seed(
                    config.seed, kRefinerStream,
                    static_cast<std::uint64_t>(epoch) * 1000003ULL + static_cast<std::uint64_t>(s));
                try {
                    const SceneSample scene = data::gen_scene(
                        model, range, config.occlusion, config.noise_sigma, sseed,
                        config.scene_points);
                    Pose current = net_predict(out.graph, *out.net, out.watermark, scene);
                    for (int k = 0; k < iters; ++k) {
                        const geometry::PointCloud moved =
                            geometry::transform_points(current, model.cloud);
                        const posenet::RefinerNet::ResidualNodes rn =
                            out.refiner->forward(out.graph, moved, scene.observed);
                        auto [from, to] =
                            loss_point_pairs(model, current, scene.gt, config.loss_model_points);
                        ag::Tensor loss = losses::pose_loss(out.graph, rn.quat, rn.trans, from, to,
                                                            model.symmetric);
                        acc += out.graph.value_scalar(loss);
                        ++steps;
                        const auto qv = out.graph.values(rn.quat);
                        const auto tv = out.graph.values(rn.trans);
                        const Pose residual =
                            geometry::make_pose(geometry::Quat{qv[0], qv[1], qv[2], qv[3]},
                                                geometry::Vec3{tv[0], tv[1], tv[2]});
                        out.graph.backward(loss);
                        opt.step();
                        out.graph.truncate(out.watermark);
                        current = geometry::compose_poses(residual, current);
                    }
                } catch (const NumericError& e) {
                    throw NumericError("refiner diverged at epoch " + std::to_string(epoch) +
                                       ", scene " + std::to_string(s) + ": " + e.what());
                }
            }
            out.refiner_epoch_losses.push_back(steps > 0 ? acc / steps : 0.0);
        }
    }
}

metrics::MetricReport report_for(TrainedNets& nets, const RunConfig& config) {
    const std::vector<ObjectModel> models = build_models(config);
    Predictor predict = [&](const SceneSample& scene, const ObjectModel&) {
        return net_predict(nets.graph, *nets.net, nets.watermark, scene);
    };
    Predictor refine = nullptr;
    if (nets.refiner) {
        refine = [&](const SceneSample& scene, const ObjectModel& model) {
            const Pose initial = net_predict(nets.graph, *nets.net, nets.watermark, scene);
            Refiner step = [&](const Pose& current, const SceneSample& observed) {
                const geometry::PointCloud moved =
                    geometry::transform_points(current, model.cloud);
                return nets.refiner->predict(nets.graph, moved, observed.observed);
            };
            return iterative_refine(initial, scene, step, config.refine_iters);
        };
    }
    metrics::MetricReport report = evaluate(models, config, predict, refine);
    report.parameter_counts["total"] = nets.graph.parameter_count();
    report.parameter_counts["net"] = nets.net->parameter_count();
    report.parameter_counts["net_pam"] = nets.net->pam_param_total();
    if (nets.refiner) report.parameter_counts["refiner"] = nets.refiner->parameter_count();
    return report;
}

std::string loss_curve_csv(const TrainResult& result) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,refiner_loss\n";
    const std::size_t n =
        std::max(result.epoch_losses.size(), result.refiner_epoch_losses.size());
    for (std::size_t i = 0; i < n; ++i) {
        os << i << ',';
        if (i < result.epoch_losses.size()) os << result.epoch_losses[i];
        os << ',';
        if (i < result.refiner_epoch_losses.size()) os << result.refiner_epoch_losses[i];
        os << '\n';
    }
    return os.str();
}

}  // namespace

TrainResult train(const RunConfig& config, const std::string& out_dir) {
    TrainedNets nets;
    train_nets(config, nets);
    TrainResult result;
    result.epoch_losses = std::move(nets.epoch_losses);
    result.refiner_epoch_losses = std::move(nets.refiner_epoch_losses);
    result.report = report_for(nets, config);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto kv = config::to_kv(config);
        checkpoint::save(out_dir + "/checkpoint.bin", nets.graph, kv);
        write_file(out_dir + "/report.json", metrics::report_to_json(result.report));
        write_file(out_dir + "/report.csv", metrics::report_to_csv(result.report));
        write_file(out_dir + "/loss_curve.csv", loss_curve_csv(result));
        write_file(out_dir + "/config.resolved.cfg", config::render_kv(kv));
    }
    return result;
}

metrics::MetricReport evaluate_checkpoint(const std::string& checkpoint_path,
                                          const std::string& out_dir) {
    const checkpoint::Checkpoint ckpt = checkpoint::read(checkpoint_path);
    const RunConfig config = config::from_kv(ckpt.config);
    TrainedNets nets;
    Rng init_rng(Rng::mix(config.seed, 7));
    nets.net.emplace(nets.graph, config.net, init_rng);
    if (config.refiner_enabled) nets.refiner.emplace(nets.graph, config.net, init_rng);
    nets.watermark = nets.graph.mark();
    checkpoint::restore(nets.graph, ckpt);
    metrics::MetricReport report = report_for(nets, config);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_file(out_dir + "/report.json", metrics::report_to_json(report));
        write_file(out_dir + "/report.csv", metrics::report_to_csv(report));
    }
    return report;
}

// --- ablations -----------------------------------------------------------------

std::vector<AblationArm> paths_grid() {
    return {
        {"base", {{"pam.enable_cap", "false"}, {"pam.enable_gap", "false"}}},
        {"cap", {{"pam.enable_cap", "true"}, {"pam.enable_gap", "false"}}},
        {"gap", {{"pam.enable_cap", "false"}, {"pam.enable_gap", "true"}}},
        {"cap_gap", {{"pam.enable_cap", "true"}, {"pam.enable_gap", "true"}}},
    };
}

std::vector<AblationArm> reduction_grid() {
    std::vector<AblationArm> arms;
    for (int r : {4, 8, 16, 32, 64}) {
        arms.push_back({"r" + std::to_string(r), {{"pam.reduction_ratio", std::to_string(r)}}});
    }
    return arms;
}

SweepResult ablation_sweep(const RunConfig& base, const std::vector<AblationArm>& arms,
                           int threads) {
    if (arms.size() < 2) {
        throw ContractError("ablation_sweep: need at least 2 arms");
    }
    SweepResult result;
    result.arms.resize(arms.size());

    auto run_arm = [&](std::size_t idx) {
        ArmResult& arm = result.arms[idx];
        arm.name = arms[idx].name;
        try {
            auto kv = config::to_kv(base);
            for (const auto& [k, v] : arms[idx].overrides) kv[k] = v;
            const RunConfig cfg = config::from_kv(kv);
            TrainedNets nets;
            train_nets(cfg, nets);
            const metrics::MetricReport report = report_for(nets, cfg);
            arm.total_params = nets.net->parameter_count();
            arm.pam_params = nets.net->pam_param_total();
            arm.final_train_loss = nets.epoch_losses.empty() ? 0.0 : nets.epoch_losses.back();
            arm.aggregate = report.unrefined.aggregate;
            arm.ok = true;
        } catch (const std::exception& e) {
            arm.ok = false;
            arm.error = e.what();
        }
    };

    if (threads <= 1) {
        for (std::size_t i = 0; i < arms.size(); ++i) run_arm(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        while (next < arms.size()) {
            const std::size_t batch =
                std::min<std::size_t>(static_cast<std::size_t>(threads), arms.size() - next);
            for (std::size_t i = 0; i < batch; ++i) pool.emplace_back(run_arm, next + i);
            for (auto& t : pool) t.join();
            pool.clear();
            next += batch;
        }
    }
    for (const ArmResult& arm : result.arms) {
        if (!arm.ok) result.all_ok = false;
    }
    return result;
}

std::string sweep_to_csv(const SweepResult& result) {
    std::ostringstream os;
    os.precision(17);
    os << "arm,ok,total_params,pam_params,final_train_loss,add_auc,adds_auc,acc_at_2cm,"
          "mean_error,mean_error_ratio\n";
    for (const ArmResult& arm : result.arms) {
        os << arm.name << ',' << (arm.ok ? "1" : "0") << ',' << arm.total_params << ','
           << arm.pam_params << ',' << arm.final_train_loss << ',' << arm.aggregate.add_auc << ','
           << arm.aggregate.adds_auc << ',' << arm.aggregate.acc_at_2cm << ','
           << arm.aggregate.mean_error << ',' << arm.aggregate.mean_error_ratio << '\n';
    }
    return os.str();
}

std::string sweep_to_json(const SweepResult& result, const RunConfig& base) {
    nlohmann::json doc;
    doc["schema"] = "pampose-sweep-v1";
    doc["base_config_hash"] = config::config_hash(base);
    nlohmann::json arms = nlohmann::json::array();
    for (const ArmResult& arm : result.arms) {
        nlohmann::json a;
        a["name"] = arm.name;
        a["ok"] = arm.ok;
        if (!arm.ok) a["error"] = arm.error;
        a["total_params"] = arm.total_params;
        a["pam_params"] = arm.pam_params;
        a["final_train_loss"] = arm.final_train_loss;
        a["add_auc"] = arm.aggregate.add_auc;
        a["adds_auc"] = arm.aggregate.adds_auc;
        a["acc_at_2cm"] = arm.aggregate.acc_at_2cm;
        a["mean_error"] = arm.aggregate.mean_error;
        a["mean_error_ratio"] = arm.aggregate.mean_error_ratio;
        arms.push_back(a);
    }
    doc["arms"] = arms;
    return doc.dump(2) + "\n";
}

// --- classification ---------------------------------------------------------------

namespace {

geometry::PointCloud classification_cloud(int label, int points, double noise_sigma,
                                          std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xC1A55ULL));
    ObjectModel model;
    switch (label) {
        case 0:
            model = data::gen_sphere(points, rng.next_u64(), rng.uniform(0.25, 0.6));
            break;
        case 1:
            model = data::gen_box(points, rng.next_u64(),
                                  geometry::Vec3{rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5),
                                                 rng.uniform(0.1, 0.5)});
            break;
        default:
            model = data::gen_cylinder(points, rng.next_u64(), rng.uniform(0.05, 0.2),
                                       rng.uniform(0.15, 0.5));
            break;
    }
    // random orientation, zero-centered, xyz only
    const Pose pose = geometry::make_pose(
        geometry::Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()},
        geometry::Vec3{0, 0, 0});
    geometry::PointCloud cloud = geometry::transform_points(pose, model.cloud);
    cloud.feature_dim = 0;
    cloud.features.clear();
    geometry::Vec3 centroid{0, 0, 0};
    for (const auto& p : cloud.points)
        for (int d = 0; d < 3; ++d) centroid[d] += p[d];
    for (int d = 0; d < 3; ++d) centroid[d] /= static_cast<double>(cloud.points.size());
    for (auto& p : cloud.points) {
        for (int d = 0; d < 3; ++d) {
            p[d] -= centroid[d];
            p[d] += noise_sigma * rng.normal();
        }
    }
    return cloud;
}

struct ClassifyArm {
    double accuracy = 0.0;
    std::int64_t params = 0;
    std::vector<double> losses;
};

ClassifyArm run_classify_arm(const RunConfig& config, bool with_pam) {
    const auto& cc = config.classify;
    posenet::ClassifierConfig net;
    net.pam = config.net.pam;
    net.pam.enable_cap = with_pam && config.net.pam.enable_cap;
    net.pam.enable_gap = with_pam && config.net.pam.enable_gap;

    ag::Graph g;
    Rng init_rng(Rng::mix(config.seed, 11));
    posenet::ShapeClassifier classifier(g, net, init_rng);
    ag::Adam opt(g, g.parameters(), cc.learning_rate);
    const std::size_t watermark = g.mark();

    ClassifyArm arm;
    arm.params = classifier.parameter_count();
    for (int epoch = 0; epoch < cc.epochs; ++epoch) {
        double acc = 0.0;
        for (int s = 0; s < cc.train_samples; ++s) {
            const int label = s % net.n_classes;
            const geometry::PointCloud cloud = classification_cloud(
                label, cc.points, cc.noise_sigma,
                scene_seed(config.seed, kClassifyTrainStream, static_cast<std::uint64_t>(s)));
            ag::Tensor log_probs = g.log_softmax(classifier.logits(g, cloud));
            std::vector<double> onehot(static_cast<std::size_t>(net.n_classes), 0.0);
            onehot[static_cast<std::size_t>(label)] = 1.0;
            ag::Tensor target = g.constant({net.n_classes, 1}, std::move(onehot));
            ag::Tensor loss = g.scale(g.sum(g.mul(log_probs, target)), -1.0);
            acc += g.value_scalar(loss);
            g.backward(loss);
            opt.step();
            g.truncate(watermark);
        }
        arm.losses.push_back(acc / cc.train_samples);
    }

    int hits = 0;
    for (int s = 0; s < cc.eval_samples; ++s) {
        const int label = s % net.n_classes;
        const geometry::PointCloud cloud = classification_cloud(
            label, cc.points, cc.noise_sigma,
            scene_seed(config.seed, kClassifyEvalStream, static_cast<std::uint64_t>(s)));
        const std::vector<double> probs = classifier.classify(g, cloud);
        const int pred = static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        if (pred == label) ++hits;
    }
    arm.accuracy = static_cast<double>(hits) / cc.eval_samples;
    return arm;
}

}  // namespace

ClassifyResult classify_experiment(const RunConfig& config) {
    const ClassifyArm pam_arm = run_classify_arm(config, true);
    const ClassifyArm base_arm = run_classify_arm(config, false);
    ClassifyResult result;
    result.accuracy_pam = pam_arm.accuracy;
    result.accuracy_base = base_arm.accuracy;
    result.params_pam = pam_arm.params;
    result.params_base = base_arm.params;
    result.losses_pam = pam_arm.losses;
    result.losses_base = base_arm.losses;
    return result;
}

std::string classify_to_json(const ClassifyResult& result, const RunConfig& config) {
    nlohmann::json doc;
    doc["schema"] = "pampose-classify-v1";
    doc["config_hash"] = config::config_hash(config);
    doc["accuracy_pam"] = result.accuracy_pam;
    doc["accuracy_base"] = result.accuracy_base;
    doc["params_pam"] = result.params_pam;
    doc["params_base"] = result.params_base;
    doc["losses_pam"] = result.losses_pam;
    doc["losses_base"] = result.losses_base;
    return doc.dump(2) + "\n";
}

}  // namespace pampose::harness
