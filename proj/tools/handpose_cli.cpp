#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "handpose/eval.hpp"
#include "handpose/pipeline.hpp"
#include "handpose/synth.hpp"

namespace fs = std::filesystem;
using namespace handpose;

namespace {

/// Loads a key=value config file ('#' starts a comment line). Values only
/// apply to options the chosen subcommand knows and the command line left
/// unset, so precedence is flags > config > defaults.
std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::map<std::string, std::string> values;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed config line: " + line);
        std::string key = line.substr(first, eq - first);
        std::string value = line.substr(eq + 1);
        const auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(value);
        if (key.empty()) throw DataError("malformed config line: " + line);
        values[key] = value;
    }
    return values;
}

struct TrainingSet {
    std::vector<TrainFrame> frames;
    std::vector<SkeletonParams> params;
};

TrainingSet load_training_set(const std::string& data_dir) {
    TrainingSet set;
    for (const ManifestEntry& entry :
         load_manifest((fs::path(data_dir) / "manifest.txt").string())) {
        TrainFrame frame;
        frame.cloud = backproject(load_depth_frame(entry.path));
        frame.gt = entry.pose;
        set.frames.push_back(std::move(frame));
        set.params.push_back(entry.params);
    }
    return set;
}

/// Analytic reference normals for every cloud point, re-rendered from the
/// manifest parameters (the stored depth may carry sensor noise; the
/// reference is the clean surface). Renderer normals face the camera, the
/// estimator's convention points away from it.
std::vector<Vec3> reference_normals(const Cloud& cloud, const SkeletonParams& params) {
    const RenderResult render = render_depth(params, cloud.frame.intrinsics);
    std::vector<Vec3> ref(cloud.size(), Vec3(0.0, 0.0, 1.0));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto px = static_cast<std::size_t>(cloud.point_pixel[i]);
        if (render.frame.depth[px] > 0.0f) ref[i] = -render.normals[px];
    }
    return ref;
}

bool scan_threshold_grid(const std::string& spec, double& lo, double& hi, double& step) {
    char tail = 0;
    return std::sscanf(spec.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &tail) == 3 && step > 0.0 &&
           hi >= lo;
}

std::vector<double> parse_threshold_grid(const std::string& spec) {
    double lo = 0.0, hi = 0.0, step = 0.0;
    if (!scan_threshold_grid(spec, lo, hi, step))
        throw DataError("bad threshold grid: " + spec);  // unreachable past the CLI validator
    std::vector<double> grid;
    for (double t = lo; t <= hi + 1e-9; t += step) grid.push_back(t);
    return grid;
}

std::string frame_id(const std::string& path) { return fs::path(path).stem().string(); }

int run(int argc, char** argv) {
    CLI::App app{"Depth-image hand pose estimation with surface-normal forests"};
    app.require_subcommand(1);
    app.fallthrough();  // lets --config appear after the subcommand name
    std::string config_path;
    app.add_option("--config", config_path, "key=value defaults file (flags win)");

    // synth-gen
    auto* synth = app.add_subcommand("synth-gen", "render a synthetic depth dataset");
    SynthConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--count", synth_cfg.count, "frames to render");
    synth->add_option("--seed", synth_cfg.seed, "base RNG seed");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--yaw-range", synth_cfg.yaw_range_deg, "max |yaw| in degrees");
    synth->add_option("--pitch-range", synth_cfg.pitch_range_deg, "max |pitch| in degrees");
    synth->add_option("--roll-range", synth_cfg.roll_range_deg, "max |roll| in degrees");
    synth->add_option("--noise-mm", synth_cfg.noise_mm, "Gaussian depth noise sigma");

    // train-normals
    auto* tnorm = app.add_subcommand("train-normals", "train the surface-normal forest");
    std::string tnorm_data, tnorm_out;
    NormalForestParams norm_params;
    tnorm->add_option("--data", tnorm_data, "dataset directory (with manifest.txt)")->required();
    tnorm->add_option("--out", tnorm_out, "model file to write")->required();
    tnorm->add_option("--trees", norm_params.n_trees, "trees in the forest");
    tnorm->add_option("--depth", norm_params.max_depth, "maximum tree depth");
    tnorm->add_option("--layer-split", norm_params.layer_split, "depth where splits switch angles");

    // train-pose
    auto* tpose = app.add_subcommand("train-pose", "train the full cascade");
    std::string tpose_data, tpose_normal_model, tpose_out, tpose_feature = "normal";
    TrainConfig train_cfg;
    tpose->add_option("--data", tpose_data, "dataset directory (with manifest.txt)")->required();
    tpose->add_option("--normal-model", tpose_normal_model, "trained normal forest")->required();
    tpose->add_option("--out", tpose_out, "bundle directory to write")->required();
    tpose->add_option("--feature", tpose_feature, "split feature family")
        ->check(CLI::IsMember({"normal", "depth"}));
    tpose->add_option("--trees", train_cfg.forest.n_trees, "trees per stage");
    tpose->add_option("--depth", train_cfg.forest.max_depth, "maximum tree depth");
    tpose->add_option("--offset-range", train_cfg.forest.offset_range_mm, "probe offset range, mm");
    tpose->add_option("--seed", train_cfg.forest.seed, "training seed");

    // estimate
    auto* est = app.add_subcommand("estimate", "run the cascade over depth frames");
    std::string est_bundle, est_input, est_out;
    int est_points = -1;
    std::uint64_t est_seed = 0;
    est->add_option("--bundle", est_bundle, "trained bundle directory")->required();
    est->add_option("--input", est_input, "directory of depth frames")->required();
    est->add_option("--out", est_out, "pose text file to write")->required();
    est->add_option("--points-per-stage", est_points, "conditioning points per stage");
    est->add_option("--seed", est_seed, "sampling seed");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string ev_pred, ev_gt, ev_out, ev_thresholds;
    bool ev_svg = false;
    ev->add_option("--pred", ev_pred, "pose text file")->required();
    ev->add_option("--gt", ev_gt, "ground-truth manifest")->required();
    ev->add_option("--out", ev_out, "report directory")->required();
    ev->add_option("--thresholds", ev_thresholds, "success grid LO:HI:STEP (mm)")
        ->check([](const std::string& s) -> std::string {
            double lo, hi, step;
            return scan_threshold_grid(s, lo, hi, step)
                       ? std::string()
                       : "expected LO:HI:STEP with positive step";
        });
    ev->add_flag("--svg", ev_svg, "also write SVG charts");

    // bench-normals
    auto* bench = app.add_subcommand("bench-normals", "time both normal estimators");
    std::string bench_data, bench_model, bench_out;
    bench->add_option("--data", bench_data, "dataset directory (with manifest.txt)")->required();
    bench->add_option("--normal-model", bench_model, "trained normal forest")->required();
    bench->add_option("--out", bench_out, "table file to write")->required();

    // Config-file defaults: inject values for options the command line did
    // not mention, for whichever subcommand was chosen.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string early_config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) early_config = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) early_config = args[i].substr(9);
    }
    if (!early_config.empty()) {
        const auto values = read_config(early_config);
        CLI::App* active = nullptr;
        for (const std::string& a : args)
            if (CLI::App* s = app.get_subcommand_no_throw(a)) {
                active = s;
                break;
            }
        if (active != nullptr)
            for (const auto& [key, value] : values) {
                CLI::Option* opt = active->get_option_no_throw("--" + key);
                if (opt == nullptr) continue;
                const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
                    return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
                });
                if (!given) args.push_back("--" + key + "=" + value);
            }
    }

    try {
        std::reverse(args.begin(), args.end());  // CLI11 parses from the back
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*synth) {
        const std::vector<ManifestEntry> entries = generate_dataset(synth_cfg, synth_out);
        std::cout << "wrote " << entries.size() << " frames to " << synth_out << '\n';
        return 0;
    }

    if (*tnorm) {
        TrainingSet set = load_training_set(tnorm_data);
        std::vector<std::vector<Vec3>> refs;
        refs.reserve(set.frames.size());
        std::vector<NormalTrainingCloud> training;
        for (std::size_t i = 0; i < set.frames.size(); ++i) {
            classify_edges(set.frames[i].cloud);
            refs.push_back(reference_normals(set.frames[i].cloud, set.params[i]));
            training.push_back({&set.frames[i].cloud, &refs.back()});
        }
        const NormalForest forest = train_normal_forest(training, norm_params);
        save_normal_forest(tnorm_out, forest);
        std::cout << "trained normal forest on " << training.size() << " frames -> " << tnorm_out
                  << '\n';
        return 0;
    }

    if (*tpose) {
        TrainingSet set = load_training_set(tpose_data);
        train_cfg.forest.kind =
            tpose_feature == "depth" ? FeatureKind::DepthDiff : FeatureKind::NormalDiff;
        const NormalForest nf = load_normal_forest(tpose_normal_model);
        const ModelBundle bundle = train_pose_bundle(set.frames, nf, train_cfg);
        save_bundle(tpose_out, bundle);
        std::cout << "trained cascade on " << set.frames.size() << " frames -> " << tpose_out
                  << '\n';
        return 0;
    }

    if (*est) {
        ModelBundle bundle = load_bundle(est_bundle);
        if (est_points > 0) bundle.config.points_per_stage = est_points;
        if (est->count("--seed") > 0) bundle.config.seed = est_seed;

        std::vector<std::string> inputs;
        const fs::path manifest = fs::path(est_input) / "manifest.txt";
        if (fs::exists(manifest)) {
            for (const ManifestEntry& e : load_manifest(manifest.string()))
                inputs.push_back(e.path);
        } else {
            for (const auto& entry : fs::directory_iterator(est_input))
                if (entry.path().extension() == ".hcdf") inputs.push_back(entry.path().string());
            std::sort(inputs.begin(), inputs.end());
        }
        if (inputs.empty()) throw DataError("no depth frames under " + est_input);

        std::vector<PoseRecord> records;
        records.reserve(inputs.size());
        const auto t0 = std::chrono::steady_clock::now();
        for (const std::string& path : inputs) {
            Cloud cloud = backproject(load_depth_frame(path));
            const PoseEstimate pe = estimate_pose(cloud, bundle);
            records.push_back({frame_id(path), pe.pose, pe.fallback});
        }
        const auto t1 = std::chrono::steady_clock::now();
        save_poses(est_out, records);
        const double ms =
            std::chrono::duration<double, std::milli>(t1 - t0).count() / records.size();
        std::cout << "estimated " << records.size() << " frames (" << ms << " ms/frame) -> "
                  << est_out << '\n';
        return 0;
    }

    if (*ev) {
        const std::vector<PoseRecord> preds = load_poses(ev_pred);
        if (preds.empty()) throw DataError("no predictions in " + ev_pred);
        const std::vector<ManifestEntry> entries = load_manifest(ev_gt);
        std::map<std::string, std::size_t> by_id;
        for (std::size_t i = 0; i < entries.size(); ++i) by_id[frame_id(entries[i].path)] = i;

        std::vector<HandPose> pred_poses, gt_poses;
        std::vector<SkeletonParams> params;
        for (const PoseRecord& rec : preds) {
            const auto it = by_id.find(rec.id);
            if (it == by_id.end())
                throw DataError("prediction frame not in ground truth: " + rec.id);
            pred_poses.push_back(rec.pose);
            gt_poses.push_back(entries[it->second].pose);
            params.push_back(entries[it->second].params);
        }

        EvalReport report;
        report.per_joint_mm = mean_joint_error(pred_poses, gt_poses);
        const std::vector<double> grid =
            ev_thresholds.empty() ? default_thresholds() : parse_threshold_grid(ev_thresholds);
        report.success = success_rate(pred_poses, gt_poses, grid);
        const ViewpointBreakdown vb = error_by_viewpoint(pred_poses, gt_poses, params, 15.0);
        report.yaw_bins = vb.yaw;
        report.pitch_bins = vb.pitch;

        fs::create_directories(ev_out);
        save_report((fs::path(ev_out) / "report.json").string(), report);
        write_report_csv(ev_out, report);
        if (ev_svg) write_report_svg(ev_out, report);

        double mean = 0.0;
        for (const double v : report.per_joint_mm) mean += v;
        mean /= static_cast<double>(report.per_joint_mm.size());
        std::cout << "frames: " << pred_poses.size() << "  mean joint error: " << mean
                  << " mm  report -> " << ev_out << '\n';
        return 0;
    }

    if (*bench) {
        const TrainingSet set = load_training_set(bench_data);
        std::vector<Cloud> clouds;
        std::vector<std::vector<Vec3>> refs;
        for (std::size_t i = 0; i < set.frames.size(); ++i) {
            clouds.push_back(set.frames[i].cloud);
            refs.push_back(reference_normals(set.frames[i].cloud, set.params[i]));
        }
        const NormalForest forest = load_normal_forest(bench_model);
        const NormalsBenchmark result = bench_normals(clouds, refs, forest);
        const std::string table = benchmark_table(result);
        std::ofstream out(bench_out, std::ios::binary);
        if (!out) throw DataError("cannot open for writing: " + bench_out);
        out << table;
        std::cout << table;
        return 0;
    }

    return 1;  // unreachable: a subcommand is required
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ModelError& e) {
        std::cerr << "model error: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
