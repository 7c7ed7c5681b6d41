#include "handpose/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace handpose {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw LengthMismatch(std::string(what) + ": sequence lengths differ");
}

double joint_error(const HandPose& pred, const HandPose& gt, int j) {
    return (pred.joints[static_cast<std::size_t>(j)] - gt.joints[static_cast<std::size_t>(j)]).norm();
}

double frame_mean_error(const HandPose& pred, const HandPose& gt) {
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j) sum += joint_error(pred, gt, j);
    return sum / kNumJoints;
}

double frame_max_error(const HandPose& pred, const HandPose& gt) {
    double worst = 0.0;
    for (int j = 0; j < kNumJoints; ++j) worst = std::max(worst, joint_error(pred, gt, j));
    return worst;
}

std::vector<ViewpointBin> bin_axis(const std::vector<double>& degrees,
                                   const std::vector<double>& errors, double bin_deg) {
    const auto [min_it, max_it] = std::minmax_element(degrees.begin(), degrees.end());
    double lo = std::floor(*min_it / bin_deg) * bin_deg;
    double hi = std::ceil(*max_it / bin_deg) * bin_deg;
    if (hi <= lo) hi = lo + bin_deg;  // all frames share one boundary angle
    const int n_bins = static_cast<int>(std::lround((hi - lo) / bin_deg));

    std::vector<ViewpointBin> bins(static_cast<std::size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        bins[static_cast<std::size_t>(b)].lo_deg = lo + b * bin_deg;
        bins[static_cast<std::size_t>(b)].hi_deg = lo + (b + 1) * bin_deg;
    }
    for (std::size_t f = 0; f < degrees.size(); ++f) {
        int b = static_cast<int>(std::floor((degrees[f] - lo) / bin_deg));
        b = std::clamp(b, 0, n_bins - 1);
        bins[static_cast<std::size_t>(b)].count += 1;
        bins[static_cast<std::size_t>(b)].mean_error_mm += errors[f];
    }
    for (ViewpointBin& bin : bins)
        if (bin.count > 0) bin.mean_error_mm /= bin.count;
    return bins;
}

}  // namespace

std::vector<double> mean_joint_error(const std::vector<HandPose>& pred,
                                     const std::vector<HandPose>& gt) {
    check_lengths(pred.size(), gt.size(), "mean_joint_error");
    if (pred.empty()) throw DataError("mean_joint_error: no frames");
    std::vector<double> out(kNumJoints, 0.0);
    for (std::size_t f = 0; f < pred.size(); ++f)
        for (int j = 0; j < kNumJoints; ++j)
            out[static_cast<std::size_t>(j)] += joint_error(pred[f], gt[f], j);
    for (double& v : out) v /= static_cast<double>(pred.size());
    return out;
}

std::vector<SuccessPoint> success_rate(const std::vector<HandPose>& pred,
                                       const std::vector<HandPose>& gt,
                                       const std::vector<double>& thresholds_mm) {
    check_lengths(pred.size(), gt.size(), "success_rate");
    if (pred.empty()) throw DataError("success_rate: no frames");
    std::vector<double> worst(pred.size());
    for (std::size_t f = 0; f < pred.size(); ++f) worst[f] = frame_max_error(pred[f], gt[f]);

    std::vector<SuccessPoint> curve;
    curve.reserve(thresholds_mm.size());
    for (const double tau : thresholds_mm) {
        std::size_t hits = 0;
        for (const double w : worst)
            if (w < tau) ++hits;
        curve.push_back({tau, static_cast<double>(hits) / static_cast<double>(pred.size())});
    }
    return curve;
}

std::vector<double> default_thresholds() {
    std::vector<double> out;
    for (int i = 0; i <= 28; ++i) out.push_back(10.0 + 2.5 * i);  // 10 mm .. 80 mm
    return out;
}

ViewpointBreakdown error_by_viewpoint(const std::vector<HandPose>& pred,
                                      const std::vector<HandPose>& gt,
                                      const std::vector<SkeletonParams>& params, double bin_deg) {
    check_lengths(pred.size(), gt.size(), "error_by_viewpoint");
    check_lengths(pred.size(), params.size(), "error_by_viewpoint");
    if (pred.empty()) throw DataError("error_by_viewpoint: no frames");
    if (bin_deg <= 0.0) throw DataError("error_by_viewpoint: bin width must be positive");

    std::vector<double> errors(pred.size()), yaw_deg(pred.size()), pitch_deg(pred.size());
    for (std::size_t f = 0; f < pred.size(); ++f) {
        errors[f] = frame_mean_error(pred[f], gt[f]);
        yaw_deg[f] = params[f].yaw / kDegToRad;
        pitch_deg[f] = params[f].pitch / kDegToRad;
    }
    ViewpointBreakdown out;
    out.yaw = bin_axis(yaw_deg, errors, bin_deg);
    out.pitch = bin_axis(pitch_deg, errors, bin_deg);
    return out;
}

NormalsBenchmark bench_normals(const std::vector<Cloud>& clouds,
                               const std::vector<std::vector<Vec3>>& reference,
                               const NormalForest& forest) {
    if (clouds.empty()) throw DataError("bench_normals: no clouds");
    if (!reference.empty()) check_lengths(clouds.size(), reference.size(), "bench_normals");

    using clock = std::chrono::steady_clock;
    NormalsBenchmark bench;
    bench.frames = static_cast<int>(clouds.size());

    double pca_ns = 0.0, forest_ns = 0.0;
    double pca_err = 0.0, forest_err = 0.0;
    std::size_t scored = 0;
    for (std::size_t c = 0; c < clouds.size(); ++c) {
        Cloud base = clouds[c];
        if (std::find(base.is_edge.begin(), base.is_edge.end(), std::uint8_t{1}) ==
            base.is_edge.end())
            classify_edges(base);
        base.normals.clear();
        if (!reference.empty())
            check_lengths(base.size(), reference[c].size(), "bench_normals reference");

        Cloud via_pca = base;
        const auto t0 = clock::now();
        compute_normals_pca(via_pca);
        const auto t1 = clock::now();
        Cloud via_forest = base;
        const auto t2 = clock::now();
        predict_normals(forest, via_forest);
        const auto t3 = clock::now();
        pca_ns += std::chrono::duration<double, std::nano>(t1 - t0).count();
        forest_ns += std::chrono::duration<double, std::nano>(t3 - t2).count();

        if (reference.empty()) continue;
        for (std::size_t i = 0; i < base.size(); ++i) {
            if (base.is_edge[i]) continue;  // silhouette normals live in 2D
            const Vec3& ref = reference[c][i];
            const auto angle = [&](const Vec3& n) {
                return std::acos(std::clamp(n.dot(ref), -1.0, 1.0));
            };
            pca_err += angle(via_pca.normals[i]);
            forest_err += angle(via_forest.normals[i]);
            ++scored;
        }
    }

    bench.pca_ms_per_frame = pca_ns * 1e-6 / bench.frames;
    bench.forest_ms_per_frame = forest_ns * 1e-6 / bench.frames;
    bench.speedup = forest_ns > 0.0 ? pca_ns / forest_ns : 0.0;
    if (scored > 0) {
        bench.pca_mean_err_deg = pca_err / static_cast<double>(scored) / kDegToRad;
        bench.forest_mean_err_deg = forest_err / static_cast<double>(scored) / kDegToRad;
    }
    return bench;
}

std::string benchmark_table(const NormalsBenchmark& bench) {
    std::ostringstream out;
    out << "frames\tpca_ms_per_frame\tforest_ms_per_frame\tspeedup\t"
        << "pca_mean_err_deg\tforest_mean_err_deg\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\n", bench.frames,
                  bench.pca_ms_per_frame, bench.forest_ms_per_frame, bench.speedup,
                  bench.pca_mean_err_deg, bench.forest_mean_err_deg);
    out << buf;
    return out.str();
}

namespace {

json bins_to_json(const std::vector<ViewpointBin>& bins) {
    json arr = json::array();
    for (const ViewpointBin& b : bins) {
        json j{{"lo_deg", b.lo_deg}, {"hi_deg", b.hi_deg}, {"count", b.count}};
        if (b.count > 0)
            j["mean_error_mm"] = b.mean_error_mm;
        else
            j["mean_error_mm"] = nullptr;  // empty bins carry no mean
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<ViewpointBin> bins_from_json(const json& arr) {
    std::vector<ViewpointBin> bins;
    for (const json& j : arr) {
        ViewpointBin b;
        b.lo_deg = j.at("lo_deg").get<double>();
        b.hi_deg = j.at("hi_deg").get<double>();
        b.count = j.at("count").get<int>();
        if (!j.at("mean_error_mm").is_null()) b.mean_error_mm = j.at("mean_error_mm").get<double>();
        bins.push_back(b);
    }
    return bins;
}

}  // namespace

void save_report(const std::string& path, const EvalReport& report) {
    json j;
    j["per_joint_mm"] = report.per_joint_mm;
    json success = json::array();
    for (const SuccessPoint& p : report.success)
        success.push_back({{"threshold_mm", p.threshold_mm}, {"fraction", p.fraction}});
    j["success"] = std::move(success);
    j["yaw_bins"] = bins_to_json(report.yaw_bins);
    j["pitch_bins"] = bins_to_json(report.pitch_bins);
    j["timing_ms"] = report.timing_ms;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    json j;
    try {
        in >> j;
        EvalReport report;
        report.per_joint_mm = j.at("per_joint_mm").get<std::vector<double>>();
        for (const json& p : j.at("success"))
            report.success.push_back(
                {p.at("threshold_mm").get<double>(), p.at("fraction").get<double>()});
        report.yaw_bins = bins_from_json(j.at("yaw_bins"));
        report.pitch_bins = bins_from_json(j.at("pitch_bins"));
        report.timing_ms = j.at("timing_ms").get<std::map<std::string, double>>();
        return report;
    } catch (const json::exception& e) {
        throw DataError("malformed report " + path + ": " + e.what());
    }
}

namespace {

std::string csv_real(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    return buf;
}

void write_bins_csv(const fs::path& path, const std::vector<ViewpointBin>& bins) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "lo_deg,hi_deg,count,mean_error_mm\n";
    for (const ViewpointBin& b : bins) {
        out << csv_real(b.lo_deg) << ',' << csv_real(b.hi_deg) << ',' << b.count << ',';
        if (b.count > 0) out << csv_real(b.mean_error_mm);
        out << '\n';
    }
}

struct Series {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

/// Self-contained line chart; enough for eyeballing curves without any
/// plotting dependency.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    const double width = 640.0, height = 420.0;
    const double left = 70.0, right = 610.0, top = 48.0, bottom = 360.0;

    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (x_min > x_max) {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min < 1e-12) {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if (y_max - y_min < 1e-12) {
        y_min -= 1.0;
        y_max += 1.0;
    }
    const auto map_x = [&](double x) {
        return left + (x - x_min) / (x_max - x_min) * (right - left);
    };
    const auto map_y = [&](double y) {
        return bottom - (y - y_min) / (y_max - y_min) * (bottom - top);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << ' ' << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << (width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double fx = x_min + (x_max - x_min) * t / 5.0;
        const double fy = y_min + (y_max - y_min) * t / 5.0;
        svg << "<line x1=\"" << map_x(fx) << "\" y1=\"" << bottom << "\" x2=\"" << map_x(fx)
            << "\" y2=\"" << (bottom + 5) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << map_x(fx) << "\" y=\"" << (bottom + 18)
            << "\" text-anchor=\"middle\">" << fmt_tick(fx) << "</text>\n";
        svg << "<line x1=\"" << (left - 5) << "\" y1=\"" << map_y(fy) << "\" x2=\"" << left
            << "\" y2=\"" << map_y(fy) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << (left - 8) << "\" y=\"" << (map_y(fy) + 4)
            << "\" text-anchor=\"end\">" << fmt_tick(fy) << "</text>\n";
    }
    svg << "<text x=\"" << ((left + right) / 2) << "\" y=\"" << (height - 14)
        << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    svg << "<text x=\"18\" y=\"" << ((top + bottom) / 2)
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << ((top + bottom) / 2) << ")\">"
        << y_label << "</text>\n";

    double legend_y = top + 8.0;
    for (const Series& s : series) {
        if (s.points.empty()) continue;
        svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : s.points) svg << map_x(x) << ',' << map_y(y) << ' ';
        svg << "\"/>\n";
        svg << "<line x1=\"" << (right - 120) << "\" y1=\"" << legend_y << "\" x2=\""
            << (right - 96) << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << (right - 90) << "\" y=\"" << (legend_y + 4) << "\">" << s.label
            << "</text>\n";
        legend_y += 18.0;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<std::pair<double, double>> bin_centers(const std::vector<ViewpointBin>& bins) {
    std::vector<std::pair<double, double>> pts;
    for (const ViewpointBin& b : bins)
        if (b.count > 0) pts.push_back({0.5 * (b.lo_deg + b.hi_deg), b.mean_error_mm});
    return pts;
}

}  // namespace

void write_report_csv(const std::string& dir, const EvalReport& report) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "per_joint_error.csv", std::ios::binary);
        if (!out) throw DataError("cannot write per-joint CSV in " + dir);
        out << "joint,mean_error_mm\n";
        for (std::size_t j = 0; j < report.per_joint_mm.size(); ++j) {
            const std::string name =
                j < joint_names().size() ? joint_names()[j] : "joint_" + std::to_string(j);
            out << name << ',' << csv_real(report.per_joint_mm[j]) << '\n';
        }
    }
    {
        std::ofstream out(fs::path(dir) / "success_rate.csv", std::ios::binary);
        if (!out) throw DataError("cannot write success CSV in " + dir);
        out << "threshold_mm,fraction\n";
        for (const SuccessPoint& p : report.success)
            out << csv_real(p.threshold_mm) << ',' << csv_real(p.fraction) << '\n';
    }
    write_bins_csv(fs::path(dir) / "viewpoint_yaw.csv", report.yaw_bins);
    write_bins_csv(fs::path(dir) / "viewpoint_pitch.csv", report.pitch_bins);
}

void write_report_svg(const std::string& dir, const EvalReport& report) {
    fs::create_directories(dir);
    {
        Series s;
        s.label = "all joints";
        s.color = "#1f77b4";
        for (const SuccessPoint& p : report.success) s.points.push_back({p.threshold_mm, p.fraction});
        std::ofstream out(fs::path(dir) / "success_rate.svg", std::ios::binary);
        if (!out) throw DataError("cannot write success SVG in " + dir);
        out << line_chart("Frames with all joints under threshold", "threshold (mm)", "fraction",
                          {s});
    }
    {
        Series yaw{"yaw", "#1f77b4", bin_centers(report.yaw_bins)};
        Series pitch{"pitch", "#d62728", bin_centers(report.pitch_bins)};
        std::ofstream out(fs::path(dir) / "viewpoint.svg", std::ios::binary);
        if (!out) throw DataError("cannot write viewpoint SVG in " + dir);
        out << line_chart("Mean joint error by viewpoint", "angle (deg)", "error (mm)",
                          {yaw, pitch});
    }
}

}  // namespace handpose
