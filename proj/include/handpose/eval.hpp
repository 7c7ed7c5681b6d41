#pragma once

#include <map>
#include <string>
#include <vector>

#include "handpose/pipeline.hpp"
#include "handpose/synth.hpp"

namespace handpose {

struct SuccessPoint {
    double threshold_mm = 0.0;
    double fraction = 0.0;  // frames with every joint under the threshold
};

struct ViewpointBin {
    double lo_deg = 0.0;
    double hi_deg = 0.0;
    int count = 0;                // 0 marks an empty bin; the mean is then meaningless
    double mean_error_mm = 0.0;
};

struct EvalReport {
    std::vector<double> per_joint_mm;  // kNumJoints entries, fixed joint order
    std::vector<SuccessPoint> success;
    std::vector<ViewpointBin> yaw_bins;
    std::vector<ViewpointBin> pitch_bins;
    std::map<std::string, double> timing_ms;  // per-stage ms/frame where measured
};

/// Mean Euclidean error per named joint over aligned frame pairs.
/// Throws LengthMismatch when the sequences differ in length.
std::vector<double> mean_joint_error(const std::vector<HandPose>& pred,
                                     const std::vector<HandPose>& gt);

/// For each threshold, the fraction of frames whose worst joint error is
/// below it. Monotone non-decreasing in the threshold by construction.
std::vector<SuccessPoint> success_rate(const std::vector<HandPose>& pred,
                                       const std::vector<HandPose>& gt,
                                       const std::vector<double>& thresholds_mm);

/// The grid the success plots use by default: 10 mm to 80 mm in 2.5 mm steps.
std::vector<double> default_thresholds();

struct ViewpointBreakdown {
    std::vector<ViewpointBin> yaw;
    std::vector<ViewpointBin> pitch;
};

/// All-joint mean error binned by the generating yaw and pitch angles.
/// Bins cover the observed range in bin_deg steps; interior bins that
/// caught no frames keep count = 0.
ViewpointBreakdown error_by_viewpoint(const std::vector<HandPose>& pred,
                                      const std::vector<HandPose>& gt,
                                      const std::vector<SkeletonParams>& params, double bin_deg);

struct NormalsBenchmark {
    int frames = 0;
    double pca_ms_per_frame = 0.0;
    double forest_ms_per_frame = 0.0;
    double speedup = 0.0;  // pca time over forest time
    // Mean angular error against the analytic reference over inner points;
    // negative when no reference was supplied.
    double pca_mean_err_deg = -1.0;
    double forest_mean_err_deg = -1.0;
};

/// Times both normal estimators over the same clouds (edge classification
/// happens once, outside the timed region) and scores them against
/// per-point reference normals when given. `reference` may be empty.
NormalsBenchmark bench_normals(const std::vector<Cloud>& clouds,
                               const std::vector<std::vector<Vec3>>& reference,
                               const NormalForest& forest);

/// Tab-separated summary of a benchmark, one metric per line.
std::string benchmark_table(const NormalsBenchmark& bench);

/// Lossless JSON round trip for reports.
void save_report(const std::string& path, const EvalReport& report);
EvalReport load_report(const std::string& path);

/// CSV views of the report (per_joint_error.csv, success_rate.csv,
/// viewpoint_yaw.csv, viewpoint_pitch.csv); empty bins leave the mean
/// column blank.
void write_report_csv(const std::string& dir, const EvalReport& report);

/// Standalone SVG line charts (success_rate.svg, viewpoint.svg); no
/// external plotting tools involved.
void write_report_svg(const std::string& dir, const EvalReport& report);

}  // namespace handpose
