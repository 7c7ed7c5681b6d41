#pragma once

#include <span>
#include <string>
#include <vector>

#include "handpose/features.hpp"

namespace handpose {

/// Internal split node shared by every forest in the project. Parameters
/// are stored in f32 exactly as serialized, so a freshly trained model and
/// its save/load round-trip route samples identically.
struct TreeNode {
    FeatureKind kind = FeatureKind::DepthDiff;
    Eigen::Vector3f delta1 = Eigen::Vector3f::Zero();
    Eigen::Vector3f delta2 = Eigen::Vector3f::Zero();
    float threshold = 0.0f;
    // Children: >= 0 is a node index, < 0 encodes leaf index -(c+1).
    std::int32_t left = 0;
    std::int32_t right = 0;
};

/// Walks a tree from the root; eval(node) must return the feature value.
/// Routing rule: value < threshold goes left. Returns the leaf index.
/// An empty node list denotes a single-leaf tree (leaf 0).
template <typename EvalFn>
std::int32_t route_tree(const std::vector<TreeNode>& nodes, EvalFn&& eval) {
    if (nodes.empty()) return 0;
    std::int32_t cur = 0;
    for (;;) {
        const TreeNode& n = nodes[static_cast<std::size_t>(cur)];
        const std::int32_t next = eval(n) < static_cast<double>(n.threshold) ? n.left : n.right;
        if (next < 0) return -next - 1;
        cur = next;
    }
}

/// One training example for a frame-conditioned stage: a conditioning
/// frame anchored at a cloud point plus the camera-frame offsets from that
/// point to each regressed joint.
struct TrainingSample {
    std::int32_t cloud_id = 0;
    std::int32_t point_id = 0;
    LocalFrame frame;
    std::vector<Vec3> target_offsets;  // mm, camera coords, one per joint
};

struct FcrfParams {
    int n_trees = 5;
    int max_depth = 20;
    int candidates_per_node = 48;
    int thresholds_per_candidate = 8;
    int min_leaf = 10;
    double bagging_fraction = 0.7;
    double offset_range_mm = 60.0;
    double leaf_bandwidth_mm = 10.0;
    FeatureKind kind = FeatureKind::NormalDiff;
    std::uint64_t seed = 1;
};

struct FcrfTree {
    std::vector<TreeNode> nodes;
    // Leaf i stores modes [i*n_joints, (i+1)*n_joints), in local coords.
    std::vector<Eigen::Vector3f> leaf_modes;
};

struct FcrfModel {
    std::string stage;
    FeatureKind kind = FeatureKind::NormalDiff;
    int n_joints = 0;
    // When >= 0, predictions keep only this local-frame component (used by
    // the 1D finger stages that slide along the bone axis). Derived from
    // the stage name, not serialized.
    int axis_constraint = -1;
    std::vector<FcrfTree> trees;
};

/// Trains a forest on frame-local targets: each sample's offsets are first
/// rotated into its own frame, splits greedily minimize the summed trace
/// of the per-joint offset covariance, and leaves keep the mean-shift mode
/// of each joint's local offsets.
FcrfModel train_fcrf(std::span<const TrainingSample> samples,
                     const std::vector<const Cloud*>& clouds, const FcrfParams& params);

/// Gaussian-kernel mode seeking started from the coordinate-wise median;
/// stops when the step drops below 0.01 mm or after 100 iterations.
Vec3 mean_shift_mode(std::span<const Vec3> votes, double bandwidth_mm);

/// Routes every tree with features rotated by `frame`, averages leaf modes
/// in local coords, applies the axis constraint, then maps back to camera
/// coords through the frame pose.
std::vector<Vec3> predict_offsets(const FcrfModel& model, const Cloud& cloud, std::int32_t index,
                                  const LocalFrame& frame);

/// Fuses per-point position votes for one joint into a single estimate.
Vec3 aggregate_joint(std::span<const Vec3> votes, double bandwidth_mm);

/// Model file ("HCRF"): magic, u16 version, u16-length-prefixed stage
/// name, u8 feature kind, u32 n_trees, u32 n_joints, then per tree a
/// pre-order node stream: tag u8 (0 internal, 1 leaf); internal = u8 kind,
/// 6 f32 offsets, f32 threshold; leaf = n_joints x 3 f32 local modes.
/// Little-endian. The normal forest shares the container with n_joints = 0
/// and 2 f32 (theta, phi) per leaf.
void save_fcrf_model(const std::string& path, const FcrfModel& model);
FcrfModel load_fcrf_model(const std::string& path);

namespace detail {

/// Distinct f32 split thresholds taken from value quantiles. For large
/// nodes the quantiles come from a deterministic stride subsample.
std::vector<float> pick_thresholds(const std::vector<double>& values, int count);

}  // namespace detail

}  // namespace handpose
