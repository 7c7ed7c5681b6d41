#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "handpose/hand.hpp"
#include "handpose/normals.hpp"

namespace handpose {

/// Canonical palm layout expressed in the palm frame: wrist at the origin,
/// the middle-finger MCP on the +y axis. Derived from training data as the
/// mean over frames of each joint's palm-frame position.
struct PalmTemplate {
    PalmTemplate() { mcps.fill(Vec3::Zero()); }
    Vec3 wrist = Vec3::Zero();
    std::array<Vec3, kNumFingers> mcps;
    // In-plane angle of each finger's proximal bone relative to palm +y,
    // so the finger-stage frame pose is palm_pose * R_z(alpha).
    std::array<double, kNumFingers> alpha{};
    // Mean bone lengths per finger: MCP->PIP, PIP->DIP, DIP->TIP (mm).
    std::array<std::array<double, 3>, kNumFingers> bone_mm{};
};

/// Inference-time knobs shared by every cascade stage.
struct StageConfig {
    int points_per_stage = 160;    // conditioning points sampled per stage
    double pip_radius_mm = 30.0;   // neighborhood around the parent MCP
    double dip_radius_mm = 25.0;   // neighborhood for the DIP and TIP stages
    bool constrain_pip = true;     // keep only the along-finger vote component
    bool constrain_dip_tip = false;
    double vote_bandwidth_mm = 10.0;
    std::uint64_t seed = 1;
};

/// Everything estimate_pose needs: the normal forest plus one regression
/// stage per level of the cascade. Read-only at inference.
struct ModelBundle {
    NormalForest normal_forest;
    FcrfModel wrist;
    FcrfModel mcp;  // n_joints = 5, finger order thumb..pinky
    std::array<FcrfModel, kNumFingers> pip;
    std::array<FcrfModel, kNumFingers> dip;
    std::array<FcrfModel, kNumFingers> tip;
    PalmTemplate palm;
    StageConfig config;
};

/// Frame of an edge point: z = silhouette normal (image plane), x = the
/// camera viewing axis, y = z cross x; origin at the point. Orthonormal
/// because the silhouette normal has no z component.
LocalFrame wrist_frame(const Cloud& cloud, std::int32_t index);

/// Frame of an inner point given a reference wrist position: z = surface
/// normal, y = normalize(z cross (wrist - p)), x = y cross z.
/// Throws DegenerateFrame when wrist - p is parallel to the normal.
LocalFrame mcp_frame(const Cloud& cloud, std::int32_t index, const Vec3& wrist);

/// Finger-stage frame: pose = palm_pose * R_z(alpha_k), origin at p.
LocalFrame pip_frame(const Vec3& p, const Mat3& palm_pose, const PalmTemplate& tmpl, Finger finger);

/// Distal-stage frame: y along the parent bone (parent - grandparent),
/// x = normalize(z_palm cross y), z = x cross y. When the bone is parallel
/// to the palm normal the palm y-axis breaks the tie.
LocalFrame bone_frame(const Vec3& p, const Vec3& parent, const Vec3& grandparent,
                      const Mat3& palm_pose);

/// Votes the wrist from subsampled edge points conditioned on their
/// silhouette frames. Throws NoEdgePoints on a cloud without edges.
Vec3 estimate_wrist(const Cloud& cloud, const ModelBundle& bundle);

/// Votes all five MCPs simultaneously from subsampled inner points
/// conditioned on wrist-referenced frames; points whose frame is
/// degenerate are skipped. Throws NoValidPoints when none remain.
std::array<Vec3, kNumFingers> estimate_mcps(const Cloud& cloud, const Vec3& wrist,
                                            const ModelBundle& bundle);

/// Rigid snap of the palm template onto estimated joints.
struct PalmFit {
    PalmFit() { mcps.fill(Vec3::Zero()); }
    Mat3 pose = Mat3::Identity();  // columns x, y, z; z = palm normal
    Vec3 wrist = Vec3::Zero();
    std::array<Vec3, kNumFingers> mcps;
};

/// Aligns the template {wrist, MCPs} onto the estimates (Kabsch, no
/// scaling) and replaces them by the transformed template points. The
/// palm frame takes y from wrist->middle MCP, z from the best-fit plane
/// through the six snapped points with its sign matched to the mean
/// surface normal within 20 mm of their centroid (camera-relative sign
/// when `cloud` is null or carries no normals there), then x = y cross z
/// with y kept exact.
PalmFit fit_palm(const Vec3& wrist, const std::array<Vec3, kNumFingers>& mcps,
                 const PalmTemplate& tmpl, const Cloud* cloud = nullptr);

struct JointEstimate {
    Vec3 position = Vec3::Zero();
    bool fallback = false;  // neighborhood was empty; bone-extension guess
};

/// One finger stage: collects cloud points near the parent joint, frames
/// them (PIP: rotated palm frame; DIP/TIP: parent-bone frame), votes with
/// the stage model, and aggregates. An empty neighborhood falls back to
/// extending the parent bone along the frame y-axis by the template bone
/// length, with the fallback flag set.
JointEstimate estimate_finger_joint(const Cloud& cloud, FingerJoint stage, Finger finger,
                                    const Vec3& parent, const Vec3& grandparent,
                                    const PalmFit& palm, const ModelBundle& bundle);

struct PoseEstimate {
    HandPose pose;
    std::array<std::uint8_t, kNumJoints> fallback{};  // 1 = bone-extension
};

/// Full cascade on one cloud: edge classification and forest normals are
/// filled in if absent, then wrist -> MCPs -> palm snap -> per-finger
/// PIP -> DIP -> TIP. Deterministic for a fixed bundle and input.
PoseEstimate estimate_pose(Cloud& cloud, const ModelBundle& bundle);

/// Training-time counterpart of StageConfig.
struct TrainConfig {
    FcrfParams forest;            // shared by every stage; kind switches features
    StageConfig stage;            // radii/seeds reused for sample collection
    int samples_per_frame = 48;   // cap on conditioning points per frame per stage
    // Edge points can sit a full hand span from the wrist, so that stage
    // probes farther than the shared default.
    double wrist_offset_range_mm = 120.0;
};

struct TrainFrame {
    Cloud cloud;
    HandPose gt;
};

/// Trains the whole cascade. Clouds get edge flags and forest-predicted
/// normals (the same ones inference will see); the palm template and
/// per-finger angles come from the ground-truth poses; every stage is
/// trained with ground-truth parent conditioning.
ModelBundle train_pose_bundle(std::vector<TrainFrame>& frames, const NormalForest& normal_forest,
                              const TrainConfig& config);

/// Bundle directory layout: normal_forest.hcrf, stage_<name>.hcrf for each
/// regression stage, palm_template.txt, config.txt.
void save_bundle(const std::string& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& dir);

/// One line of the pose text format: frame id, 63 joint coordinates in
/// millimetres (fixed joint order, x y z per joint), then 21 fallback
/// flags; space-delimited.
struct PoseRecord {
    std::string id;
    HandPose pose;
    std::array<std::uint8_t, kNumJoints> fallback{};
};

void save_poses(const std::string& path, const std::vector<PoseRecord>& records);
std::vector<PoseRecord> load_poses(const std::string& path);

}  // namespace handpose
