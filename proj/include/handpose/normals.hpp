#pragma once

#include <array>
#include <span>

#include "handpose/forest.hpp"

namespace handpose {

constexpr double kNormalRadiusMm = 10.0;
constexpr double kVmKappaMax = 1e4;

/// Fitted Von Mises distribution: circular mean and concentration.
struct VonMisesStats {
    double mu = 0.0;     // radians, in (-pi, pi]
    double kappa = 0.0;  // >= 0, capped at kVmKappaMax
    int count = 0;
};

/// Bessel-function ratio A(kappa) = I1(kappa)/I0(kappa), by continued
/// fraction (modified Lentz). Strictly increasing from 0 toward 1.
double vm_bessel_ratio(double kappa);

/// ln I0(kappa): power series for moderate kappa, uniform asymptotic
/// expansion beyond (the series summand overflows near kappa ~ 700).
double vm_log_i0(double kappa);

/// Inverts A(kappa) = rbar: closed-form initializer refined by at most 20
/// Newton steps, result capped at kVmKappaMax.
double vm_kappa_from_resultant(double rbar);

/// Maximum-likelihood fit: mu = atan2(sum sin, sum cos), kappa from the
/// mean resultant length.
VonMisesStats vm_fit(std::span<const double> angles);

/// Differential entropy ln(2 pi I0(kappa)) - kappa A(kappa); equals
/// ln(2 pi) at kappa = 0 and decreases strictly in kappa.
double vm_entropy(const VonMisesStats& stats);

/// Entropy as a function of the mean resultant length, tabulated once so
/// split scoring during training avoids the Newton solve per candidate.
class VmEntropyTable {
  public:
    static const VmEntropyTable& get();
    double operator()(double rbar) const;

  private:
    VmEntropyTable();
    static constexpr int kBins = 4096;
    std::array<double, kBins + 1> h_{};
};

/// Ground-method normal: smallest-eigenvalue eigenvector of the covariance
/// of the 3D neighborhood, signed away from the camera (n . p > 0).
Vec3 pca_normal(const Cloud& cloud, std::int32_t index, double radius_mm = kNormalRadiusMm);

/// Silhouette normal for edge points: the neighborhood collapses to a 2D
/// curve in the image plane, so fit the curve tangent over nearby edge
/// points and return its in-plane normal, signed away from the interior.
Vec3 edge_normal(const Cloud& cloud, std::int32_t index, double radius_mm = kNormalRadiusMm);

/// Fills cloud.normals for every point with the ground methods; falls back
/// to deterministic directions where a neighborhood is degenerate.
void compute_normals_pca(Cloud& cloud, double radius_mm = kNormalRadiusMm);

struct NormalForestParams {
    int n_trees = 1;
    int max_depth = 20;
    int layer_split = 10;  // depths below split on theta, the rest on phi
    int candidates_per_node = 200;
    int thresholds_per_candidate = 20;
    int min_leaf = 10;
    double offset_radius_mm = kNormalRadiusMm;
    int samples_per_cloud = 400;  // 0 = every inner point
    std::uint64_t seed = 1;
};

struct NormalTree {
    std::vector<TreeNode> nodes;
    std::vector<std::array<float, 2>> leaves;  // (theta, phi)
};

struct NormalForest {
    std::vector<NormalTree> trees;
    int max_depth = 20;
    int layer_split = 10;
};

struct NormalTrainingCloud {
    const Cloud* cloud = nullptr;
    const std::vector<Vec3>* normals = nullptr;  // per point, unit
};

/// Trains the layered theta/phi forest on inner points with depth-probe
/// features confined to the neighborhood radius; split quality is the Von
/// Mises information gain of the depth-appropriate angle. Leaves deeper
/// than layer_split inherit theta from their depth-layer_split ancestor.
NormalForest train_normal_forest(const std::vector<NormalTrainingCloud>& training,
                                 const NormalForestParams& params = {});

/// Fills cloud.normals: forest lookup for inner points (sign constrained
/// as in pca_normal), silhouette fit for edge points.
void predict_normals(const NormalForest& forest, Cloud& cloud);

/// Same container as FCRF models, with n_joints = 0 and (theta, phi) leaves.
void save_normal_forest(const std::string& path, const NormalForest& forest);
NormalForest load_normal_forest(const std::string& path);

}  // namespace handpose
