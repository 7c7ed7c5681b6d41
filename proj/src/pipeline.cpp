#include "handpose/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace handpose {

namespace {

namespace fs = std::filesystem;

constexpr double kPalmNormalRadiusMm = 20.0;
const char* const kFingerNames[kNumFingers] = {"thumb", "index", "middle", "ring", "pinky"};

/// Stable per-stage ordinal used to seed sampling: wrist, mcp, then the
/// pip/dip/tip blocks in finger order.
int stage_ordinal(FingerJoint stage, Finger finger) {
    return 2 + (static_cast<int>(stage) - 1) * kNumFingers + static_cast<int>(finger);
}

/// Keeps `count` ids drawn without replacement (partial Fisher-Yates);
/// passes the list through untouched when it is already small enough.
std::vector<std::int32_t> sample_ids(std::vector<std::int32_t> ids, std::size_t count, Rng& rng) {
    if (ids.size() <= count) return ids;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + uniform_index(rng, ids.size() - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(count);
    return ids;
}

/// Palm orientation from six palm joints: y from wrist toward the middle
/// MCP (kept exact), z the best-fit plane normal sign-matched to nearby
/// surface normals (camera-relative when unavailable), x = y cross z.
Mat3 palm_basis(const Vec3& wrist, const std::array<Vec3, kNumFingers>& mcps, const Cloud* cloud) {
    const Vec3 y_dir = mcps[static_cast<int>(Finger::Middle)] - wrist;
    if (y_dir.norm() < 1e-9)
        throw DegenerateConfiguration("palm basis: wrist coincides with the middle MCP");
    const Vec3 y = y_dir.normalized();

    Vec3 centroid = wrist;
    for (const Vec3& m : mcps) centroid += m;
    centroid /= 1.0 + kNumFingers;
    Mat3 cov = Mat3::Zero();
    const Vec3 dw = wrist - centroid;
    cov += dw * dw.transpose();
    for (const Vec3& m : mcps) {
        const Vec3 d = m - centroid;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 z = es.eigenvectors().col(0);  // smallest-variance direction
    if (!z.allFinite()) throw DegenerateConfiguration("palm basis: plane fit failed");

    Vec3 ref = Vec3::Zero();
    if (cloud != nullptr && cloud->has_normals())
        for (const std::int32_t id : radius_search(*cloud, centroid, kPalmNormalRadiusMm))
            ref += cloud->normals[static_cast<std::size_t>(id)];
    if (ref.squaredNorm() < 1e-12) ref = centroid;  // points away from the camera too
    if (z.dot(ref) < 0.0) z = -z;

    z -= z.dot(y) * y;
    if (z.norm() < 1e-9) throw DegenerateConfiguration("palm basis: normal parallel to y");
    z.normalize();
    Mat3 pose;
    pose.col(0) = y.cross(z);
    pose.col(1) = y;
    pose.col(2) = z;
    return pose;
}

std::vector<std::int32_t> edge_ids(const Cloud& cloud) {
    std::vector<std::int32_t> ids;
    if (cloud.is_edge.size() != cloud.size()) return ids;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (cloud.is_edge[i]) ids.push_back(static_cast<std::int32_t>(i));
    return ids;
}

std::vector<std::int32_t> inner_ids(const Cloud& cloud) {
    std::vector<std::int32_t> ids;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (cloud.is_edge.size() != cloud.size() || !cloud.is_edge[i])
            ids.push_back(static_cast<std::int32_t>(i));
    return ids;
}

/// Edge flags and forest normals, exactly as the cascade will see them.
void prepare_cloud(Cloud& cloud, const NormalForest& forest) {
    const bool classified = cloud.is_edge.size() == cloud.size() &&
                            std::find(cloud.is_edge.begin(), cloud.is_edge.end(),
                                      std::uint8_t{1}) != cloud.is_edge.end();
    if (!classified) classify_edges(cloud);
    if (!cloud.has_normals()) predict_normals(forest, cloud);
}

}  // namespace

LocalFrame wrist_frame(const Cloud& cloud, std::int32_t index) {
    if (!cloud.has_normals()) throw MissingNormals("wrist_frame: cloud has no normals");
    if (index < 0 || static_cast<std::size_t>(index) >= cloud.size() ||
        cloud.is_edge.size() != cloud.size() || !cloud.is_edge[static_cast<std::size_t>(index)])
        throw DegenerateFrame("wrist_frame: index is not an edge point");
    const Vec3& n = cloud.normals[static_cast<std::size_t>(index)];
    if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6 || std::abs(n.z()) > 1e-6)
        throw DegenerateFrame("wrist_frame: invalid silhouette normal");
    const Vec3 view(0.0, 0.0, 1.0);
    return frame_from_axes(view, n.cross(view), n, cloud.points[static_cast<std::size_t>(index)]);
}

LocalFrame mcp_frame(const Cloud& cloud, std::int32_t index, const Vec3& wrist) {
    if (!cloud.has_normals()) throw MissingNormals("mcp_frame: cloud has no normals");
    const Vec3& p = cloud.points.at(static_cast<std::size_t>(index));
    const Vec3& n = cloud.normals[static_cast<std::size_t>(index)];
    const Vec3 ref = wrist - p;
    const Vec3 y = n.cross(ref);
    if (y.norm() <= 1e-6 * ref.norm() || ref.norm() < 1e-9)
        throw DegenerateFrame("mcp_frame: wrist direction parallel to the normal");
    return frame_from_axes(y.cross(n), y, n, p);
}

LocalFrame pip_frame(const Vec3& p, const Mat3& palm_pose, const PalmTemplate& tmpl,
                     Finger finger) {
    LocalFrame frame;
    frame.pose = palm_pose * rot_z(tmpl.alpha[static_cast<std::size_t>(finger)]);
    frame.origin = p;
    return frame;
}

LocalFrame bone_frame(const Vec3& p, const Vec3& parent, const Vec3& grandparent,
                      const Mat3& palm_pose) {
    const Vec3 bone = parent - grandparent;
    if (bone.norm() < 1e-9) throw DegenerateFrame("bone_frame: parent joints coincide");
    const Vec3 y = bone.normalized();
    Vec3 x = palm_pose.col(2).cross(y);
    if (x.norm() < 1e-6) x = palm_pose.col(1).cross(y);  // bone along the palm normal
    x.normalize();
    LocalFrame frame;
    frame.pose.col(0) = x;
    frame.pose.col(1) = y;
    frame.pose.col(2) = x.cross(y);
    frame.origin = p;
    return frame;
}

Vec3 estimate_wrist(const Cloud& cloud, const ModelBundle& bundle) {
    std::vector<std::int32_t> ids = edge_ids(cloud);
    if (ids.empty()) throw NoEdgePoints("estimate_wrist: cloud has no edge points");
    Rng rng(derive_seed(bundle.config.seed, 0));
    ids = sample_ids(std::move(ids), static_cast<std::size_t>(bundle.config.points_per_stage), rng);

    std::vector<Vec3> votes;
    votes.reserve(ids.size());
    for (const std::int32_t id : ids) {
        LocalFrame frame;
        try {
            frame = wrist_frame(cloud, id);
        } catch (const DegenerateFrame&) {
            continue;
        }
        const Vec3 off = predict_offsets(bundle.wrist, cloud, id, frame)[0];
        votes.push_back(cloud.points[static_cast<std::size_t>(id)] + off);
    }
    if (votes.empty()) throw NoEdgePoints("estimate_wrist: no usable edge frames");
    return aggregate_joint(votes, bundle.config.vote_bandwidth_mm);
}

std::array<Vec3, kNumFingers> estimate_mcps(const Cloud& cloud, const Vec3& wrist,
                                            const ModelBundle& bundle) {
    if (!cloud.has_normals()) throw MissingNormals("estimate_mcps: cloud has no normals");
    std::vector<std::int32_t> ids = inner_ids(cloud);
    Rng rng(derive_seed(bundle.config.seed, 1));
    ids = sample_ids(std::move(ids), static_cast<std::size_t>(bundle.config.points_per_stage), rng);

    std::array<std::vector<Vec3>, kNumFingers> votes;
    for (const std::int32_t id : ids) {
        LocalFrame frame;
        try {
            frame = mcp_frame(cloud, id, wrist);
        } catch (const DegenerateFrame&) {
            continue;
        }
        const std::vector<Vec3> offs = predict_offsets(bundle.mcp, cloud, id, frame);
        for (int k = 0; k < kNumFingers; ++k)
            votes[static_cast<std::size_t>(k)].push_back(
                cloud.points[static_cast<std::size_t>(id)] + offs[static_cast<std::size_t>(k)]);
    }
    if (votes[0].empty()) throw NoValidPoints("estimate_mcps: no usable inner frames");

    std::array<Vec3, kNumFingers> out;
    for (int k = 0; k < kNumFingers; ++k)
        out[static_cast<std::size_t>(k)] =
            aggregate_joint(votes[static_cast<std::size_t>(k)], bundle.config.vote_bandwidth_mm);
    return out;
}

PalmFit fit_palm(const Vec3& wrist, const std::array<Vec3, kNumFingers>& mcps,
                 const PalmTemplate& tmpl, const Cloud* cloud) {
    std::vector<Vec3> src{tmpl.wrist};
    std::vector<Vec3> dst{wrist};
    for (int k = 0; k < kNumFingers; ++k) {
        src.push_back(tmpl.mcps[static_cast<std::size_t>(k)]);
        dst.push_back(mcps[static_cast<std::size_t>(k)]);
    }
    const RigidTransform t = kabsch_align(src, dst);

    PalmFit fit;
    fit.wrist = t.apply(tmpl.wrist);
    for (int k = 0; k < kNumFingers; ++k)
        fit.mcps[static_cast<std::size_t>(k)] = t.apply(tmpl.mcps[static_cast<std::size_t>(k)]);
    fit.pose = palm_basis(fit.wrist, fit.mcps, cloud);
    return fit;
}

JointEstimate estimate_finger_joint(const Cloud& cloud, FingerJoint stage, Finger finger,
                                    const Vec3& parent, const Vec3& grandparent,
                                    const PalmFit& palm, const ModelBundle& bundle) {
    if (stage == FingerJoint::Mcp)
        throw DataError("estimate_finger_joint: stage must be PIP, DIP, or TIP");
    const auto k = static_cast<std::size_t>(finger);
    const FcrfModel& model = stage == FingerJoint::Pip   ? bundle.pip[k]
                             : stage == FingerJoint::Dip ? bundle.dip[k]
                                                         : bundle.tip[k];
    const StageConfig& cfg = bundle.config;
    const double radius = stage == FingerJoint::Pip ? cfg.pip_radius_mm : cfg.dip_radius_mm;
    const LocalFrame proto = stage == FingerJoint::Pip
                                 ? pip_frame(parent, palm.pose, bundle.palm, finger)
                                 : bone_frame(parent, parent, grandparent, palm.pose);

    JointEstimate est;
    std::vector<std::int32_t> ids = radius_search(cloud, parent, radius);
    if (ids.empty()) {
        const double bone = bundle.palm.bone_mm[k][static_cast<std::size_t>(stage) - 1];
        est.position = parent + proto.y_axis() * bone;
        est.fallback = true;
        return est;
    }
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(stage_ordinal(stage, finger))));
    ids = sample_ids(std::move(ids), static_cast<std::size_t>(cfg.points_per_stage), rng);

    std::vector<Vec3> votes;
    votes.reserve(ids.size());
    for (const std::int32_t id : ids) {
        const LocalFrame frame{proto.pose, cloud.points[static_cast<std::size_t>(id)]};
        const Vec3 off = predict_offsets(model, cloud, id, frame)[0];
        votes.push_back(frame.origin + off);
    }
    est.position = aggregate_joint(votes, cfg.vote_bandwidth_mm);
    return est;
}

PoseEstimate estimate_pose(Cloud& cloud, const ModelBundle& bundle) {
    prepare_cloud(cloud, bundle.normal_forest);

    const Vec3 wrist0 = estimate_wrist(cloud, bundle);
    const std::array<Vec3, kNumFingers> mcps0 = estimate_mcps(cloud, wrist0, bundle);
    const PalmFit palm = fit_palm(wrist0, mcps0, bundle.palm, &cloud);

    PoseEstimate out;
    out.pose.joints[0] = palm.wrist;
    for (int k = 0; k < kNumFingers; ++k)
        out.pose.joints[static_cast<std::size_t>(joint_index(k, 0))] =
            palm.mcps[static_cast<std::size_t>(k)];

    for (int k = 0; k < kNumFingers; ++k) {
        const auto f = static_cast<Finger>(k);
        const Vec3& mcp = palm.mcps[static_cast<std::size_t>(k)];
        const JointEstimate pip =
            estimate_finger_joint(cloud, FingerJoint::Pip, f, mcp, palm.wrist, palm, bundle);
        const JointEstimate dip =
            estimate_finger_joint(cloud, FingerJoint::Dip, f, pip.position, mcp, palm, bundle);
        const JointEstimate tip = estimate_finger_joint(cloud, FingerJoint::Tip, f, dip.position,
                                                        pip.position, palm, bundle);
        const JointEstimate* ests[3] = {&pip, &dip, &tip};
        for (int part = 1; part < kJointsPerFinger; ++part) {
            const auto ji = static_cast<std::size_t>(joint_index(k, part));
            out.pose.joints[ji] = ests[part - 1]->position;
            out.fallback[ji] = ests[part - 1]->fallback ? 1 : 0;
        }
    }
    return out;
}

namespace {

Vec3 gt_joint(const HandPose& pose, int finger, int part) {
    return pose.joints[static_cast<std::size_t>(joint_index(finger, part))];
}

/// Per-stage training sample collection shares this skeleton: every frame
/// contributes at most `cap` conditioning points drawn with a seed derived
/// from the stage ordinal and frame index, so collection order never
/// affects the result.
template <typename CollectFn>
void for_each_frame_sample(const std::vector<TrainFrame>& frames, std::uint64_t stage_seed,
                           int cap, CollectFn&& collect) {
    for (std::size_t f = 0; f < frames.size(); ++f) {
        Rng rng(derive_seed(stage_seed, f));
        collect(f, rng, static_cast<std::size_t>(cap));
    }
}

}  // namespace

ModelBundle train_pose_bundle(std::vector<TrainFrame>& frames, const NormalForest& normal_forest,
                              const TrainConfig& config) {
    if (frames.empty()) throw EmptyTrainingSet("train_pose_bundle: no training frames");

    ModelBundle bundle;
    bundle.normal_forest = normal_forest;
    bundle.config = config.stage;

    for (TrainFrame& fr : frames) prepare_cloud(fr.cloud, normal_forest);

    // Palm template: mean joint layout over the per-frame palm frames,
    // bone lengths, and per-finger in-plane angles (circular mean).
    std::vector<Mat3> palm_rots;
    palm_rots.reserve(frames.size());
    std::array<Vec3, kNumFingers> acc_mcp;
    acc_mcp.fill(Vec3::Zero());  // Eigen default construction leaves garbage
    std::array<double, kNumFingers> acc_sin{}, acc_cos{};
    std::array<std::array<double, 3>, kNumFingers> acc_bone{};
    for (const TrainFrame& fr : frames) {
        const Vec3 wrist = fr.gt.joints[0];
        std::array<Vec3, kNumFingers> mcps;
        for (int k = 0; k < kNumFingers; ++k) mcps[static_cast<std::size_t>(k)] = gt_joint(fr.gt, k, 0);
        const Mat3 rot = palm_basis(wrist, mcps, &fr.cloud);
        palm_rots.push_back(rot);
        for (int k = 0; k < kNumFingers; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            acc_mcp[ks] += rot.transpose() * (mcps[ks] - wrist);
            const Vec3 l = rot.transpose() * (gt_joint(fr.gt, k, 1) - mcps[ks]);
            const double angle = std::atan2(-l.x(), l.y());
            acc_sin[ks] += std::sin(angle);
            acc_cos[ks] += std::cos(angle);
            for (int b = 0; b < 3; ++b)
                acc_bone[ks][static_cast<std::size_t>(b)] +=
                    (gt_joint(fr.gt, k, b + 1) - gt_joint(fr.gt, k, b)).norm();
        }
    }
    const double inv = 1.0 / static_cast<double>(frames.size());
    PalmTemplate& tmpl = bundle.palm;
    tmpl.wrist = Vec3::Zero();
    for (int k = 0; k < kNumFingers; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        tmpl.mcps[ks] = acc_mcp[ks] * inv;
        tmpl.alpha[ks] = std::atan2(acc_sin[ks], acc_cos[ks]);
        for (int b = 0; b < 3; ++b)
            tmpl.bone_mm[ks][static_cast<std::size_t>(b)] = acc_bone[ks][static_cast<std::size_t>(b)] * inv;
    }
    // The frame construction puts the middle MCP on +y exactly; keep the
    // averaged template on the axis too.
    tmpl.mcps[static_cast<int>(Finger::Middle)].x() = 0.0;
    tmpl.mcps[static_cast<int>(Finger::Middle)].z() = 0.0;

    std::vector<const Cloud*> clouds;
    clouds.reserve(frames.size());
    for (const TrainFrame& fr : frames) clouds.push_back(&fr.cloud);

    const auto stage_params = [&](int ordinal) {
        FcrfParams p = config.forest;
        if (ordinal == 0) p.offset_range_mm = config.wrist_offset_range_mm;
        p.seed = derive_seed(config.forest.seed, 2000 + static_cast<std::uint64_t>(ordinal));
        return p;
    };
    const auto sample_seed = [&](int ordinal) {
        return derive_seed(config.forest.seed, 1000 + static_cast<std::uint64_t>(ordinal));
    };

    // Wrist stage: edge points, silhouette frames.
    {
        std::vector<TrainingSample> samples;
        for_each_frame_sample(frames, sample_seed(0), config.samples_per_frame,
                              [&](std::size_t f, Rng& rng, std::size_t cap) {
                                  const Cloud& cloud = frames[f].cloud;
                                  for (const std::int32_t id :
                                       sample_ids(edge_ids(cloud), cap, rng)) {
                                      TrainingSample s;
                                      s.cloud_id = static_cast<std::int32_t>(f);
                                      s.point_id = id;
                                      try {
                                          s.frame = wrist_frame(cloud, id);
                                      } catch (const DegenerateFrame&) {
                                          continue;
                                      }
                                      s.target_offsets = {frames[f].gt.joints[0] -
                                                          cloud.points[static_cast<std::size_t>(id)]};
                                      samples.push_back(std::move(s));
                                  }
                              });
        bundle.wrist = train_fcrf(samples, clouds, stage_params(0));
        bundle.wrist.stage = "wrist";
    }

    // MCP stage: inner points, wrist-referenced frames, five joint targets.
    {
        std::vector<TrainingSample> samples;
        for_each_frame_sample(frames, sample_seed(1), config.samples_per_frame,
                              [&](std::size_t f, Rng& rng, std::size_t cap) {
                                  const Cloud& cloud = frames[f].cloud;
                                  const Vec3 wrist = frames[f].gt.joints[0];
                                  for (const std::int32_t id :
                                       sample_ids(inner_ids(cloud), cap, rng)) {
                                      TrainingSample s;
                                      s.cloud_id = static_cast<std::int32_t>(f);
                                      s.point_id = id;
                                      try {
                                          s.frame = mcp_frame(cloud, id, wrist);
                                      } catch (const DegenerateFrame&) {
                                          continue;
                                      }
                                      const Vec3& p = cloud.points[static_cast<std::size_t>(id)];
                                      s.target_offsets.reserve(kNumFingers);
                                      for (int k = 0; k < kNumFingers; ++k)
                                          s.target_offsets.push_back(gt_joint(frames[f].gt, k, 0) - p);
                                      samples.push_back(std::move(s));
                                  }
                              });
        bundle.mcp = train_fcrf(samples, clouds, stage_params(1));
        bundle.mcp.stage = "mcp";
    }

    // Finger stages: neighborhoods of the ground-truth parent joint.
    const char* const stage_prefix[3] = {"pip", "dip", "tip"};
    for (int part = 1; part < kJointsPerFinger; ++part) {
        for (int k = 0; k < kNumFingers; ++k) {
            const auto stage = static_cast<FingerJoint>(part);
            const auto finger = static_cast<Finger>(k);
            const int ordinal = stage_ordinal(stage, finger);
            const double radius = stage == FingerJoint::Pip ? config.stage.pip_radius_mm
                                                            : config.stage.dip_radius_mm;
            std::vector<TrainingSample> samples;
            for_each_frame_sample(
                frames, sample_seed(ordinal), config.samples_per_frame,
                [&](std::size_t f, Rng& rng, std::size_t cap) {
                    const Cloud& cloud = frames[f].cloud;
                    const Vec3 parent = gt_joint(frames[f].gt, k, part - 1);
                    const Vec3 target = gt_joint(frames[f].gt, k, part);
                    Mat3 pose;
                    if (stage == FingerJoint::Pip) {
                        pose = palm_rots[f] * rot_z(tmpl.alpha[static_cast<std::size_t>(k)]);
                    } else {
                        const Vec3 grand = gt_joint(frames[f].gt, k, part - 2);
                        try {
                            pose = bone_frame(parent, parent, grand, palm_rots[f]).pose;
                        } catch (const DegenerateFrame&) {
                            return;
                        }
                    }
                    for (const std::int32_t id :
                         sample_ids(radius_search(cloud, parent, radius), cap, rng)) {
                        TrainingSample s;
                        s.cloud_id = static_cast<std::int32_t>(f);
                        s.point_id = id;
                        s.frame = LocalFrame{pose, cloud.points[static_cast<std::size_t>(id)]};
                        s.target_offsets = {target - cloud.points[static_cast<std::size_t>(id)]};
                        samples.push_back(std::move(s));
                    }
                });
            FcrfModel& model = stage == FingerJoint::Pip   ? bundle.pip[static_cast<std::size_t>(k)]
                               : stage == FingerJoint::Dip ? bundle.dip[static_cast<std::size_t>(k)]
                                                           : bundle.tip[static_cast<std::size_t>(k)];
            model = train_fcrf(samples, clouds, stage_params(ordinal));
            model.stage = std::string(stage_prefix[part - 1]) + "_" + kFingerNames[k];
        }
    }

    for (int k = 0; k < kNumFingers; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        bundle.pip[ks].axis_constraint = config.stage.constrain_pip ? 1 : -1;
        bundle.dip[ks].axis_constraint = config.stage.constrain_dip_tip ? 1 : -1;
        bundle.tip[ks].axis_constraint = config.stage.constrain_dip_tip ? 1 : -1;
    }
    return bundle;
}

namespace {

std::string fmt_real(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

void write_vec(std::ostream& out, const char* label, const Vec3& v) {
    out << label;
    for (int c = 0; c < 3; ++c) out << ' ' << fmt_real(v[c]);
    out << '\n';
}

std::vector<std::string> stage_file_names() {
    std::vector<std::string> names{"wrist", "mcp"};
    for (const char* prefix : {"pip", "dip", "tip"})
        for (int k = 0; k < kNumFingers; ++k)
            names.push_back(std::string(prefix) + "_" + kFingerNames[k]);
    return names;
}

FcrfModel& stage_slot(ModelBundle& bundle, const std::string& name) {
    if (name == "wrist") return bundle.wrist;
    if (name == "mcp") return bundle.mcp;
    for (int k = 0; k < kNumFingers; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const std::string suffix = std::string("_") + kFingerNames[k];
        if (name == "pip" + suffix) return bundle.pip[ks];
        if (name == "dip" + suffix) return bundle.dip[ks];
        if (name == "tip" + suffix) return bundle.tip[ks];
    }
    throw ModelError("unknown cascade stage: " + name);
}

const FcrfModel& stage_slot(const ModelBundle& bundle, const std::string& name) {
    return stage_slot(const_cast<ModelBundle&>(bundle), name);
}

std::map<std::string, std::vector<double>> read_labelled_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open: " + path);
    std::map<std::string, std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string label;
        ss >> label;
        std::vector<double> values;
        double v = 0.0;
        while (ss >> v) values.push_back(v);
        if (!ss.eof()) throw ModelError("malformed line in " + path + ": " + line);
        rows[label] = std::move(values);
    }
    return rows;
}

const std::vector<double>& expect_row(const std::map<std::string, std::vector<double>>& rows,
                                      const std::string& label, std::size_t count,
                                      const std::string& path) {
    const auto it = rows.find(label);
    if (it == rows.end() || it->second.size() != count)
        throw ModelError("missing or malformed '" + label + "' in " + path);
    return it->second;
}

}  // namespace

void save_bundle(const std::string& dir, const ModelBundle& bundle) {
    fs::create_directories(dir);
    save_normal_forest((fs::path(dir) / "normal_forest.hcrf").string(), bundle.normal_forest);
    for (const std::string& name : stage_file_names())
        save_fcrf_model((fs::path(dir) / ("stage_" + name + ".hcrf")).string(),
                        stage_slot(bundle, name));

    std::ofstream palm((fs::path(dir) / "palm_template.txt").string(), std::ios::binary);
    if (!palm) throw ModelError("cannot write palm template in " + dir);
    write_vec(palm, "wrist", bundle.palm.wrist);
    for (int k = 0; k < kNumFingers; ++k)
        write_vec(palm, ("mcp_" + std::string(kFingerNames[k])).c_str(),
                  bundle.palm.mcps[static_cast<std::size_t>(k)]);
    palm << "alpha";
    for (int k = 0; k < kNumFingers; ++k)
        palm << ' ' << fmt_real(bundle.palm.alpha[static_cast<std::size_t>(k)]);
    palm << '\n';
    for (int k = 0; k < kNumFingers; ++k) {
        palm << "bones_" << kFingerNames[k];
        for (int b = 0; b < 3; ++b)
            palm << ' '
                 << fmt_real(bundle.palm.bone_mm[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)]);
        palm << '\n';
    }
    if (!palm) throw ModelError("write failed for palm template in " + dir);

    std::ofstream cfg((fs::path(dir) / "config.txt").string(), std::ios::binary);
    if (!cfg) throw ModelError("cannot write config in " + dir);
    cfg << "points_per_stage=" << bundle.config.points_per_stage << '\n';
    cfg << "pip_radius_mm=" << fmt_real(bundle.config.pip_radius_mm) << '\n';
    cfg << "dip_radius_mm=" << fmt_real(bundle.config.dip_radius_mm) << '\n';
    cfg << "constrain_pip=" << (bundle.config.constrain_pip ? 1 : 0) << '\n';
    cfg << "constrain_dip_tip=" << (bundle.config.constrain_dip_tip ? 1 : 0) << '\n';
    cfg << "vote_bandwidth_mm=" << fmt_real(bundle.config.vote_bandwidth_mm) << '\n';
    cfg << "seed=" << bundle.config.seed << '\n';
    if (!cfg) throw ModelError("write failed for config in " + dir);
}

ModelBundle load_bundle(const std::string& dir) {
    ModelBundle bundle;
    bundle.normal_forest = load_normal_forest((fs::path(dir) / "normal_forest.hcrf").string());

    for (const std::string& name : stage_file_names()) {
        const std::string path = (fs::path(dir) / ("stage_" + name + ".hcrf")).string();
        FcrfModel model = load_fcrf_model(path);
        if (model.stage != name)
            throw ModelError("stage name mismatch in " + path + ": " + model.stage);
        const int expected_joints = name == "mcp" ? kNumFingers : 1;
        if (model.n_joints != expected_joints)
            throw ModelError("unexpected joint count in " + path);
        stage_slot(bundle, name) = std::move(model);
    }

    const std::string palm_path = (fs::path(dir) / "palm_template.txt").string();
    const auto rows = read_labelled_lines(palm_path);
    const auto& wrist = expect_row(rows, "wrist", 3, palm_path);
    bundle.palm.wrist = Vec3(wrist[0], wrist[1], wrist[2]);
    for (int k = 0; k < kNumFingers; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const auto& m = expect_row(rows, "mcp_" + std::string(kFingerNames[k]), 3, palm_path);
        bundle.palm.mcps[ks] = Vec3(m[0], m[1], m[2]);
        const auto& b = expect_row(rows, "bones_" + std::string(kFingerNames[k]), 3, palm_path);
        for (int i = 0; i < 3; ++i) bundle.palm.bone_mm[ks][static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)];
    }
    const auto& alpha = expect_row(rows, "alpha", kNumFingers, palm_path);
    for (int k = 0; k < kNumFingers; ++k)
        bundle.palm.alpha[static_cast<std::size_t>(k)] = alpha[static_cast<std::size_t>(k)];

    const std::string cfg_path = (fs::path(dir) / "config.txt").string();
    std::ifstream cfg(cfg_path);
    if (!cfg) throw ModelError("cannot open: " + cfg_path);
    std::string line;
    while (std::getline(cfg, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ModelError("malformed config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "points_per_stage") bundle.config.points_per_stage = std::stoi(value);
            else if (key == "pip_radius_mm") bundle.config.pip_radius_mm = std::stod(value);
            else if (key == "dip_radius_mm") bundle.config.dip_radius_mm = std::stod(value);
            else if (key == "constrain_pip") bundle.config.constrain_pip = std::stoi(value) != 0;
            else if (key == "constrain_dip_tip") bundle.config.constrain_dip_tip = std::stoi(value) != 0;
            else if (key == "vote_bandwidth_mm") bundle.config.vote_bandwidth_mm = std::stod(value);
            else if (key == "seed") bundle.config.seed = std::stoull(value);
            else throw ModelError("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw ModelError("malformed config value: " + line);
        } catch (const std::out_of_range&) {
            throw ModelError("malformed config value: " + line);
        }
    }

    for (int k = 0; k < kNumFingers; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        bundle.pip[ks].axis_constraint = bundle.config.constrain_pip ? 1 : -1;
        bundle.dip[ks].axis_constraint = bundle.config.constrain_dip_tip ? 1 : -1;
        bundle.tip[ks].axis_constraint = bundle.config.constrain_dip_tip ? 1 : -1;
    }
    return bundle;
}

void save_poses(const std::string& path, const std::vector<PoseRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const PoseRecord& rec : records) {
        out << rec.id;
        char buf[40];
        for (int j = 0; j < kNumJoints; ++j)
            for (int c = 0; c < 3; ++c) {
                std::snprintf(buf, sizeof(buf), " %.9g",
                              rec.pose.joints[static_cast<std::size_t>(j)][c]);
                out << buf;
            }
        for (int j = 0; j < kNumJoints; ++j)
            out << ' ' << static_cast<int>(rec.fallback[static_cast<std::size_t>(j)] ? 1 : 0);
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<PoseRecord> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<PoseRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PoseRecord rec;
        if (!(ss >> rec.id)) throw DataError("malformed pose line: " + line);
        for (int j = 0; j < kNumJoints; ++j)
            for (int c = 0; c < 3; ++c)
                if (!(ss >> rec.pose.joints[static_cast<std::size_t>(j)][c]))
                    throw DataError("malformed pose line: " + line);
        for (int j = 0; j < kNumJoints; ++j) {
            int flag = 0;
            if (!(ss >> flag)) throw DataError("malformed pose line: " + line);
            rec.fallback[static_cast<std::size_t>(j)] = flag ? 1 : 0;
        }
        std::string extra;
        if (ss >> extra) throw DataError("trailing tokens on pose line: " + line);
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace handpose
