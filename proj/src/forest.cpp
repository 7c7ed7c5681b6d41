#include "handpose/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "handpose/normals.hpp"

namespace handpose {

namespace detail {

std::vector<float> pick_thresholds(const std::vector<double>& values, int count) {
    std::vector<float> out;
    const std::size_t n = values.size();
    if (n < 2 || count < 1) return out;

    // Quantiles of a deterministic stride subsample for large nodes.
    constexpr std::size_t kMaxSorted = 1024;
    std::vector<double> pool;
    if (n <= kMaxSorted) {
        pool = values;
    } else {
        pool.reserve(kMaxSorted);
        for (std::size_t j = 0; j < kMaxSorted; ++j)
            pool.push_back(values[j * (n - 1) / (kMaxSorted - 1)]);
    }
    std::sort(pool.begin(), pool.end());

    const std::size_t m = pool.size();
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 1; k <= count; ++k) {
        const std::size_t r =
            std::clamp<std::size_t>(static_cast<std::size_t>(k) * m / (count + 1), 1, m - 1);
        const auto t = static_cast<float>(pool[r]);
        if (!(pool.front() < static_cast<double>(t))) continue;  // nothing would go left
        if (!out.empty() && t == out.back()) continue;
        out.push_back(t);
    }
    return out;
}

}  // namespace detail

Vec3 mean_shift_mode(std::span<const Vec3> votes, double bandwidth_mm) {
    if (votes.empty()) throw DataError("mean_shift_mode: no votes");
    if (votes.size() == 1) return votes[0];

    // Coordinate-wise median start: robust to outlier votes.
    Vec3 x = Vec3::Zero();
    std::vector<double> coord(votes.size());
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < votes.size(); ++i) coord[i] = votes[i][c];
        const std::size_t mid = coord.size() / 2;
        std::nth_element(coord.begin(), coord.begin() + static_cast<std::ptrdiff_t>(mid), coord.end());
        double med = coord[mid];
        if (coord.size() % 2 == 0) {
            const double lo = *std::max_element(coord.begin(), coord.begin() + static_cast<std::ptrdiff_t>(mid));
            med = 0.5 * (lo + med);
        }
        x[c] = med;
    }

    const double inv2h2 = 1.0 / (2.0 * bandwidth_mm * bandwidth_mm);
    for (int it = 0; it < 100; ++it) {
        Vec3 num = Vec3::Zero();
        double den = 0.0;
        for (const Vec3& v : votes) {
            const double w = std::exp(-(v - x).squaredNorm() * inv2h2);
            num += w * v;
            den += w;
        }
        if (den < 1e-300) break;
        const Vec3 next = num / den;
        const double step = (next - x).norm();
        x = next;
        if (step < 0.01) break;
    }
    return x;
}

Vec3 aggregate_joint(std::span<const Vec3> votes, double bandwidth_mm) {
    return mean_shift_mode(votes, bandwidth_mm);
}

namespace {

struct FcrfTrainContext {
    const FcrfParams& params;
    std::size_t n_joints;
    std::vector<const Cloud*> sample_cloud;  // per sample
    std::vector<Vec3> position;              // per sample
    std::vector<Mat3> pose;                  // per sample
    std::vector<Vec3> local_target;          // sample-major, n_joints per sample
    std::vector<double> target_sq;           // per sample: sum_j ||local_target||^2

    double eval(std::size_t i, const Eigen::Vector3f& d1, const Eigen::Vector3f& d2) const {
        return eval_feature(*sample_cloud[i], position[i], pose[i], params.kind,
                            d1.cast<double>(), d2.cast<double>());
    }
};

struct FcrfTrainer {
    const FcrfTrainContext& ctx;
    FcrfTree& tree;
    Rng rng;
    std::vector<std::int32_t> order;  // bagged sample ids, partitioned in place
    std::vector<double> values;
    std::vector<double> bin_sum;  // bins x n_joints x 3
    std::vector<double> bin_sq;
    std::vector<std::size_t> bin_n;
    std::vector<Vec3> votes;

    FcrfTrainer(const FcrfTrainContext& c, FcrfTree& t, std::uint64_t seed)
        : ctx(c), tree(t), rng(seed) {}

    std::int32_t make_leaf(std::size_t begin, std::size_t end) {
        const std::size_t j_count = ctx.n_joints;
        const std::size_t leaf_index = tree.leaf_modes.size() / j_count;
        votes.resize(end - begin);
        for (std::size_t j = 0; j < j_count; ++j) {
            for (std::size_t i = begin; i < end; ++i)
                votes[i - begin] =
                    ctx.local_target[static_cast<std::size_t>(order[i]) * j_count + j];
            const Vec3 mode = mean_shift_mode(votes, ctx.params.leaf_bandwidth_mm);
            tree.leaf_modes.push_back(mode.cast<float>());
        }
        return -static_cast<std::int32_t>(leaf_index) - 1;
    }

    std::int32_t grow(std::size_t begin, std::size_t end, int depth) {
        const std::size_t n = end - begin;
        const std::size_t j_count = ctx.n_joints;
        const auto min_leaf = static_cast<std::size_t>(ctx.params.min_leaf);
        if (depth >= ctx.params.max_depth || n < 2 * min_leaf) return make_leaf(begin, end);

        // Parent objective: summed trace of per-joint covariance, times n.
        std::vector<Vec3> parent_sum(j_count, Vec3::Zero());
        double parent_sq = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const auto si = static_cast<std::size_t>(order[i]);
            for (std::size_t j = 0; j < j_count; ++j)
                parent_sum[j] += ctx.local_target[si * j_count + j];
            parent_sq += ctx.target_sq[si];
        }
        auto sse = [](double sq, const Vec3* sums, std::size_t j_count, std::size_t count) {
            double s = sq;
            for (std::size_t j = 0; j < j_count; ++j)
                s -= sums[j].squaredNorm() / static_cast<double>(count);
            return s;
        };
        const double parent_sse = sse(parent_sq, parent_sum.data(), j_count, n);

        double best_gain = 1e-9;
        Eigen::Vector3f best_d1 = Eigen::Vector3f::Zero(), best_d2 = Eigen::Vector3f::Zero();
        float best_thr = 0.0f;
        values.resize(n);
        std::vector<Vec3> left_sum(j_count);
        for (int cidx = 0; cidx < ctx.params.candidates_per_node; ++cidx) {
            const OffsetPair pair = sample_offset_pair(rng, ctx.params.offset_range_mm);
            const Eigen::Vector3f d1 = pair.delta1.cast<float>();
            const Eigen::Vector3f d2 = pair.delta2.cast<float>();
            for (std::size_t i = begin; i < end; ++i)
                values[i - begin] = ctx.eval(static_cast<std::size_t>(order[i]), d1, d2);
            const std::vector<float> thresholds =
                detail::pick_thresholds(values, ctx.params.thresholds_per_candidate);
            if (thresholds.empty()) continue;

            const std::size_t nb = thresholds.size() + 1;
            bin_sum.assign(nb * j_count * 3, 0.0);
            bin_sq.assign(nb, 0.0);
            bin_n.assign(nb, 0);
            for (std::size_t i = 0; i < n; ++i) {
                const double v = values[i];
                std::size_t b = 0;
                while (b < thresholds.size() && static_cast<double>(thresholds[b]) <= v) ++b;
                const auto si = static_cast<std::size_t>(order[begin + i]);
                double* dst = &bin_sum[b * j_count * 3];
                for (std::size_t j = 0; j < j_count; ++j) {
                    const Vec3& o = ctx.local_target[si * j_count + j];
                    dst[j * 3 + 0] += o.x();
                    dst[j * 3 + 1] += o.y();
                    dst[j * 3 + 2] += o.z();
                }
                bin_sq[b] += ctx.target_sq[si];
                ++bin_n[b];
            }

            std::fill(left_sum.begin(), left_sum.end(), Vec3::Zero());
            double left_sq = 0.0;
            std::size_t left_n = 0;
            for (std::size_t k = 0; k < thresholds.size(); ++k) {
                const double* src = &bin_sum[k * j_count * 3];
                for (std::size_t j = 0; j < j_count; ++j)
                    left_sum[j] += Vec3(src[j * 3 + 0], src[j * 3 + 1], src[j * 3 + 2]);
                left_sq += bin_sq[k];
                left_n += bin_n[k];
                const std::size_t right_n = n - left_n;
                if (left_n < min_leaf || right_n < min_leaf) continue;

                double sse_l = left_sq;
                double sse_r = parent_sq - left_sq;
                for (std::size_t j = 0; j < j_count; ++j) {
                    sse_l -= left_sum[j].squaredNorm() / static_cast<double>(left_n);
                    sse_r -= (parent_sum[j] - left_sum[j]).squaredNorm() /
                             static_cast<double>(right_n);
                }
                const double gain = parent_sse - sse_l - sse_r;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_d1 = d1;
                    best_d2 = d2;
                    best_thr = thresholds[k];
                }
            }
        }
        if (best_gain <= 1e-9) return make_leaf(begin, end);

        const auto mid_it = std::stable_partition(
            order.begin() + static_cast<std::ptrdiff_t>(begin),
            order.begin() + static_cast<std::ptrdiff_t>(end), [&](std::int32_t si) {
                return ctx.eval(static_cast<std::size_t>(si), best_d1, best_d2) <
                       static_cast<double>(best_thr);
            });
        const auto mid = static_cast<std::size_t>(mid_it - order.begin());
        if (mid == begin || mid == end) return make_leaf(begin, end);

        const auto node_index = static_cast<std::int32_t>(tree.nodes.size());
        TreeNode node;
        node.kind = ctx.params.kind;
        node.delta1 = best_d1;
        node.delta2 = best_d2;
        node.threshold = best_thr;
        tree.nodes.push_back(node);  // pre-order: parent precedes children
        const std::int32_t left = grow(begin, mid, depth + 1);
        const std::int32_t right = grow(mid, end, depth + 1);
        tree.nodes[static_cast<std::size_t>(node_index)].left = left;
        tree.nodes[static_cast<std::size_t>(node_index)].right = right;
        return node_index;
    }
};

}  // namespace

FcrfModel train_fcrf(std::span<const TrainingSample> samples,
                     const std::vector<const Cloud*>& clouds, const FcrfParams& params) {
    if (samples.empty()) throw EmptyTrainingSet("train_fcrf: no samples");
    const std::size_t n_joints = samples[0].target_offsets.size();
    if (n_joints == 0) throw DataError("train_fcrf: samples carry no targets");

    FcrfTrainContext ctx{params, n_joints, {}, {}, {}, {}, {}};
    ctx.sample_cloud.reserve(samples.size());
    ctx.position.reserve(samples.size());
    ctx.pose.reserve(samples.size());
    ctx.local_target.reserve(samples.size() * n_joints);
    ctx.target_sq.reserve(samples.size());
    for (const TrainingSample& s : samples) {
        if (s.target_offsets.size() != n_joints)
            throw LengthMismatch("train_fcrf: inconsistent target count");
        if (s.cloud_id < 0 || static_cast<std::size_t>(s.cloud_id) >= clouds.size())
            throw DataError("train_fcrf: cloud id out of range");
        const Cloud* cloud = clouds[static_cast<std::size_t>(s.cloud_id)];
        if (params.kind == FeatureKind::NormalDiff && !cloud->has_normals())
            throw MissingNormals("train_fcrf: normal features need cloud normals");
        ctx.sample_cloud.push_back(cloud);
        ctx.position.push_back(cloud->points.at(static_cast<std::size_t>(s.point_id)));
        ctx.pose.push_back(s.frame.pose);
        double sq = 0.0;
        for (const Vec3& o : s.target_offsets) {
            const Vec3 local = s.frame.pose.transpose() * o;  // into the frame
            ctx.local_target.push_back(local);
            sq += local.squaredNorm();
        }
        ctx.target_sq.push_back(sq);
    }

    FcrfModel model;
    model.kind = params.kind;
    model.n_joints = static_cast<int>(n_joints);
    model.trees.resize(static_cast<std::size_t>(params.n_trees));
    const std::size_t n = samples.size();
    const auto bag_size = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(params.bagging_fraction * static_cast<double>(n))));
    for (int t = 0; t < params.n_trees; ++t) {
        FcrfTrainer trainer(ctx, model.trees[static_cast<std::size_t>(t)],
                            derive_seed(params.seed, static_cast<std::uint64_t>(t)));
        trainer.order.resize(bag_size);
        for (std::size_t i = 0; i < bag_size; ++i)
            trainer.order[i] = static_cast<std::int32_t>(uniform_index(trainer.rng, n));
        trainer.grow(0, bag_size, 0);
    }
    return model;
}

std::vector<Vec3> predict_offsets(const FcrfModel& model, const Cloud& cloud, std::int32_t index,
                                  const LocalFrame& frame) {
    if (model.kind == FeatureKind::NormalDiff && !cloud.has_normals())
        throw MissingNormals("predict_offsets: normal features need cloud normals");
    const Vec3& p = cloud.points.at(static_cast<std::size_t>(index));
    const auto j_count = static_cast<std::size_t>(model.n_joints);

    std::vector<Vec3> local(j_count, Vec3::Zero());
    for (const FcrfTree& tree : model.trees) {
        const std::int32_t leaf = route_tree(tree.nodes, [&](const TreeNode& nd) {
            return eval_feature(cloud, p, frame.pose, nd.kind, nd.delta1.cast<double>(),
                                nd.delta2.cast<double>());
        });
        const std::size_t base = static_cast<std::size_t>(leaf) * j_count;
        for (std::size_t j = 0; j < j_count; ++j)
            local[j] += tree.leaf_modes[base + j].cast<double>();
    }

    std::vector<Vec3> out(j_count);
    const double inv_trees = 1.0 / static_cast<double>(model.trees.size());
    for (std::size_t j = 0; j < j_count; ++j) {
        Vec3 o = local[j] * inv_trees;
        if (model.axis_constraint >= 0) {
            const double kept = o[model.axis_constraint];
            o = Vec3::Zero();
            o[model.axis_constraint] = kept;
        }
        out[j] = frame.pose * o;  // back to camera coords
    }
    return out;
}

namespace {

using detail::read_le;
using detail::write_le;

constexpr char kForestMagic[4] = {'H', 'C', 'R', 'F'};
constexpr std::uint8_t kTagInternal = 0;
constexpr std::uint8_t kTagLeaf = 1;

void write_header(std::ofstream& out, const std::string& stage, FeatureKind kind,
                  std::uint32_t n_trees, std::uint32_t n_joints) {
    out.write(kForestMagic, 4);
    write_le<std::uint16_t>(out, 1);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(stage.size()));
    out.write(stage.data(), static_cast<std::streamsize>(stage.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
    write_le<std::uint32_t>(out, n_trees);
    write_le<std::uint32_t>(out, n_joints);
}

struct ForestHeader {
    std::string stage;
    FeatureKind kind;
    std::uint32_t n_trees;
    std::uint32_t n_joints;
};

ForestHeader read_header(std::ifstream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kForestMagic, 4) != 0)
        throw ModelError("not a forest model file: " + path);
    if (read_le<std::uint16_t>(in) != 1)
        throw ModelError("unsupported forest model version: " + path);
    ForestHeader h;
    h.stage.resize(read_le<std::uint16_t>(in));
    in.read(h.stage.data(), static_cast<std::streamsize>(h.stage.size()));
    const auto kind_byte = read_le<std::uint8_t>(in);
    if (kind_byte > 1) throw ModelError("bad feature kind in model: " + path);
    h.kind = static_cast<FeatureKind>(kind_byte);
    h.n_trees = read_le<std::uint32_t>(in);
    h.n_joints = read_le<std::uint32_t>(in);
    if (!in) throw ModelError("truncated forest model: " + path);
    return h;
}

void write_internal(std::ofstream& out, const TreeNode& node) {
    write_le<std::uint8_t>(out, kTagInternal);
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(node.kind));
    for (int i = 0; i < 3; ++i) write_le<float>(out, node.delta1[i]);
    for (int i = 0; i < 3; ++i) write_le<float>(out, node.delta2[i]);
    write_le<float>(out, node.threshold);
}

TreeNode read_internal(std::ifstream& in) {
    TreeNode node;
    node.kind = static_cast<FeatureKind>(read_le<std::uint8_t>(in));
    for (int i = 0; i < 3; ++i) node.delta1[i] = read_le<float>(in);
    for (int i = 0; i < 3; ++i) node.delta2[i] = read_le<float>(in);
    node.threshold = read_le<float>(in);
    return node;
}

// Pre-order emit/rebuild. LeafWrite/LeafRead own the payload layout, so the
// FCRF and normal-forest containers share all the structural code.
template <typename LeafWrite>
void write_subtree(std::ofstream& out, const std::vector<TreeNode>& nodes, std::int32_t enc,
                   LeafWrite&& leaf_write) {
    if (enc < 0) {
        write_le<std::uint8_t>(out, kTagLeaf);
        leaf_write(-enc - 1);
        return;
    }
    const TreeNode& node = nodes[static_cast<std::size_t>(enc)];
    write_internal(out, node);
    write_subtree(out, nodes, node.left, leaf_write);
    write_subtree(out, nodes, node.right, leaf_write);
}

template <typename LeafRead>
std::int32_t read_subtree(std::ifstream& in, std::vector<TreeNode>& nodes, LeafRead&& leaf_read) {
    const auto tag = read_le<std::uint8_t>(in);
    if (!in) throw ModelError("truncated forest model");
    if (tag == kTagLeaf) return -leaf_read() - 1;
    if (tag != kTagInternal) throw ModelError("bad node tag in forest model");
    const auto index = static_cast<std::int32_t>(nodes.size());
    nodes.push_back(read_internal(in));
    const std::int32_t left = read_subtree(in, nodes, leaf_read);
    const std::int32_t right = read_subtree(in, nodes, leaf_read);
    nodes[static_cast<std::size_t>(index)].left = left;
    nodes[static_cast<std::size_t>(index)].right = right;
    return index;
}

}  // namespace

void save_fcrf_model(const std::string& path, const FcrfModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot open for writing: " + path);
    write_header(out, model.stage, model.kind, static_cast<std::uint32_t>(model.trees.size()),
                 static_cast<std::uint32_t>(model.n_joints));
    const auto j_count = static_cast<std::size_t>(model.n_joints);
    for (const FcrfTree& tree : model.trees) {
        write_subtree(out, tree.nodes, tree.nodes.empty() ? -1 : 0, [&](std::int32_t leaf) {
            const std::size_t base = static_cast<std::size_t>(leaf) * j_count;
            for (std::size_t j = 0; j < j_count; ++j)
                for (int c = 0; c < 3; ++c) write_le<float>(out, tree.leaf_modes[base + j][c]);
        });
    }
    if (!out) throw ModelError("write failed: " + path);
}

FcrfModel load_fcrf_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open: " + path);
    const ForestHeader h = read_header(in, path);
    if (h.n_joints == 0) throw ModelError("file holds a normal forest, not a pose stage: " + path);

    FcrfModel model;
    model.stage = h.stage;
    model.kind = h.kind;
    model.n_joints = static_cast<int>(h.n_joints);
    model.trees.resize(h.n_trees);
    for (FcrfTree& tree : model.trees) {
        read_subtree(in, tree.nodes, [&]() {
            const auto leaf = static_cast<std::int32_t>(tree.leaf_modes.size() / h.n_joints);
            for (std::uint32_t j = 0; j < h.n_joints; ++j) {
                Eigen::Vector3f mode;
                for (int c = 0; c < 3; ++c) mode[c] = read_le<float>(in);
                tree.leaf_modes.push_back(mode);
            }
            return leaf;
        });
    }
    if (!in) throw ModelError("truncated forest model: " + path);
    return model;
}

void save_normal_forest(const std::string& path, const NormalForest& forest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot open for writing: " + path);
    write_header(out, "normals", FeatureKind::DepthDiff,
                 static_cast<std::uint32_t>(forest.trees.size()), 0);
    for (const NormalTree& tree : forest.trees) {
        write_subtree(out, tree.nodes, tree.nodes.empty() ? -1 : 0, [&](std::int32_t leaf) {
            write_le<float>(out, tree.leaves[static_cast<std::size_t>(leaf)][0]);
            write_le<float>(out, tree.leaves[static_cast<std::size_t>(leaf)][1]);
        });
    }
    if (!out) throw ModelError("write failed: " + path);
}

NormalForest load_normal_forest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open: " + path);
    const ForestHeader h = read_header(in, path);
    if (h.n_joints != 0) throw ModelError("file holds a pose stage, not a normal forest: " + path);

    NormalForest forest;
    forest.trees.resize(h.n_trees);
    for (NormalTree& tree : forest.trees) {
        read_subtree(in, tree.nodes, [&]() {
            const auto leaf = static_cast<std::int32_t>(tree.leaves.size());
            const float theta = read_le<float>(in);
            const float phi = read_le<float>(in);
            tree.leaves.push_back({theta, phi});
            return leaf;
        });
    }
    if (!in) throw ModelError("truncated forest model: " + path);
    return forest;
}

}  // namespace handpose
