#include "handpose/normals.hpp"

#include <algorithm>
#include <cmath>

namespace handpose {

double vm_bessel_ratio(double kappa) {
    if (kappa <= 0.0) return 0.0;
    // Modified Lentz on A = 1/(b1 + 1/(b2 + ...)), b_j = 2j/kappa. The
    // fraction needs O(kappa) terms, which is fine for kappa <= kVmKappaMax.
    const double tiny = 1e-30;
    double f = tiny, c = tiny, d = 0.0;
    for (int j = 1; j < 1000000; ++j) {
        const double b = 2.0 * j / kappa;
        d = b + d;
        if (d == 0.0) d = tiny;
        c = b + 1.0 / c;
        if (c == 0.0) c = tiny;
        d = 1.0 / d;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return f;
}

double vm_log_i0(double kappa) {
    if (kappa <= 500.0) {
        const double t = kappa * kappa / 4.0;
        double term = 1.0, sum = 1.0;
        for (int k = 1; k < 10000; ++k) {
            term *= t / (static_cast<double>(k) * k);
            sum += term;
            if (term < sum * 1e-17) break;
        }
        return std::log(sum);
    }
    const double inv = 1.0 / kappa;
    // I0(x) ~ e^x/sqrt(2 pi x) (1 + 1/(8x) + 9/(128x^2) + ...)
    const double corr =
        1.0 + inv * (0.125 + inv * (0.0703125 + inv * (0.0732421875 + inv * 0.112152099609375)));
    return kappa - 0.5 * std::log(2.0 * M_PI * kappa) + std::log(corr);
}

double vm_kappa_from_resultant(double rbar) {
    if (rbar <= 0.0) return 0.0;
    if (rbar >= 1.0) return kVmKappaMax;
    double kappa = std::clamp(rbar * (2.0 - rbar * rbar) / (1.0 - rbar * rbar), 1e-8, kVmKappaMax);
    for (int it = 0; it < 20; ++it) {
        const double a = vm_bessel_ratio(kappa);
        const double f = a - rbar;
        const double deriv = 1.0 - a * a - a / kappa;  // A'(kappa), positive
        if (deriv <= 0.0) break;
        const double step = f / deriv;
        kappa -= step;
        if (!(kappa > 0.0)) kappa = 1e-8;
        if (kappa >= kVmKappaMax) return kVmKappaMax;
        if (std::abs(step) < 1e-10 * std::max(kappa, 1.0)) break;
    }
    return kappa;
}

VonMisesStats vm_fit(std::span<const double> angles) {
    if (angles.empty()) throw DataError("vm_fit: empty sample");
    double c = 0.0, s = 0.0;
    for (double a : angles) {
        c += std::cos(a);
        s += std::sin(a);
    }
    VonMisesStats st;
    st.count = static_cast<int>(angles.size());
    const double rbar = std::sqrt(c * c + s * s) / static_cast<double>(angles.size());
    st.mu = rbar > 0.0 ? std::atan2(s, c) : 0.0;
    if (st.mu <= -M_PI) st.mu = M_PI;
    st.kappa = vm_kappa_from_resultant(std::min(rbar, 1.0));
    return st;
}

double vm_entropy(const VonMisesStats& stats) {
    const double k = stats.kappa;
    return std::log(2.0 * M_PI) + vm_log_i0(k) - k * vm_bessel_ratio(k);
}

VmEntropyTable::VmEntropyTable() {
    for (int i = 0; i <= kBins; ++i) {
        const double rbar = static_cast<double>(i) / kBins;
        VonMisesStats st;
        st.kappa = vm_kappa_from_resultant(rbar);
        h_[static_cast<std::size_t>(i)] = vm_entropy(st);
    }
}

const VmEntropyTable& VmEntropyTable::get() {
    static const VmEntropyTable table;
    return table;
}

double VmEntropyTable::operator()(double rbar) const {
    const double t = std::clamp(rbar, 0.0, 1.0) * kBins;
    const int i = std::min(static_cast<int>(t), kBins - 1);
    const double frac = t - i;
    return h_[static_cast<std::size_t>(i)] * (1.0 - frac) + h_[static_cast<std::size_t>(i) + 1] * frac;
}

Vec3 pca_normal(const Cloud& cloud, std::int32_t index, double radius_mm) {
    const std::vector<std::int32_t> ids = radius_neighbors(cloud, index, radius_mm);
    if (ids.size() < 3)
        throw InsufficientNeighbors("pca_normal: " + std::to_string(ids.size()) + " neighbors");

    Vec3 mean = Vec3::Zero();
    for (std::int32_t id : ids) mean += cloud.points[static_cast<std::size_t>(id)];
    mean /= static_cast<double>(ids.size());

    Mat3 cov = Mat3::Zero();
    for (std::int32_t id : ids) {
        const Vec3 d = cloud.points[static_cast<std::size_t>(id)] - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(ids.size());

    Eigen::SelfAdjointEigenSolver<Mat3> es;
    es.computeDirect(cov);
    if (es.eigenvalues()(1) - es.eigenvalues()(0) <= 1e-12)
        throw DegenerateNeighborhood("pca_normal: ambiguous smallest eigenvector");

    Vec3 n = es.eigenvectors().col(0);
    if (n.dot(cloud.points[static_cast<std::size_t>(index)]) < 0.0) n = -n;
    return n.normalized();
}

Vec3 edge_normal(const Cloud& cloud, std::int32_t index, double radius_mm) {
    const std::vector<std::int32_t> ids = radius_neighbors(cloud, index, radius_mm);

    Eigen::Vector2d edge_sum = Eigen::Vector2d::Zero();
    Eigen::Vector2d all_sum = Eigen::Vector2d::Zero();
    Eigen::Vector2d inner_sum = Eigen::Vector2d::Zero();
    std::size_t edge_count = 0, inner_count = 0;
    std::vector<Eigen::Vector2d> edge_xy;
    for (std::int32_t id : ids) {
        const Eigen::Vector2d xy = cloud.points[static_cast<std::size_t>(id)].head<2>();
        all_sum += xy;
        if (cloud.is_edge[static_cast<std::size_t>(id)]) {
            edge_xy.push_back(xy);
            edge_sum += xy;
            ++edge_count;
        } else {
            inner_sum += xy;
            ++inner_count;
        }
    }
    if (edge_count < 3)
        throw InsufficientNeighbors("edge_normal: " + std::to_string(edge_count) + " edge points");

    // 2D tangent of the silhouette: major axis of the edge-point scatter.
    const Eigen::Vector2d mean = edge_sum / static_cast<double>(edge_count);
    double a = 0.0, b = 0.0, cvar = 0.0;
    for (const Eigen::Vector2d& xy : edge_xy) {
        const Eigen::Vector2d d = xy - mean;
        a += d.x() * d.x();
        b += d.x() * d.y();
        cvar += d.y() * d.y();
    }
    const double lmax = 0.5 * (a + cvar) + std::hypot(0.5 * (a - cvar), b);
    Eigen::Vector2d tangent(b, lmax - a);
    const Eigen::Vector2d alt(lmax - cvar, b);
    if (alt.squaredNorm() > tangent.squaredNorm()) tangent = alt;
    if (tangent.squaredNorm() == 0.0) tangent = Eigen::Vector2d(1.0, 0.0);
    tangent.normalize();

    Eigen::Vector2d n2(-tangent.y(), tangent.x());
    const Eigen::Vector2d interior =
        inner_count > 0 ? Eigen::Vector2d(inner_sum / static_cast<double>(inner_count))
                        : Eigen::Vector2d(all_sum / static_cast<double>(ids.size()));
    const Eigen::Vector2d away =
        cloud.points[static_cast<std::size_t>(index)].head<2>() - interior;
    if (n2.dot(away) < 0.0) n2 = -n2;
    return {n2.x(), n2.y(), 0.0};
}

namespace {

// Deterministic fallback when an edge neighborhood is too thin to fit: the
// outward in-plane radial direction from the optical axis.
Vec3 edge_normal_or_radial(const Cloud& cloud, std::int32_t index, double radius_mm) {
    try {
        return edge_normal(cloud, index, radius_mm);
    } catch (const InsufficientNeighbors&) {
        Vec3 radial(cloud.points[static_cast<std::size_t>(index)].x(),
                    cloud.points[static_cast<std::size_t>(index)].y(), 0.0);
        if (radial.norm() < 1e-9) return {1.0, 0.0, 0.0};
        return radial.normalized();
    }
}

}  // namespace

void compute_normals_pca(Cloud& cloud, double radius_mm) {
    if (cloud.is_edge.empty()) classify_edges(cloud);
    cloud.normals.assign(cloud.size(), Vec3::Zero());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto id = static_cast<std::int32_t>(i);
        if (cloud.is_edge[i]) {
            cloud.normals[i] = edge_normal_or_radial(cloud, id, radius_mm);
        } else {
            try {
                cloud.normals[i] = pca_normal(cloud, id, radius_mm);
            } catch (const InsufficientNeighbors&) {
                cloud.normals[i] = Vec3(0.0, 0.0, 1.0);
            } catch (const DegenerateNeighborhood&) {
                cloud.normals[i] = Vec3(0.0, 0.0, 1.0);
            }
        }
    }
}

namespace {

struct NfSample {
    const Cloud* cloud = nullptr;
    Vec3 p = Vec3::Zero();
    double cos_t = 0.0, sin_t = 0.0, cos_p = 0.0, sin_p = 0.0;
    double theta = 0.0, phi = 0.0;
};

double nf_eval(const NfSample& s, const Eigen::Vector3f& d1, const Eigen::Vector3f& d2) {
    return probe_depth(*s.cloud, s.p + d1.cast<double>()) -
           probe_depth(*s.cloud, s.p + d2.cast<double>());
}

struct NfTrainer {
    const NormalForestParams& params;
    const std::vector<NfSample>& samples;
    NormalTree& tree;
    Rng rng;
    const VmEntropyTable& table = VmEntropyTable::get();
    std::vector<std::int32_t> order;
    std::vector<double> values;
    std::vector<double> bin_c, bin_s;
    std::vector<std::size_t> bin_n;

    NfTrainer(const NormalForestParams& p, const std::vector<NfSample>& s, NormalTree& t,
              std::uint64_t seed)
        : params(p), samples(s), tree(t), rng(seed) {
        order.resize(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<std::int32_t>(i);
    }

    double circular_mean(std::size_t begin, std::size_t end, bool theta) const {
        double c = 0.0, s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const NfSample& sm = samples[static_cast<std::size_t>(order[i])];
            c += theta ? sm.cos_t : sm.cos_p;
            s += theta ? sm.sin_t : sm.sin_p;
        }
        return std::atan2(s, c);
    }

    std::int32_t make_leaf(std::size_t begin, std::size_t end, const double* inherited_theta) {
        const double th = inherited_theta ? *inherited_theta : circular_mean(begin, end, true);
        const double ph = circular_mean(begin, end, false);
        tree.leaves.push_back({static_cast<float>(th), static_cast<float>(ph)});
        return -static_cast<std::int32_t>(tree.leaves.size());
    }

    std::int32_t grow(std::size_t begin, std::size_t end, int depth, const double* inherited_theta) {
        const std::size_t n = end - begin;
        double subtree_theta = 0.0;
        if (depth == params.layer_split) {
            subtree_theta = circular_mean(begin, end, true);
            inherited_theta = &subtree_theta;
        }
        const auto min_leaf = static_cast<std::size_t>(params.min_leaf);
        if (depth >= params.max_depth || n < 2 * min_leaf)
            return make_leaf(begin, end, inherited_theta);

        const bool on_theta = depth < params.layer_split;
        double pc = 0.0, ps = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const NfSample& sm = samples[static_cast<std::size_t>(order[i])];
            pc += on_theta ? sm.cos_t : sm.cos_p;
            ps += on_theta ? sm.sin_t : sm.sin_p;
        }
        const double parent_h = table(std::hypot(pc, ps) / static_cast<double>(n));

        double best_gain = 1e-12;
        Eigen::Vector3f best_d1 = Eigen::Vector3f::Zero(), best_d2 = Eigen::Vector3f::Zero();
        float best_thr = 0.0f;
        values.resize(n);
        for (int cidx = 0; cidx < params.candidates_per_node; ++cidx) {
            const OffsetPair pair = sample_offset_pair_in_ball(rng, params.offset_radius_mm);
            const Eigen::Vector3f d1 = pair.delta1.cast<float>();
            const Eigen::Vector3f d2 = pair.delta2.cast<float>();
            for (std::size_t i = begin; i < end; ++i)
                values[i - begin] = nf_eval(samples[static_cast<std::size_t>(order[i])], d1, d2);
            const std::vector<float> thresholds =
                detail::pick_thresholds(values, params.thresholds_per_candidate);
            if (thresholds.empty()) continue;

            const std::size_t nb = thresholds.size() + 1;
            bin_c.assign(nb, 0.0);
            bin_s.assign(nb, 0.0);
            bin_n.assign(nb, 0);
            for (std::size_t i = 0; i < n; ++i) {
                const double v = values[i];
                std::size_t b = 0;
                while (b < thresholds.size() && static_cast<double>(thresholds[b]) <= v) ++b;
                const NfSample& sm = samples[static_cast<std::size_t>(order[begin + i])];
                bin_c[b] += on_theta ? sm.cos_t : sm.cos_p;
                bin_s[b] += on_theta ? sm.sin_t : sm.sin_p;
                ++bin_n[b];
            }
            double lc = 0.0, ls = 0.0;
            std::size_t ln = 0;
            for (std::size_t k = 0; k < thresholds.size(); ++k) {
                lc += bin_c[k];
                ls += bin_s[k];
                ln += bin_n[k];
                const std::size_t rn = n - ln;
                if (ln < min_leaf || rn < min_leaf) continue;
                const double hl = table(std::hypot(lc, ls) / static_cast<double>(ln));
                const double hr = table(std::hypot(pc - lc, ps - ls) / static_cast<double>(rn));
                const double gain =
                    parent_h - (static_cast<double>(ln) * hl + static_cast<double>(rn) * hr) /
                                   static_cast<double>(n);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_d1 = d1;
                    best_d2 = d2;
                    best_thr = thresholds[k];
                }
            }
        }
        if (best_gain <= 1e-12) return make_leaf(begin, end, inherited_theta);

        const auto mid_it = std::stable_partition(
            order.begin() + static_cast<std::ptrdiff_t>(begin),
            order.begin() + static_cast<std::ptrdiff_t>(end), [&](std::int32_t si) {
                return nf_eval(samples[static_cast<std::size_t>(si)], best_d1, best_d2) <
                       static_cast<double>(best_thr);
            });
        const auto mid = static_cast<std::size_t>(mid_it - order.begin());
        if (mid == begin || mid == end) return make_leaf(begin, end, inherited_theta);

        const auto node_index = static_cast<std::int32_t>(tree.nodes.size());
        TreeNode node;
        node.kind = FeatureKind::DepthDiff;
        node.delta1 = best_d1;
        node.delta2 = best_d2;
        node.threshold = best_thr;
        tree.nodes.push_back(node);  // pre-order: parent before children
        const std::int32_t left = grow(begin, mid, depth + 1, inherited_theta);
        const std::int32_t right = grow(mid, end, depth + 1, inherited_theta);
        tree.nodes[static_cast<std::size_t>(node_index)].left = left;
        tree.nodes[static_cast<std::size_t>(node_index)].right = right;
        return node_index;
    }
};

}  // namespace

NormalForest train_normal_forest(const std::vector<NormalTrainingCloud>& training,
                                 const NormalForestParams& params) {
    if (params.layer_split <= 0 || params.layer_split >= params.max_depth)
        throw DataError("train_normal_forest: layer_split must lie inside (0, max_depth)");

    std::vector<NfSample> samples;
    for (std::size_t ci = 0; ci < training.size(); ++ci) {
        const Cloud& cloud = *training[ci].cloud;
        const std::vector<Vec3>& gt = *training[ci].normals;
        if (gt.size() != cloud.size())
            throw LengthMismatch("train_normal_forest: normals/cloud size mismatch");
        if (cloud.is_edge.size() != cloud.size())
            throw DataError("train_normal_forest: edges not classified");

        std::vector<std::int32_t> inner;
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (!cloud.is_edge[i]) inner.push_back(static_cast<std::int32_t>(i));
        if (params.samples_per_cloud > 0 &&
            inner.size() > static_cast<std::size_t>(params.samples_per_cloud)) {
            Rng crng(derive_seed(derive_seed(params.seed, 0xC10Dull), ci));
            for (std::size_t j = 0; j < static_cast<std::size_t>(params.samples_per_cloud); ++j)
                std::swap(inner[j], inner[j + uniform_index(crng, inner.size() - j)]);
            inner.resize(static_cast<std::size_t>(params.samples_per_cloud));
        }
        for (std::int32_t pid : inner) {
            NfSample s;
            s.cloud = &cloud;
            s.p = cloud.points[static_cast<std::size_t>(pid)];
            Vec3 n = gt[static_cast<std::size_t>(pid)];
            if (n.dot(s.p) < 0.0) n = -n;  // projection-ray sign convention
            const Spherical sph = spherical_from_unit(n.normalized());
            s.theta = sph.theta;
            s.phi = sph.phi;
            s.cos_t = std::cos(sph.theta);
            s.sin_t = std::sin(sph.theta);
            s.cos_p = std::cos(sph.phi);
            s.sin_p = std::sin(sph.phi);
            samples.push_back(s);
        }
    }
    if (samples.empty()) throw EmptyTrainingSet("train_normal_forest: no inner points");

    NormalForest forest;
    forest.max_depth = params.max_depth;
    forest.layer_split = params.layer_split;
    forest.trees.resize(static_cast<std::size_t>(params.n_trees));
    for (int t = 0; t < params.n_trees; ++t) {
        NfTrainer trainer(params, samples, forest.trees[static_cast<std::size_t>(t)],
                          derive_seed(params.seed, static_cast<std::uint64_t>(t)));
        trainer.grow(0, samples.size(), 0, nullptr);
    }
    return forest;
}

void predict_normals(const NormalForest& forest, Cloud& cloud) {
    if (cloud.is_edge.empty()) classify_edges(cloud);
    cloud.normals.assign(cloud.size(), Vec3::Zero());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto id = static_cast<std::int32_t>(i);
        if (cloud.is_edge[i]) {
            cloud.normals[i] = edge_normal_or_radial(cloud, id, kNormalRadiusMm);
            continue;
        }
        const Vec3& p = cloud.points[i];
        double ct = 0.0, st = 0.0, cp = 0.0, sp = 0.0;
        for (const NormalTree& tree : forest.trees) {
            const std::int32_t leaf = route_tree(tree.nodes, [&](const TreeNode& nd) {
                return probe_depth(cloud, p + nd.delta1.cast<double>()) -
                       probe_depth(cloud, p + nd.delta2.cast<double>());
            });
            const auto& angles = tree.leaves[static_cast<std::size_t>(leaf)];
            ct += std::cos(static_cast<double>(angles[0]));
            st += std::sin(static_cast<double>(angles[0]));
            cp += std::cos(static_cast<double>(angles[1]));
            sp += std::sin(static_cast<double>(angles[1]));
        }
        Spherical sph;
        sph.theta = std::atan2(st, ct);
        sph.phi = std::atan2(sp, cp);
        Vec3 n = unit_from_spherical(sph);
        if (n.dot(p) < 0.0) n = -n;
        cloud.normals[i] = n;
    }
}

}  // namespace handpose
