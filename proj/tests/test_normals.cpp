#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "handpose/normals.hpp"
#include "test_util.hpp"

using namespace handpose;

namespace {

// ---- test-side oracles, independent of the library implementation ----

using testutil::angle_between_deg;
using testutil::angular_diff;
using testutil::deep_interior;
using testutil::series_i0;
using testutil::series_i1;

double oracle_ratio(double x) { return series_i1(x) / series_i0(x); }

// Bisection inverse of the Bessel ratio, usable while the series holds.
double oracle_kappa(double rbar) {
    double lo = 0.0, hi = 400.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (oracle_ratio(mid) < rbar ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Cloud make_cloud(const DepthFrame& frame) {
    Cloud cloud = backproject(frame);
    classify_edges(cloud);
    return cloud;
}

}  // namespace

TEST_CASE("bessel ratio agrees with the series oracle") {
    for (double x : {1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 200.0, 450.0}) {
        const double got = vm_bessel_ratio(x);
        const double want = oracle_ratio(x);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(vm_bessel_ratio(0.0) == 0.0);
    // Strictly increasing toward 1.
    double prev = 0.0;
    for (double x : {0.5, 1.0, 4.0, 20.0, 1000.0, 10000.0}) {
        const double a = vm_bessel_ratio(x);
        CHECK(a > prev);
        CHECK(a < 1.0);
        prev = a;
    }
}

TEST_CASE("log I0 agrees with the series, across the branch switch") {
    for (double x : {0.0, 0.1, 1.0, 10.0, 100.0, 480.0, 499.0, 501.0, 520.0}) {
        const double want = std::log(series_i0(x));
        CHECK(vm_log_i0(x) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("kappa solver inverts the Bessel ratio") {
    CHECK(vm_kappa_from_resultant(0.0) == 0.0);
    CHECK(vm_kappa_from_resultant(1.0) == kVmKappaMax);

    // Classic tabulated value for rbar = 0.5 (Banerjee estimate 7/6 plus
    // Newton correction).
    CHECK(vm_kappa_from_resultant(0.5) == doctest::Approx(1.1593).epsilon(2e-3));

    double prev = -1.0;
    for (double r = 0.02; r < 0.995; r += 0.017) {
        const double kappa = vm_kappa_from_resultant(r);
        CHECK(kappa > prev);  // monotone in rbar
        prev = kappa;
        CHECK(vm_bessel_ratio(kappa) == doctest::Approx(r).epsilon(1e-9));
        if (kappa < 380.0)  // series oracle valid range
            CHECK(kappa == doctest::Approx(oracle_kappa(r)).epsilon(1e-6));
    }
}

TEST_CASE("vm_fit handles the degenerate corners") {
    SUBCASE("zero dispersion caps kappa") {
        const std::vector<double> angles(50, M_PI / 3.0);
        const VonMisesStats st = vm_fit(angles);
        CHECK(st.mu == doctest::Approx(M_PI / 3.0).epsilon(1e-12));
        CHECK(st.kappa == kVmKappaMax);
        CHECK(st.count == 50);
    }
    SUBCASE("uniform grid gives kappa near zero") {
        std::vector<double> angles;
        for (int i = 0; i < 256; ++i) angles.push_back(-M_PI + 2.0 * M_PI * i / 256.0);
        const VonMisesStats st = vm_fit(angles);
        CHECK(st.kappa < 1e-8);
    }
    SUBCASE("mean wraps correctly across +-pi") {
        const std::vector<double> angles = {M_PI - 0.01, -M_PI + 0.01};
        const VonMisesStats st = vm_fit(angles);
        CHECK(angular_diff(st.mu, M_PI) < 1e-9);
        CHECK(st.mu <= M_PI);
        CHECK(st.mu > -M_PI);
    }
    SUBCASE("empty input throws") { CHECK_THROWS_AS(vm_fit({}), DataError); }
}

TEST_CASE("vm_fit matches brute-force grid-search MLE") {
    // The MLE of the Von Mises family is defined for any angle sample, so
    // arbitrary concentrated samples exercise the estimator fully.
    Rng rng(7);
    const int kMuGrid = 4096;
    std::vector<double> kappa_grid;
    for (double k = 1e-2; k <= 1.1e4; k *= 1.01) kappa_grid.push_back(k);
    std::vector<double> log_i0_grid(kappa_grid.size());
    for (std::size_t i = 0; i < kappa_grid.size(); ++i) log_i0_grid[i] = vm_log_i0(kappa_grid[i]);

    for (int trial = 0; trial < 20; ++trial) {
        const double mu0 = uniform_in(rng, -M_PI, M_PI);
        const double width = uniform_in(rng, 0.2, 1.8);
        std::vector<double> angles(200);
        for (double& a : angles) a = mu0 + uniform_in(rng, -width, width);

        double c = 0.0, s = 0.0;
        for (double a : angles) {
            c += std::cos(a);
            s += std::sin(a);
        }
        const double n = static_cast<double>(angles.size());
        double best_ll = -1e300, best_mu = 0.0, best_kappa = 0.0;
        for (int mi = 0; mi < kMuGrid; ++mi) {
            const double mu = -M_PI + 2.0 * M_PI * mi / kMuGrid;
            const double proj = c * std::cos(mu) + s * std::sin(mu);
            for (std::size_t ki = 0; ki < kappa_grid.size(); ++ki) {
                const double ll = kappa_grid[ki] * proj -
                                  n * (std::log(2.0 * M_PI) + log_i0_grid[ki]);
                if (ll > best_ll) {
                    best_ll = ll;
                    best_mu = mu;
                    best_kappa = kappa_grid[ki];
                }
            }
        }

        const VonMisesStats st = vm_fit(angles);
        CHECK(angular_diff(st.mu, best_mu) < 1e-3);
        CHECK(st.kappa == doctest::Approx(best_kappa).epsilon(0.02));
    }
}

TEST_CASE("vm_entropy closed form") {
    SUBCASE("kappa zero is the circle's log measure") {
        CHECK(vm_entropy({0.0, 0.0, 1}) == doctest::Approx(std::log(2.0 * M_PI)).epsilon(1e-12));
    }
    SUBCASE("strictly decreasing in kappa") {
        double prev = 1e300;
        for (double k : {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0, 10000.0}) {
            const double h = vm_entropy({0.0, k, 1});
            CHECK(h < prev);
            prev = h;
        }
    }
    SUBCASE("matches quadrature of -integral p ln p") {
        for (double kappa : {0.5, 1.0, 2.0, 5.0}) {
            const int n = 1 << 15;
            const double i0 = series_i0(kappa);
            double sum = 0.0;
            for (int i = 0; i <= n; ++i) {  // Simpson over one period
                const double th = -M_PI + 2.0 * M_PI * i / n;
                const double p = std::exp(kappa * std::cos(th)) / (2.0 * M_PI * i0);
                const double f = -p * std::log(p);
                sum += f * ((i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0));
            }
            const double h = sum * (2.0 * M_PI / n) / 3.0;
            CHECK(vm_entropy({0.0, kappa, 1}) == doctest::Approx(h).epsilon(1e-6));
        }
    }
}

TEST_CASE("entropy-by-resultant table tracks the exact curve") {
    const VmEntropyTable& table = VmEntropyTable::get();
    for (double r : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95}) {
        VonMisesStats st;
        st.kappa = vm_kappa_from_resultant(r);
        CHECK(table(r) == doctest::Approx(vm_entropy(st)).epsilon(1e-3));
    }
    double prev = 1e300;
    for (double r = 0.0; r <= 1.0; r += 1.0 / 64.0) {
        const double h = table(r);
        CHECK(h < prev);
        prev = h;
    }
}

TEST_CASE("pca_normal on a plane") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    const Cloud cloud = make_cloud(testutil::plane_frame(k, 500.0, 100, 220, 60, 180));
    const std::int32_t id = lookup_pixel(cloud, Vec3(0.0, 0.0, 500.0));
    REQUIRE(id != kBackground);
    const Vec3 n = pca_normal(cloud, id, 10.0);
    CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(angle_between_deg(n, Vec3(0, 0, 1)) < 1e-6);
    CHECK(n.dot(cloud.points[static_cast<std::size_t>(id)]) > 0.0);
}

TEST_CASE("pca_normal degenerate neighborhoods") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    SUBCASE("too few neighbors") {
        DepthFrame frame = testutil::plane_frame(k, 500.0, 0, 0, 0, 0);
        frame.at(50, 50) = 500.0f;
        frame.at(51, 50) = 500.0f;
        const Cloud cloud = make_cloud(frame);
        CHECK_THROWS_AS(pca_normal(cloud, 0, 10.0), InsufficientNeighbors);
    }
    SUBCASE("collinear row") {
        DepthFrame frame = testutil::plane_frame(k, 500.0, 0, 0, 0, 0);
        for (int u = 100; u < 120; ++u) frame.at(u, 120) = 500.0f;
        const Cloud cloud = make_cloud(frame);
        CHECK_THROWS_AS(pca_normal(cloud, 5, 10.0), DegenerateNeighborhood);
    }
}

TEST_CASE("pca_normal on a sphere tracks the analytic radial direction") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    std::vector<Vec3> gt;
    const Cloud cloud = make_cloud(testutil::sphere_frame(k, Vec3(0, 0, 450), 80.0, &gt));

    double sum_err = 0.0, max_err = 0.0;
    int checked = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto id = static_cast<std::int32_t>(i);
        if (!deep_interior(cloud, id, 2)) continue;
        Vec3 n_gt = gt[static_cast<std::size_t>(cloud.point_pixel[i])];
        const Vec3& p = cloud.points[i];
        if (n_gt.dot(-p.normalized()) < 0.5) continue;  // skip grazing view angles
        if (n_gt.dot(p) < 0.0) n_gt = -n_gt;            // library sign convention

        const Vec3 n = pca_normal(cloud, id, 10.0);
        const double err = angle_between_deg(n, n_gt);
        sum_err += err;
        max_err = std::max(max_err, err);
        ++checked;
    }
    REQUIRE(checked > 3000);
    CHECK(sum_err / checked < 1.5);
    CHECK(max_err < 3.0);
}

TEST_CASE("edge_normal on a straight silhouette") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    const Cloud cloud = make_cloud(testutil::plane_frame(k, 500.0, 100, 140, 40, 200));
    // A point mid-way down the left column: interior lies to +x.
    const std::int32_t id = cloud.pixel_to_point[static_cast<std::size_t>(120) * k.width + 100];
    REQUIRE(id != kBackground);
    REQUIRE(cloud.is_edge[static_cast<std::size_t>(id)] == 1);
    const Vec3 n = edge_normal(cloud, id, 10.0);
    CHECK(n.z() == 0.0);
    CHECK(angle_between_deg(n, Vec3(-1, 0, 0)) < 1e-6);
}

TEST_CASE("edge_normal needs a fittable silhouette") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    SUBCASE("isolated edge point") {
        DepthFrame frame = testutil::plane_frame(k, 500.0, 0, 0, 0, 0);
        frame.at(80, 80) = 500.0f;
        const Cloud cloud = make_cloud(frame);
        CHECK_THROWS_AS(edge_normal(cloud, 0, 10.0), InsufficientNeighbors);
    }
    SUBCASE("two edge points only") {
        DepthFrame frame = testutil::plane_frame(k, 500.0, 0, 0, 0, 0);
        frame.at(80, 80) = 500.0f;
        frame.at(81, 80) = 500.0f;
        const Cloud cloud = make_cloud(frame);
        CHECK_THROWS_AS(edge_normal(cloud, 0, 10.0), InsufficientNeighbors);
    }
}

TEST_CASE("edge_normal on a disc silhouette is outward radial") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    const Cloud cloud = make_cloud(testutil::disc_frame(k, 500.0, k.cx, k.cy, 60.0));
    const Vec3 center(0.0, 0.0, 500.0);  // disc centre back-projects to the axis

    double sum_err = 0.0, max_err = 0.0;
    int checked = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!cloud.is_edge[i]) continue;
        const Vec3 radial = (cloud.points[i] - center).normalized();
        const Vec3 n = edge_normal(cloud, static_cast<std::int32_t>(i), 10.0);
        const double err = angle_between_deg(n, radial);
        sum_err += err;
        max_err = std::max(max_err, err);
        ++checked;
    }
    REQUIRE(checked > 100);
    CHECK(sum_err / checked < 3.0);
    CHECK(max_err < 5.0);
}

TEST_CASE("normal forest on constant planes collapses to constant leaves") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    std::vector<Cloud> clouds;
    std::vector<std::vector<Vec3>> gts;
    for (int i = 0; i < 3; ++i) {
        clouds.push_back(make_cloud(testutil::plane_frame(k, 480.0 + 20.0 * i, 100, 220, 60, 180)));
        gts.emplace_back(clouds.back().size(), Vec3(0, 0, 1));
    }
    std::vector<NormalTrainingCloud> training;
    for (std::size_t i = 0; i < clouds.size(); ++i) training.push_back({&clouds[i], &gts[i]});

    NormalForestParams params;
    params.max_depth = 6;
    params.layer_split = 3;
    params.candidates_per_node = 20;
    params.thresholds_per_candidate = 5;
    params.samples_per_cloud = 200;
    const NormalForest forest = train_normal_forest(training, params);

    REQUIRE(forest.trees.size() == 1);
    for (const NormalTree& tree : forest.trees) {
        REQUIRE(!tree.leaves.empty());
        for (const auto& leaf : tree.leaves) {
            CHECK(std::abs(leaf[0]) < 1e-3);  // theta: straight along +z
            CHECK(std::abs(leaf[1]) < 1e-3);
        }
    }
}

TEST_CASE("normal forest rejects bad input") {
    CHECK_THROWS_AS(train_normal_forest({}, {}), EmptyTrainingSet);
    NormalForestParams params;
    params.layer_split = 30;  // outside (0, max_depth)
    CHECK_THROWS_AS(train_normal_forest({}, params), DataError);
}

TEST_CASE("normal forest learns tilted planes and predicts unit normals") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    std::vector<Vec3> orientations;
    for (double tilt : {0.0, 0.35, 0.7}) {
        for (double az : {0.0, M_PI / 2, M_PI, 3 * M_PI / 2}) {
            orientations.emplace_back(std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az),
                                      std::cos(tilt));
        }
    }

    std::vector<Cloud> clouds;
    std::vector<std::vector<Vec3>> gts;
    for (const Vec3& n : orientations) {
        std::vector<Vec3> pix_normals;
        const DepthFrame frame = testutil::ramp_frame(k, n, 500.0, 110, 210, 70, 170, &pix_normals);
        clouds.push_back(make_cloud(frame));
        std::vector<Vec3> gt(clouds.back().size());
        for (std::size_t i = 0; i < gt.size(); ++i)
            gt[i] = pix_normals[static_cast<std::size_t>(clouds.back().point_pixel[i])];
        gts.push_back(std::move(gt));
    }
    std::vector<NormalTrainingCloud> training;
    for (std::size_t i = 0; i < clouds.size(); ++i) training.push_back({&clouds[i], &gts[i]});

    NormalForestParams params;
    params.max_depth = 8;
    params.layer_split = 4;
    params.candidates_per_node = 40;
    params.thresholds_per_candidate = 8;
    params.min_leaf = 8;
    params.samples_per_cloud = 300;
    const NormalForest forest = train_normal_forest(training, params);

    // Fresh rendering of a trained orientation, shifted in depth.
    const Vec3 held = orientations[5];
    Cloud probe = make_cloud(testutil::ramp_frame(k, held, 520.0, 110, 210, 70, 170));
    predict_normals(forest, probe);
    REQUIRE(probe.has_normals());

    double sum_err = 0.0;
    int checked = 0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        CHECK(probe.normals[i].norm() == doctest::Approx(1.0).epsilon(1e-6));
        if (probe.is_edge[i] || !deep_interior(probe, static_cast<std::int32_t>(i), 2)) continue;
        // Stay a probe-radius away from the rendered patch border so the
        // feature context matches what training saw.
        const int u = probe.pixel_u(static_cast<std::int32_t>(i));
        const int v = probe.pixel_v(static_cast<std::int32_t>(i));
        if (u < 122 || u >= 198 || v < 82 || v >= 158) continue;
        CHECK(probe.normals[i].dot(probe.points[i]) > 0.0);
        sum_err += angle_between_deg(probe.normals[i], held);
        ++checked;
    }
    REQUIRE(checked > 1000);
    CHECK(sum_err / checked < 7.0);
}

TEST_CASE("normal forest serialization round-trips byte-identically") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    std::vector<Cloud> clouds;
    std::vector<std::vector<Vec3>> gts;
    for (const Vec3& n : {Vec3(0, 0, 1), Vec3(0.3, 0.0, 1.0).normalized()}) {
        clouds.push_back(make_cloud(testutil::ramp_frame(k, n, 500.0, 110, 210, 70, 170)));
        gts.emplace_back(clouds.back().size(), n);
    }
    std::vector<NormalTrainingCloud> training;
    for (std::size_t i = 0; i < clouds.size(); ++i) training.push_back({&clouds[i], &gts[i]});

    NormalForestParams params;
    params.max_depth = 6;
    params.layer_split = 3;
    params.candidates_per_node = 20;
    params.thresholds_per_candidate = 5;
    params.samples_per_cloud = 200;
    const NormalForest forest = train_normal_forest(training, params);

    const std::string path_a = "nf_roundtrip_a.bin", path_b = "nf_roundtrip_b.bin";
    save_normal_forest(path_a, forest);
    const NormalForest loaded = load_normal_forest(path_a);
    save_normal_forest(path_b, loaded);

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string bytes_a = slurp(path_a), bytes_b = slurp(path_b);
    REQUIRE(!bytes_a.empty());
    CHECK(bytes_a == bytes_b);

    REQUIRE(loaded.trees.size() == forest.trees.size());
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        REQUIRE(loaded.trees[t].nodes.size() == forest.trees[t].nodes.size());
        REQUIRE(loaded.trees[t].leaves.size() == forest.trees[t].leaves.size());
        for (std::size_t i = 0; i < forest.trees[t].nodes.size(); ++i) {
            CHECK(loaded.trees[t].nodes[i].threshold == forest.trees[t].nodes[i].threshold);
            CHECK(loaded.trees[t].nodes[i].left == forest.trees[t].nodes[i].left);
            CHECK(loaded.trees[t].nodes[i].right == forest.trees[t].nodes[i].right);
        }
        for (std::size_t i = 0; i < forest.trees[t].leaves.size(); ++i) {
            CHECK(loaded.trees[t].leaves[i][0] == forest.trees[t].leaves[i][0]);
            CHECK(loaded.trees[t].leaves[i][1] == forest.trees[t].leaves[i][1]);
        }
    }

    // Predictions after the round trip are bit-identical.
    Cloud probe = make_cloud(testutil::plane_frame(k, 500.0, 110, 210, 70, 170));
    Cloud probe2 = probe;
    predict_normals(forest, probe);
    predict_normals(loaded, probe2);
    for (std::size_t i = 0; i < probe.size(); ++i) CHECK(probe.normals[i] == probe2.normals[i]);

    std::remove(path_a.c_str());
    std::remove(path_b.c_str());
}

TEST_CASE("predict_normals falls back gracefully on thin edges") {
    const CameraIntrinsics k = testutil::make_intrinsics();
    DepthFrame frame = testutil::plane_frame(k, 500.0, 0, 0, 0, 0);
    frame.at(40, 40) = 500.0f;  // isolated pixel: edge with no fittable curve
    Cloud cloud = make_cloud(frame);

    NormalForest forest;  // empty single-leaf-free forest is fine for edges
    forest.trees.resize(1);
    forest.trees[0].leaves.push_back({0.0f, 0.0f});
    predict_normals(forest, cloud);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.normals[0].norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cloud.normals[0].z() == 0.0);
}
