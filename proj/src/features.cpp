#include "handpose/features.hpp"

namespace handpose {

OffsetPair sample_offset_pair(Rng& rng, double range_mm) {
    OffsetPair out;
    for (int i = 0; i < 3; ++i) out.delta1[i] = uniform_in(rng, -range_mm, range_mm);
    for (int i = 0; i < 3; ++i) out.delta2[i] = uniform_in(rng, -range_mm, range_mm);
    return out;
}

OffsetPair sample_offset_pair_in_ball(Rng& rng, double radius_mm) {
    auto draw = [&]() {
        Vec3 d;
        do {
            for (int i = 0; i < 3; ++i) d[i] = uniform_in(rng, -radius_mm, radius_mm);
        } while (d.squaredNorm() > radius_mm * radius_mm);
        return d;
    };
    OffsetPair out;
    out.delta1 = draw();
    out.delta2 = draw();
    return out;
}

double depth_diff(const Cloud& cloud, std::int32_t index, const LocalFrame& frame,
                  const OffsetPair& offsets) {
    const Vec3& p = cloud.points.at(static_cast<std::size_t>(index));
    return eval_feature(cloud, p, frame.pose, FeatureKind::DepthDiff, offsets.delta1,
                        offsets.delta2);
}

double normal_diff(const Cloud& cloud, std::int32_t index, const LocalFrame& frame,
                   const OffsetPair& offsets) {
    if (!cloud.has_normals()) throw MissingNormals("normal_diff requires computed normals");
    const Vec3& p = cloud.points.at(static_cast<std::size_t>(index));
    return eval_feature(cloud, p, frame.pose, FeatureKind::NormalDiff, offsets.delta1,
                        offsets.delta2);
}

}  // namespace handpose
