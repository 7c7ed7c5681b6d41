#pragma once

#include <array>
#include <string>

#include "handpose/geometry.hpp"

namespace handpose {

inline constexpr int kNumFingers = 5;
inline constexpr int kJointsPerFinger = 4;  // MCP, PIP, DIP, TIP
inline constexpr int kNumJoints = 1 + kNumFingers * kJointsPerFinger;

enum class Finger : int { Thumb = 0, Index = 1, Middle = 2, Ring = 3, Pinky = 4 };
enum class FingerJoint : int { Mcp = 0, Pip = 1, Dip = 2, Tip = 3 };

/// Flat joint index: 0 = wrist, then four joints per finger in the fixed
/// finger order thumb, index, middle, ring, pinky.
inline constexpr int joint_index(int finger, int part) {
    return 1 + finger * kJointsPerFinger + part;
}
inline constexpr int joint_index(Finger f, FingerJoint j) {
    return joint_index(static_cast<int>(f), static_cast<int>(j));
}

/// Full skeleton as camera-space joint positions in millimetres. Joints
/// start at the origin; `{}` alone would leave Eigen members unset.
struct HandPose {
    HandPose() { joints.fill(Vec3::Zero()); }
    std::array<Vec3, kNumJoints> joints;
};

inline const std::array<std::string, kNumJoints>& joint_names() {
    static const std::array<std::string, kNumJoints> names = [] {
        const char* fingers[] = {"thumb", "index", "middle", "ring", "pinky"};
        const char* parts[] = {"mcp", "pip", "dip", "tip"};
        std::array<std::string, kNumJoints> out;
        out[0] = "wrist";
        for (int f = 0; f < kNumFingers; ++f)
            for (int p = 0; p < kJointsPerFinger; ++p)
                out[static_cast<std::size_t>(joint_index(f, p))] =
                    std::string(fingers[f]) + "_" + parts[p];
        return out;
    }();
    return names;
}

}  // namespace handpose
