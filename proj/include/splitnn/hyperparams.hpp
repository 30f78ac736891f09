#pragma once

#include <cstdint>

namespace splitnn {

// One point of the (C_r, S, alpha, Q) search space.
struct HyperParams {
    std::uint16_t channels = 8;  // C_r
    std::uint16_t stride = 2;    // S
    double alpha = 0.1;
    float q = 1.0f;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

}  // namespace splitnn
