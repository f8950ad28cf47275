#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cloudq/instance.hpp"

namespace testutil {

// Deterministic parameter draws shared across suites.
struct Draw {
    std::mt19937_64 gen;
    explicit Draw(std::uint64_t seed) : gen(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen);
    }
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen);
    }
};

inline double rel_err(double got, double want) {
    const double scale = std::abs(want) > 1e-300 ? std::abs(want) : 1e-300;
    return std::abs(got - want) / scale;
}

// The three reference instances used throughout the suites: three nodes with
// m=(2,5,10), theta=0.3, C=0.2, differing in arrival and service rates.
inline cloudq::Instance base_instance(int idx, cloudq::Regime regime) {
    cloudq::Instance inst;
    inst.regime = regime;
    inst.theta = 0.3;
    inst.C = 0.2;
    switch (idx) {
        case 1:
            inst.lambda = 60.0;
            inst.nodes = {{2, 10.0}, {5, 4.0}, {10, 2.0}};
            break;
        case 2:
            inst.lambda = 53.5;
            inst.nodes = {{2, 8.0}, {5, 3.5}, {10, 2.0}};
            break;
        default:
            inst.lambda = 62.5;
            inst.nodes = {{2, 10.0}, {5, 3.5}, {10, 2.5}};
            break;
    }
    inst.id = "base" + std::to_string(idx);
    return inst;
}

}  // namespace testutil
