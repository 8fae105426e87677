#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mxci/error.hpp"

namespace mxci {

/// One data point (x, y, z). By convention z[0] is the intercept slot
/// (usually the constant 1); Gaussian conditional models ignore it.
struct Observation {
    std::vector<double> x;
    double y = 0.0;
    std::vector<double> z;
};

inline bool all_finite(std::span<const double> v) {
    for (double a : v)
        if (!std::isfinite(a)) return false;
    return true;
}

/// Throws DimensionMismatch unless obs has the declared shape and finite values.
inline void check_observation(const Observation& obs, std::size_t p, std::size_t q) {
    if (obs.x.size() != p || obs.z.size() != q)
        throw Error(ErrorKind::DimensionMismatch,
                    "observation has dims (" + std::to_string(obs.x.size()) + ", " +
                        std::to_string(obs.z.size()) + "), stream expects (" +
                        std::to_string(p) + ", " + std::to_string(q) + ")");
    if (!all_finite(obs.x) || !all_finite(obs.z) || !std::isfinite(obs.y))
        throw Error(ErrorKind::InvalidArgument, "observation contains non-finite values");
}

}  // namespace mxci
