#include "xlsor/rng.hpp"

#include <cmath>

namespace xlsor {

double Rng::normal() {
    if (has_spare) {
        has_spare = false;
        return spare;
    }
    // Box-Muller; u1 kept away from zero so log stays finite.
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare = r * std::sin(a);
    has_spare = true;
    return r * std::cos(a);
}

} // namespace xlsor
