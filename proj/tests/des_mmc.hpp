#pragma once

#include <algorithm>
#include <cstdint>

#include "mnpe/common.hpp"

namespace mnpe::test {

// Independent discrete-event oracle for the M/M/c steady-state expected
// number waiting: exact continuous-time Markov chain simulation (exponential
// race between the next arrival and the next departure among busy servers),
// accumulating the time average of max(n - c, 0) after a warmup period.
inline double des_mmc_waiting(double gamma, double mu, int c, double horizon, double warmup,
                              Rng& rng) {
    std::int64_t n = 0;
    double t = -warmup;
    double acc = 0.0;
    while (t < horizon) {
        const int busy = static_cast<int>(std::min<std::int64_t>(n, c));
        const double rate = gamma + busy * mu;
        const double dt = rng.exponential(rate);
        const double t0 = std::max(t, 0.0);
        const double t1 = std::min(t + dt, horizon);
        if (t1 > t0) acc += (t1 - t0) * static_cast<double>(std::max<std::int64_t>(n - c, 0));
        t += dt;
        if (t >= horizon) break;
        if (rate * rng.uniform() < gamma) {
            ++n;
        } else {
            --n;
        }
    }
    return acc / horizon;
}

}  // namespace mnpe::test
