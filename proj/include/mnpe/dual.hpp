#pragma once

#include <array>
#include <cmath>

#include "mnpe/common.hpp"

namespace mnpe {

// Make the std overloads visible to templated code that calls exp/log/sqrt
// unqualified on either double or Dual.
using std::exp;
using std::log;
using std::sqrt;

// Forward-mode scalar carrying partial derivatives with respect to up to
// kMaxPartials independent variables. Used to differentiate the
// rational-quadratic spline exactly with respect to its input and raw
// parameters (3*bins per transformed coordinate), which stays well under the
// cap for every supported bin count.
struct Dual {
    static constexpr int kMaxPartials = 32;

    double v = 0.0;
    int n = 0;
    std::array<double, kMaxPartials> d{};

    Dual() = default;
    Dual(double value, int num_partials) : v(value), n(num_partials) { d.fill(0.0); }

    static Dual constant(double value, int num_partials) { return Dual(value, num_partials); }

    static Dual variable(double value, int num_partials, int index) {
        Dual x(value, num_partials);
        x.d[static_cast<std::size_t>(index)] = 1.0;
        return x;
    }
};

inline Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v, a.n);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}

inline Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v, a.n);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}

inline Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v, a.n);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}

inline Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v, a.n);
    const double inv = 1.0 / b.v;
    for (int i = 0; i < a.n; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
    return r;
}

inline Dual operator+(const Dual& a, double b) { Dual r = a; r.v += b; return r; }
inline Dual operator+(double a, const Dual& b) { return b + a; }
inline Dual operator-(const Dual& a, double b) { Dual r = a; r.v -= b; return r; }

inline Dual operator-(double a, const Dual& b) {
    Dual r(a - b.v, b.n);
    for (int i = 0; i < b.n; ++i) r.d[i] = -b.d[i];
    return r;
}

inline Dual operator-(const Dual& a) { return 0.0 - a; }

inline Dual operator*(const Dual& a, double b) {
    Dual r(a.v * b, a.n);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * b;
    return r;
}
inline Dual operator*(double a, const Dual& b) { return b * a; }

inline Dual operator/(const Dual& a, double b) { return a * (1.0 / b); }

inline Dual operator/(double a, const Dual& b) {
    Dual r(a / b.v, b.n);
    const double scale = -r.v / b.v;
    for (int i = 0; i < b.n; ++i) r.d[i] = scale * b.d[i];
    return r;
}

inline Dual log(const Dual& a) {
    Dual r(std::log(a.v), a.n);
    const double inv = 1.0 / a.v;
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * inv;
    return r;
}

inline Dual exp(const Dual& a) {
    Dual r(std::exp(a.v), a.n);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * r.v;
    return r;
}

inline Dual sqrt(const Dual& a) {
    Dual r(std::sqrt(a.v), a.n);
    const double scale = 0.5 / r.v;
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * scale;
    return r;
}

// softplus(x) = log(1+exp(x)) in the overflow-safe split form.
inline Dual softplus(const Dual& a) {
    const double s = a.v > 0.0 ? a.v + std::log1p(std::exp(-a.v)) : std::log1p(std::exp(a.v));
    Dual r(s, a.n);
    const double sig = sigmoid(a.v);
    for (int i = 0; i < a.n; ++i) r.d[i] = a.d[i] * sig;
    return r;
}

inline double value(const Dual& a) { return a.v; }
inline double value(double a) { return a; }

// double analogues so the spline template instantiates for plain evaluation.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace mnpe
