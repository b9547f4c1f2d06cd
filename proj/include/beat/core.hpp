// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Small dense-math primitives, deterministic RNG, error types and the
// serial/parallel execution switch shared by every module.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace beat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (2 config, 3 divergence, 4 I/O).
// ---------------------------------------------------------------------------
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Row-major matrix of doubles. rows is the input dimension in every x*W
// product used by the model, so shapes read like the math.
// ---------------------------------------------------------------------------
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return d.size(); }
    void zero() { std::fill(d.begin(), d.end(), 0.0); }
};

// Dense [h x w x c] feature volume, row-major with channels fastest.
struct Tensor3 {
    int h = 0, w = 0, c = 0;
    Vec d;

    Tensor3() = default;
    Tensor3(int hh, int ww, int cc)
        : h(hh), w(ww), c(cc), d(static_cast<size_t>(hh) * ww * cc, 0.0) {}

    double& at(int y, int x, int k) {
        return d[(static_cast<size_t>(y) * w + x) * c + k];
    }
    double at(int y, int x, int k) const {
        return d[(static_cast<size_t>(y) * w + x) * c + k];
    }
    const double* pos(int y, int x) const {
        return d.data() + (static_cast<size_t>(y) * w + x) * c;
    }
    double* pos(int y, int x) {
        return d.data() + (static_cast<size_t>(y) * w + x) * c;
    }
    size_t size() const { return d.size(); }
    void zero() { std::fill(d.begin(), d.end(), 0.0); }
};

// ---------------------------------------------------------------------------
// Vector/matrix kernels. All loops are written out so accumulation order is
// fixed; the training loop relies on that for bit-reproducibility.
// ---------------------------------------------------------------------------
inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vec& a, const Vec& b) {
    return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

inline double norm2(const double* a, int n) { return std::sqrt(dot(a, a, n)); }
inline double norm2(const Vec& a) { return norm2(a.data(), static_cast<int>(a.size())); }

// y = x * W, x is [W.rows], y is [W.cols].
inline void matvec(const Vec& x, const Mat& w, Vec& y) {
    y.assign(static_cast<size_t>(w.cols), 0.0);
    for (int r = 0; r < w.rows; ++r) {
        const double xv = x[r];
        if (xv == 0.0) continue;
        const double* wr = w.row(r);
        for (int c = 0; c < w.cols; ++c) y[c] += xv * wr[c];
    }
}

// y += g * W^T, g is [W.cols], y is [W.rows]. Backward of matvec w.r.t. x.
inline void matvec_t_accum(const Vec& g, const Mat& w, Vec& y) {
    for (int r = 0; r < w.rows; ++r) {
        y[r] += dot(w.row(r), g.data(), w.cols);
    }
}

// dW += outer(x, g); backward of matvec w.r.t. W.
inline void outer_accum(const Vec& x, const Vec& g, Mat& dw) {
    for (int r = 0; r < dw.rows; ++r) {
        const double xv = x[r];
        if (xv == 0.0) continue;
        double* wr = dw.row(r);
        for (int c = 0; c < dw.cols; ++c) wr[c] += xv * g[c];
    }
}

inline void axpy(double a, const Vec& x, Vec& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// Cosine similarity with the zero-norm convention: either vector having zero
// norm yields exactly 0.
inline double cosine(const Vec& a, const Vec& b) {
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

// Accumulates d(cos)/da and d(cos)/db scaled by g. Zero-norm inputs sit in
// the constant-0 region and contribute nothing.
inline void cosine_backward(const Vec& a, const Vec& b, double g, Vec& da, Vec& db) {
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return;
    const double inv = 1.0 / (na * nb);
    const double c = dot(a, b) * inv;
    const double ia2 = 1.0 / (na * na);
    const double ib2 = 1.0 / (nb * nb);
    for (size_t i = 0; i < a.size(); ++i) {
        da[i] += g * (b[i] * inv - c * a[i] * ia2);
        db[i] += g * (a[i] * inv - c * b[i] * ib2);
    }
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 has a standardized bit stream; the float
// helpers below avoid std::*_distribution, whose output is implementation
// defined.
// ---------------------------------------------------------------------------
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    int uniform_int(int n) {
        const uint64_t bound = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return static_cast<int>(v % bound);
    }

    // Box-Muller; consumes two uniforms per pair of calls.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[i], v[uniform_int(i + 1)]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> eng_ >> flag >> spare_;
        if (!is) throw IoError("corrupt rng state string");
        have_spare_ = flag != 0;
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// ---------------------------------------------------------------------------
// Execution policy. Exec::parallel runs loop bodies under OpenMP; the serial
// path is the reference the tests compare against. Every parallel loop in
// this codebase is over independent slots, so both paths are bit-identical.
// ---------------------------------------------------------------------------
enum class Exec { serial, parallel };

void parallel_for(int n, Exec mode, const std::function<void(int)>& body);

}  // namespace beat
