#pragma once

// Independent reference computations shared by the test files. Each oracle
// deliberately avoids the library code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lpmot/lpmot.hpp"

namespace lpmot::testing {

using Dense = std::vector<std::vector<double>>;

inline Dense dense_of(const SparseMatrix& w) {
    Dense d(w.size(), std::vector<double>(w.size(), 0.0));
    for (std::size_t i = 0; i < w.size(); ++i)
        for (const auto& e : w.row(i)) d[i][e.col] += e.value;
    return d;
}

inline SparseMatrix sparse_of(const Dense& d) {
    SparseMatrix w(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j)
            if (d[i][j] != 0.0) w.add(i, j, d[i][j]);
    return w;
}

/// Effective weights from a signed matrix, symmetrized densely.
inline EffectiveWeights effective_of(const Dense& w) {
    Dense s = w;
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = 0; j < w.size(); ++j) s[i][j] = w[i][j] + w[j][i];
    return EffectiveWeights{sparse_of(w), sparse_of(s)};
}

inline EffectiveWeights effective_of(const SparseMatrix& w) { return effective_of(dense_of(w)); }

inline Matrix matrix_of(const Dense& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
    return m;
}

/// sum_ij W_ij * 1/2 ||y_i - y_j||^2 by direct double loop.
inline double dense_energy(const Dense& w, const Matrix& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (w[i][j] == 0.0) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < y.cols(); ++k) d2 += (y(i, k) - y(j, k)) * (y(i, k) - y(j, k));
            s += w[i][j] * 0.5 * d2;
        }
    return s;
}

/// Same energy through the trace form 1/2 tr(Y^T L Y), L the Laplacian of
/// W + W^T.
inline double laplacian_energy(const Dense& w, const Matrix& y) {
    const std::size_t n = w.size();
    Dense s(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s[i][j] = w[i][j] + w[j][i];
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) deg += s[i][j];
        for (std::size_t k = 0; k < y.cols(); ++k) {
            double ly = deg * y(i, k);
            for (std::size_t j = 0; j < n; ++j) ly -= s[i][j] * y(j, k);
            tr += y(i, k) * ly;
        }
    }
    return 0.5 * tr;
}

inline Matrix random_stochastic(std::size_t n, std::size_t m, std::mt19937_64& rng) {
    std::exponential_distribution<double> ex(1.0);
    Matrix y(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += (y(i, k) = ex(rng));
        for (std::size_t k = 0; k < m; ++k) y(i, k) /= s;
    }
    return y;
}

/// Random sparse effective graph with a share of negative entries.
inline SparseMatrix random_mixed_graph(std::size_t n, double density, double negative_share, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SparseMatrix w(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || u(rng) >= density) continue;
            const double mag = 0.1 + u(rng);
            w.add(i, j, u(rng) < negative_share ? -mag : mag);
        }
    return w;
}

/// Enumerates every point of the grid simplex {x : x_k = c_k * h, sum = 1}.
inline void for_each_grid_point(std::size_t d, int steps, const std::function<void(const std::vector<double>&)>& fn) {
    std::vector<int> c(d, 0);
    std::vector<double> x(d, 0.0);
    const double h = 1.0 / steps;
    std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
        if (k + 1 == d) {
            c[k] = left;
            for (std::size_t q = 0; q < d; ++q) x[q] = c[q] * h;
            fn(x);
            return;
        }
        for (int v = 0; v <= left; ++v) {
            c[k] = v;
            rec(k + 1, left - v);
        }
    };
    rec(0, steps);
}

/// Grid minimizer of f over the simplex; for d > 3 the resolution coarsens
/// and a local refinement pass brings it back to `fine`.
inline std::vector<double> grid_argmin(std::size_t d, const std::function<double(const std::vector<double>&)>& f,
                                       double fine = 1e-3) {
    if (d == 1) return {1.0};
    const int coarse_steps = d <= 3 ? static_cast<int>(std::lround(1.0 / fine)) : 40;
    std::vector<double> best;
    double best_v = std::numeric_limits<double>::infinity();
    for_each_grid_point(d, coarse_steps, [&](const std::vector<double>& x) {
        const double v = f(x);
        if (v < best_v) {
            best_v = v;
            best = x;
        }
    });
    if (d <= 3) return best;
    // Pairwise mass transfers at shrinking step sizes down to `fine`.
    for (double h = 1.0 / coarse_steps; h >= fine * 0.999; h /= 2.0) {
        bool moved = true;
        while (moved) {
            moved = false;
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) {
                    if (a == b || best[b] < h - 1e-15) continue;
                    auto x = best;
                    x[a] += h;
                    x[b] -= h;
                    if (x[b] < 0.0) x[b] = 0.0;
                    const double v = f(x);
                    if (v < best_v - 1e-15) {
                        best_v = v;
                        best = x;
                        moved = true;
                    }
                }
        }
    }
    return best;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

inline std::size_t row_argmax(std::span<const double> r) {
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

/// Canonical form of a partition given per-node labels: each node maps to
/// the smallest node id sharing its label.
inline std::vector<std::size_t> canonical_partition(const Matrix& y) {
    std::vector<std::size_t> out(y.rows());
    std::vector<std::pair<std::size_t, std::size_t>> first;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const std::size_t l = row_argmax(y.row(i));
        auto it = std::find_if(first.begin(), first.end(), [&](const auto& p) { return p.first == l; });
        if (it == first.end()) {
            first.emplace_back(l, i);
            out[i] = i;
        } else {
            out[i] = it->second;
        }
    }
    return out;
}

/// Small tracking problem: `targets` targets in separated lanes moving
/// right at random speeds, one noisy detection per target and frame.
/// Effective weights come from the spatio-temporal and exclusion graphs.
inline EffectiveWeights small_tracking_instance(std::uint64_t seed, int targets = 3, int frames = 6) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.5);
    std::vector<double> y0, vx;
    for (int k = 0; k < targets; ++k) {
        y0.push_back(100.0 + 60.0 * k + 20.0 * u(rng) - 10.0);
        vx.push_back(2.0 + 4.0 * u(rng));
    }
    std::vector<Detection> dets;
    for (int t = 0; t < frames; ++t)
        for (int k = 0; k < targets; ++k) {
            Detection d;
            d.frame = t;
            d.center = {50.0 + vx[static_cast<std::size_t>(k)] * t + noise(rng), y0[static_cast<std::size_t>(k)] + noise(rng)};
            dets.push_back(d);
        }
    const auto nodes = make_nodes(dets);
    GraphParams gp;
    gp.alphas = {1.0};
    return combine({build_spatiotemporal_graph(nodes, gp)}, build_exclusion_graph(nodes, gp), gp.alphas);
}

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lpmot_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline Detection point_detection(int frame, double x, double y, double conf = 1.0) {
    Detection d;
    d.frame = frame;
    d.center = {x, y};
    d.confidence = conf;
    return d;
}

}  // namespace lpmot::testing
