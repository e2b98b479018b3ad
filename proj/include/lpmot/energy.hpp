#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpmot/graphs.hpp"
#include "lpmot/matrix.hpp"
#include "lpmot/simplex.hpp"

namespace lpmot {

/// Row-stochastic n x m matrix; row i is node i's label distribution.
class LabelMatrix {
public:
    LabelMatrix() = default;

    /// Validates every row against the simplex.
    static LabelMatrix from_matrix(Matrix y) {
        for (std::size_t i = 0; i < y.rows(); ++i)
            if (!SimplexVector::on_simplex(y.row(i)))
                throw std::invalid_argument("LabelMatrix: row " + std::to_string(i) + " is not on the simplex");
        LabelMatrix out;
        out.y_ = std::move(y);
        return out;
    }

    static LabelMatrix uniform(std::size_t n, std::size_t m) {
        if (m == 0) throw std::invalid_argument("LabelMatrix: m must be >= 1");
        LabelMatrix out;
        out.y_ = Matrix(n, m, 1.0 / static_cast<double>(m));
        return out;
    }

    /// Row i set to e_i; requires m >= n.
    static LabelMatrix identity(std::size_t n, std::size_t m) {
        if (m < n || m == 0) throw std::invalid_argument("LabelMatrix: identity needs m >= n");
        LabelMatrix out;
        out.y_ = Matrix(n, m);
        for (std::size_t i = 0; i < n; ++i) out.y_(i, i) = 1.0;
        return out;
    }

    std::size_t rows() const noexcept { return y_.rows(); }
    std::size_t cols() const noexcept { return y_.cols(); }
    std::span<const double> row(std::size_t i) const { return y_.row(i); }
    double operator()(std::size_t i, std::size_t j) const { return y_(i, j); }
    const Matrix& matrix() const noexcept { return y_; }

    void set_row(std::size_t i, const SimplexVector& v) {
        if (v.size() != cols()) throw std::invalid_argument("LabelMatrix: row width mismatch");
        std::copy(v.values().begin(), v.values().end(), y_.row(i).begin());
    }

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

private:
    Matrix y_;
};

/// phi(a, b) with its gradient in the first argument.
template <class L>
concept LossFunction = requires(const L& phi, std::span<const double> a, std::span<const double> b,
                                std::span<double> g) {
    { phi.value(a, b) } -> std::convertible_to<double>;
    phi.gradient_first(a, b, g);
};

/// phi(a, b) = 1/2 ||a - b||^2.
struct SquaredL2Loss {
    double value(std::span<const double> a, std::span<const double> b) const noexcept {
        return 0.5 * squared_distance(a, b);
    }
    void gradient_first(std::span<const double> a, std::span<const double> b, std::span<double> g) const noexcept {
        for (std::size_t k = 0; k < a.size(); ++k) g[k] = a[k] - b[k];
    }
};

template <class L>
inline constexpr bool is_squared_l2 = std::is_same_v<std::remove_cvref_t<L>, SquaredL2Loss>;

/// Probes phi on random simplex points and throws std::invalid_argument
/// unless it is coincident, symmetric, and midpoint-convex in its first
/// argument on every probe.
template <LossFunction L>
void validate_loss(const L& phi, std::size_t m = 4, int probes = 64, std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> ex(1.0);
    auto draw = [&] {
        std::vector<double> v(m);
        double s = 0.0;
        for (double& x : v) s += (x = ex(rng));
        for (double& x : v) x /= s;
        return v;
    };
    const double tol = 1e-12;
    for (int k = 0; k < probes; ++k) {
        const auto a = draw(), b = draw(), c = draw();
        if (std::abs(phi.value(a, a)) > tol) throw std::invalid_argument("loss is not coincident: phi(y, y) != 0");
        const double ab = phi.value(a, b), ba = phi.value(b, a);
        if (std::abs(ab - ba) > tol * std::max(1.0, std::abs(ab)))
            throw std::invalid_argument("loss is not symmetric");
        std::vector<double> mid(m);
        for (std::size_t j = 0; j < m; ++j) mid[j] = 0.5 * (a[j] + c[j]);
        const double lhs = phi.value(mid, b);
        const double rhs = 0.5 * (phi.value(a, b) + phi.value(c, b));
        if (lhs > rhs + tol * std::max(1.0, std::abs(rhs)))
            throw std::invalid_argument("loss is not convex in its first argument");
    }
}

/// sum_i sum_j W_ij phi(y_i, y_j), accumulated in row-major order.
template <LossFunction L = SquaredL2Loss>
double pairwise_energy(const SparseMatrix& w, const Matrix& y, const L& phi = {}) {
    if (w.size() != y.rows()) throw std::invalid_argument("pairwise_energy: dimension mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double row = 0.0;
        for (const auto& e : w.row(i)) row += e.value * phi.value(y.row(i), y.row(e.col));
        total += row;
    }
    return total;
}

template <LossFunction L = SquaredL2Loss>
double pairwise_energy(const SparseGraph& w, const Matrix& y, const L& phi = {}) {
    return pairwise_energy(w.matrix(), y, phi);
}

template <LossFunction L = SquaredL2Loss>
double objective(const EffectiveWeights& eff, const Matrix& y, const L& phi = {}) {
    return pairwise_energy(eff.w_eff, y, phi);
}

template <LossFunction L = SquaredL2Loss>
double objective(const EffectiveWeights& eff, const LabelMatrix& y, const L& phi = {}) {
    return objective(eff, y.matrix(), phi);
}

/// Gradient of sum_ij S_ij phi(y_i, y_j) / 2 for a symmetric S:
/// row p = sum_j S_pj grad_1 phi(y_p, y_j).
template <LossFunction L = SquaredL2Loss>
void symmetric_energy_gradient(const SparseMatrix& s, const Matrix& y, Matrix& g, const L& phi = {}) {
    if (s.size() != y.rows()) throw std::invalid_argument("gradient: dimension mismatch");
    g = Matrix(y.rows(), y.cols());
    std::vector<double> tmp(y.cols());
    for (std::size_t p = 0; p < y.rows(); ++p) {
        auto gp = g.row(p);
        const auto yp = y.row(p);
        for (const auto& e : s.row(p)) {
            const auto yj = y.row(e.col);
            if constexpr (is_squared_l2<L>) {
                for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += e.value * (yp[k] - yj[k]);
            } else {
                phi.gradient_first(yp, yj, tmp);
                for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += e.value * tmp[k];
            }
        }
    }
}

template <LossFunction L = SquaredL2Loss>
Matrix objective_gradient(const EffectiveWeights& eff, const Matrix& y, const L& phi = {}) {
    Matrix g;
    symmetric_energy_gradient(eff.w_eff_sym, y, g, phi);
    return g;
}

template <LossFunction L = SquaredL2Loss>
Matrix objective_gradient(const EffectiveWeights& eff, const LabelMatrix& y, const L& phi = {}) {
    return objective_gradient(eff, y.matrix(), phi);
}

/// Nonzero entries of row p of the symmetrized effective weights.
inline std::vector<Entry> decompose_node(const EffectiveWeights& eff, std::size_t p) {
    if (p >= eff.size()) throw std::out_of_range("decompose_node: node out of range");
    const auto r = eff.w_eff_sym.row(p);
    return {r.begin(), r.end()};
}

/// Objective values per iteration; entry 0 is the initial objective.
struct SolveTrace {
    std::vector<double> energies;
    bool converged = false;
    std::size_t unconverged_inner = 0;  ///< inner solves that hit their iteration cap
};

inline void write_energy_trace(std::ostream& out, const std::vector<double>& energies) {
    out << "iter,objective\n";
    for (std::size_t k = 0; k < energies.size(); ++k) out << k << ',' << detail::format_double(energies[k]) << '\n';
}

}  // namespace lpmot
