#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <utility>

#include "lpmot/energy.hpp"

namespace lpmot {

struct JointConfig {
    int t_joint = 200;
    PgdConfig inner{};
    double outer_tol = 1e-7;
    std::uint64_t seed = 1;
    double init_mix = 1e-2;  ///< weight of the random draw in the default start

    void validate() const {
        if (t_joint < 1) throw std::invalid_argument("JointConfig: t_joint must be >= 1");
        if (!(outer_tol >= 0.0)) throw std::invalid_argument("JointConfig: outer_tol must be >= 0");
        if (!(init_mix > 0.0 && init_mix <= 1.0)) throw std::invalid_argument("JointConfig: init_mix must be in (0, 1]");
        inner.validate();
    }
};

/// Rows drawn from the flat distribution on the m-simplex.
inline LabelMatrix random_init(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (n == 0 || m == 0) throw std::invalid_argument("random_init: n and m must be >= 1");
    std::mt19937_64 rng(seed);
    Matrix y(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = y.row(i);
        double s = 0.0;
        for (double& v : r) {
            // Uniform in [0, 1) from the top 53 bits; identical on every platform.
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            v = -std::log1p(-u);
            s += v;
        }
        if (s == 0.0) {
            std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(m));
            continue;
        }
        for (double& v : r) v /= s;
    }
    return LabelMatrix::from_matrix(std::move(y));
}

/// (1 - mix) * uniform + mix * random_init. A start close to uniform lets
/// the exclusion term separate labels gradually instead of freezing
/// whichever column each random row happens to favor.
inline LabelMatrix perturbed_uniform_init(std::size_t n, std::size_t m, std::uint64_t seed, double mix) {
    Matrix y = random_init(n, m, seed).matrix();
    const double base = (1.0 - mix) / static_cast<double>(m);
    for (double& v : y.values()) v = base + mix * v;
    return LabelMatrix::from_matrix(std::move(y));
}

/// Splits symmetrized weights into the positive part and the magnitude of
/// the negative part, so g = f - h with both halves convex.
inline std::pair<SparseMatrix, SparseMatrix> split_by_sign(const SparseMatrix& s) {
    SparseMatrix pos(s.size()), neg(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<Entry> p, q;
        for (const auto& e : s.row(i)) (e.value > 0.0 ? p : q).push_back({e.col, std::abs(e.value)});
        pos.set_row(i, std::move(p));
        neg.set_row(i, std::move(q));
    }
    return {std::move(pos), std::move(neg)};
}

namespace detail {

inline bool tied_across(const SparseMatrix& neg, const Matrix& y) {
    for (std::size_t i = 0; i < neg.size(); ++i)
        for (const auto& e : neg.row(i))
            if (e.col != i && max_abs_difference(y.row(i), y.row(e.col)) <= 1e-12) return true;
    return false;
}

}  // namespace detail

struct JointResult {
    LabelMatrix y;
    SolveTrace trace;
};

/// Majorization-minimization over the whole label matrix. Each outer step
/// linearizes h at Y_k and minimizes f(Y) - <grad h(Y_k), Y> by projected
/// gradient from Y_k; the outer objective never increases.
template <LossFunction L = SquaredL2Loss>
JointResult solve_joint(const EffectiveWeights& eff, const JointConfig& cfg,
                        const std::optional<LabelMatrix>& init = std::nullopt, const L& phi = {}) {
    cfg.validate();
    const std::size_t n = eff.size();
    JointResult res;
    if (n == 0) {
        res.trace.energies.push_back(0.0);
        res.trace.converged = true;
        return res;
    }
    if (init && init->rows() != n) throw std::invalid_argument("solve_joint: init has wrong row count");
    res.y = init ? *init : perturbed_uniform_init(n, n, cfg.seed, cfg.init_mix);
    const auto [pos, neg] = split_by_sign(eff.w_eff_sym);

    Matrix y = res.y.matrix();
    double g = objective(eff, y, phi);
    res.trace.energies.push_back(g);

    Matrix grad_h, grad_f;
    bool escaped = false;
    for (int k = 0; k < cfg.t_joint; ++k) {
        symmetric_energy_gradient(neg, y, grad_h, phi);
        const Matrix anchor = y;
        auto surrogate = [&](const Matrix& x) {
            double v = 0.5 * pairwise_energy(pos, x, phi);
            const auto xs = x.values();
            const auto hs = grad_h.values();
            for (std::size_t q = 0; q < xs.size(); ++q) v -= hs[q] * xs[q];
            return v;
        };
        auto surrogate_grad = [&](const Matrix& x, Matrix& out) {
            symmetric_energy_gradient(pos, x, grad_f, phi);
            auto os = out.values();
            const auto fs = grad_f.values();
            const auto hs = grad_h.values();
            for (std::size_t q = 0; q < os.size(); ++q) os[q] = fs[q] - hs[q];
        };
        auto inner = projected_gradient(surrogate, surrogate_grad, anchor, cfg.inner);
        if (!inner.converged) ++res.trace.unconverged_inner;

        const double g_new = objective(eff, inner.x, phi);
        // The surrogate majorizes g, so a rise can only be rounding. Ties keep
        // the current iterate bit for bit.
        const bool improved = g_new < g;
        const double decrease = improved ? g - g_new : 0.0;
        if (improved) {
            y = std::move(inner.x);
            g = g_new;
        }
        res.trace.energies.push_back(g);
        if (decrease > cfg.outer_tol * std::max(std::abs(g), 1.0)) continue;
        if (!escaped && detail::tied_across(neg, y)) {
            // Identical rows joined by a negative edge give a zero gradient
            // of h, a stationary point MM cannot leave on its own.
            escaped = true;
            Matrix cand = random_init(n, y.cols(), cfg.seed + 1).matrix();
            auto cs = cand.values();
            const auto ys = y.values();
            for (std::size_t q = 0; q < cs.size(); ++q) cs[q] = (1.0 - cfg.init_mix) * ys[q] + cfg.init_mix * cs[q];
            const double gc = objective(eff, cand, phi);
            if (gc <= g) {
                y = std::move(cand);
                g = gc;
                res.trace.energies.push_back(g);
                continue;
            }
        }
        res.trace.converged = true;
        break;
    }
    res.y = LabelMatrix::from_matrix(std::move(y));
    return res;
}

}  // namespace lpmot
