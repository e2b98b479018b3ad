#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lpmot/matrix.hpp"

namespace lpmot {

/// Point of the probability simplex: nonnegative entries summing to one.
class SimplexVector {
public:
    static constexpr double kSumTolerance = 1e-9;

    SimplexVector() = default;

    /// Validates `values`; throws std::invalid_argument when they are not on the simplex.
    static SimplexVector from_values(std::vector<double> values) {
        if (!on_simplex(values)) throw std::invalid_argument("SimplexVector: values not on the simplex");
        return SimplexVector(std::move(values));
    }

    static SimplexVector vertex(std::size_t size, std::size_t k) {
        std::vector<double> v(size, 0.0);
        v.at(k) = 1.0;
        return SimplexVector(std::move(v));
    }

    static SimplexVector uniform(std::size_t size) {
        if (size == 0) throw std::invalid_argument("SimplexVector: empty simplex");
        return SimplexVector(std::vector<double>(size, 1.0 / static_cast<double>(size)));
    }

    static bool on_simplex(std::span<const double> v, double tol = kSumTolerance) {
        if (v.empty()) return false;
        double sum = 0.0;
        for (double x : v) {
            if (!(x >= 0.0)) return false;
            sum += x;
        }
        return std::abs(sum - 1.0) <= tol;
    }

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t k) const noexcept { return values_[k]; }
    std::span<const double> values() const noexcept { return values_; }
    std::vector<double> to_vector() const { return values_; }

    friend bool operator==(const SimplexVector&, const SimplexVector&) = default;

private:
    explicit SimplexVector(std::vector<double> v) : values_(std::move(v)) {}
    friend SimplexVector project_to_simplex(std::span<const double>);

    std::vector<double> values_;
};

/// Fixed step size eta.
struct FixedStep {
    double eta = 1.0;
};

/// Armijo backtracking: the step is multiplied by `beta` until
/// f(x+) <= f(x) + c * <grad, x+ - x>. Each iteration first tries the
/// previous step enlarged by 1/beta.
struct Backtracking {
    double beta = 0.5;
    double c = 1e-4;
};

struct PgdConfig {
    int max_iters = 500;
    double tol = 1e-8;  ///< relative objective decrease that counts as converged
    std::variant<Backtracking, FixedStep> step = Backtracking{};

    void validate() const {
        if (max_iters < 1) throw std::invalid_argument("PgdConfig: max_iters must be >= 1");
        if (!(tol > 0.0)) throw std::invalid_argument("PgdConfig: tol must be > 0");
        if (const auto* bt = std::get_if<Backtracking>(&step)) {
            if (!(bt->beta > 0.0 && bt->beta < 1.0) || !(bt->c > 0.0 && bt->c < 1.0))
                throw std::invalid_argument("PgdConfig: backtracking needs beta, c in (0,1)");
        } else if (!(std::get<FixedStep>(step).eta > 0.0)) {
            throw std::invalid_argument("PgdConfig: fixed step must be > 0");
        }
    }
};

/// In-place Euclidean projection of `v` onto the simplex of the same size.
/// `scratch` is resized as needed so repeated calls do not allocate.
inline void project_to_simplex_inplace(std::span<double> v, std::vector<double>& scratch) {
    const std::size_t d = v.size();
    if (d == 0) throw std::invalid_argument("project_to_simplex: empty vector");
    for (double x : v)
        if (!std::isfinite(x)) throw std::domain_error("project_to_simplex: non-finite input");
    if (d == 1) {
        v[0] = 1.0;
        return;
    }
    scratch.assign(v.begin(), v.end());
    std::sort(scratch.begin(), scratch.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        cumsum += scratch[j];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (scratch[j] - t > 0.0) theta = t;
    }
    for (double& x : v) x = std::max(x - theta, 0.0);
}

inline SimplexVector project_to_simplex(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    std::vector<double> scratch;
    project_to_simplex_inplace(out, scratch);
    return SimplexVector(std::move(out));
}

/// Projects every row of `x` onto the simplex.
inline void project_rows(Matrix& x, std::vector<double>& scratch) {
    for (std::size_t i = 0; i < x.rows(); ++i) project_to_simplex_inplace(x.row(i), scratch);
}

struct PgdResult {
    Matrix x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Projected gradient descent over a product of simplices (one per row of
/// `init`). `objective(x)` returns the value; `gradient(x, g)` fills `g`.
/// `init` must already be row-stochastic. Iterates stay feasible and the
/// objective never increases.
template <class Objective, class Gradient>
PgdResult projected_gradient(Objective&& objective, Gradient&& gradient, Matrix init,
                             const PgdConfig& cfg) {
    cfg.validate();
    PgdResult res;
    res.x = std::move(init);
    res.value = objective(res.x);

    Matrix grad(res.x.rows(), res.x.cols());
    Matrix trial(res.x.rows(), res.x.cols());
    std::vector<double> scratch;

    const bool fixed = std::holds_alternative<FixedStep>(cfg.step);
    const Backtracking bt = fixed ? Backtracking{} : std::get<Backtracking>(cfg.step);
    double step = fixed ? std::get<FixedStep>(cfg.step).eta : 1.0;

    for (int it = 0; it < cfg.max_iters; ++it) {
        res.iterations = it + 1;
        gradient(res.x, grad);

        auto take_step = [&](double s) {
            auto xs = res.x.values();
            auto gs = grad.values();
            auto ts = trial.values();
            for (std::size_t k = 0; k < ts.size(); ++k) ts[k] = xs[k] - s * gs[k];
            project_rows(trial, scratch);
        };

        double trial_value = 0.0;
        bool accepted = false;
        if (fixed) {
            take_step(step);
            trial_value = objective(trial);
            accepted = trial_value <= res.value;
        } else {
            step /= bt.beta;
            for (int k = 0; k < 80; ++k) {
                take_step(step);
                if (trial == res.x) break;
                trial_value = objective(trial);
                double directional = 0.0;
                auto xs = res.x.values();
                auto gs = grad.values();
                auto ts = trial.values();
                for (std::size_t q = 0; q < ts.size(); ++q) directional += gs[q] * (ts[q] - xs[q]);
                if (trial_value <= res.value + bt.c * directional) {
                    accepted = true;
                    break;
                }
                step *= bt.beta;
            }
        }

        if (!accepted) {
            // No descent available at numerical precision: stationary.
            res.converged = true;
            return res;
        }
        const double decrease = res.value - trial_value;
        std::swap(res.x, trial);
        const double scale = std::max({std::abs(res.value), std::abs(trial_value), 1.0});
        res.value = trial_value;
        if (decrease <= cfg.tol * scale) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

/// Convex quadratic 1/2 w^T (P + delta I) w + q^T w + constant.
struct SimplexQp {
    Matrix P;
    std::vector<double> q;
    double delta = 0.0;
    double constant = 0.0;

    std::size_t size() const noexcept { return q.size(); }

    double value(std::span<const double> w) const {
        const std::size_t d = size();
        double s = constant;
        for (std::size_t i = 0; i < d; ++i) {
            if (w[i] == 0.0) continue;
            double pw = delta * w[i];
            for (std::size_t j = 0; j < d; ++j) pw += P(i, j) * w[j];
            s += w[i] * (0.5 * pw + q[i]);
        }
        return s;
    }

    void gradient(std::span<const double> w, std::span<double> g) const {
        const std::size_t d = size();
        for (std::size_t i = 0; i < d; ++i) {
            double s = q[i] + delta * w[i];
            for (std::size_t j = 0; j < d; ++j) s += P(i, j) * w[j];
            g[i] = s;
        }
    }
};

struct QpResult {
    SimplexVector w;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

/// Primal active-set refinement for a simplex QP, starting from a feasible
/// point. Returns nullopt when a reduced KKT system is singular or the
/// working set fails to settle.
inline std::optional<std::vector<double>> active_set_refine(const SimplexQp& qp,
                                                            std::vector<double> w) {
    const std::size_t d = qp.size();
    std::vector<char> free(d, 0);
    for (std::size_t i = 0; i < d; ++i) free[i] = w[i] > 0.0;

    std::vector<double> g(d);
    std::vector<std::size_t> idx;
    std::vector<double> a, b;
    const int max_rounds = static_cast<int>(4 * d + 20);
    for (int round = 0; round < max_rounds; ++round) {
        idx.clear();
        for (std::size_t i = 0; i < d; ++i)
            if (free[i]) idx.push_back(i);
        const std::size_t f = idx.size();
        if (f == 0) return std::nullopt;

        // [H_FF 1; 1^T 0] [w_F; nu] = [-q_F; 1]
        const std::size_t n = f + 1;
        a.assign(n * n, 0.0);
        b.assign(n, 0.0);
        for (std::size_t r = 0; r < f; ++r) {
            for (std::size_t c = 0; c < f; ++c) a[r * n + c] = qp.P(idx[r], idx[c]);
            a[r * n + r] += qp.delta;
            a[r * n + f] = 1.0;
            a[f * n + r] = 1.0;
            b[r] = -qp.q[idx[r]];
        }
        b[f] = 1.0;
        if (!solve_linear(a, b, n)) return std::nullopt;

        // Ratio test toward the reduced optimum.
        double alpha = 1.0;
        std::size_t blocking = d;
        for (std::size_t r = 0; r < f; ++r) {
            const double target = b[r];
            const double cur = w[idx[r]];
            if (target < 0.0) {
                const double ratio = cur / (cur - target);
                if (ratio < alpha) {
                    alpha = ratio;
                    blocking = idx[r];
                }
            }
        }
        for (std::size_t r = 0; r < f; ++r) w[idx[r]] += alpha * (b[r] - w[idx[r]]);
        if (blocking != d) {
            w[blocking] = 0.0;
            free[blocking] = 0;
            continue;
        }

        qp.gradient(w, g);
        double level = 0.0;
        double gscale = 1.0;
        for (std::size_t r = 0; r < f; ++r) level += g[idx[r]];
        level /= static_cast<double>(f);
        for (double x : g) gscale = std::max(gscale, std::abs(x));
        std::size_t enter = d;
        double worst = -1e-11 * gscale;
        for (std::size_t i = 0; i < d; ++i) {
            if (free[i]) continue;
            const double mu = g[i] - level;
            if (mu < worst) {
                worst = mu;
                enter = i;
            }
        }
        if (enter == d) {
            for (double& x : w) x = std::max(x, 0.0);
            const double s = std::accumulate(w.begin(), w.end(), 0.0);
            for (double& x : w) x /= s;
            return w;
        }
        free[enter] = 1;
    }
    return std::nullopt;
}

}  // namespace detail

/// Minimizes `qp` over the simplex: projected gradient from `init` (uniform
/// when absent) followed by an exact active-set refinement of the support.
inline QpResult solve_simplex_qp(const SimplexQp& qp, const PgdConfig& cfg,
                                 const std::optional<SimplexVector>& init = std::nullopt) {
    const std::size_t d = qp.size();
    if (d == 0) throw std::invalid_argument("solve_simplex_qp: empty problem");
    if (qp.P.rows() != d || qp.P.cols() != d)
        throw std::invalid_argument("solve_simplex_qp: P/q dimension mismatch");
    if (qp.delta < 0.0) throw std::invalid_argument("solve_simplex_qp: delta must be >= 0");
    if (init && init->size() != d) throw std::invalid_argument("solve_simplex_qp: init size mismatch");

    QpResult out;
    if (d == 1) {
        out.w = SimplexVector::vertex(1, 0);
        out.value = qp.value(out.w.values());
        out.converged = true;
        return out;
    }

    Matrix x0(1, d);
    const SimplexVector start = init ? *init : SimplexVector::uniform(d);
    std::copy(start.values().begin(), start.values().end(), x0.row(0).begin());

    auto pgd = projected_gradient([&](const Matrix& x) { return qp.value(x.row(0)); },
                                  [&](const Matrix& x, Matrix& g) { qp.gradient(x.row(0), g.row(0)); },
                                  std::move(x0), cfg);

    std::vector<double> w(pgd.x.row(0).begin(), pgd.x.row(0).end());
    out.iterations = pgd.iterations;
    out.converged = pgd.converged;
    out.value = pgd.value;
    if (auto refined = detail::active_set_refine(qp, w)) {
        const double v = qp.value(*refined);
        const double slack = 1e-12 * std::max(1.0, std::abs(out.value));
        if (v <= out.value + slack) {
            w = std::move(*refined);
            out.value = v;
            out.converged = true;
        }
    }
    out.w = SimplexVector::from_values(std::move(w));
    return out;
}

}  // namespace lpmot
