#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpmot/dc_joint.hpp"
#include "lpmot/energy.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lpmot {

enum class SweepOrder { sequential, seeded_random };

struct ParallelConfig {
    int workers = 1;
};

struct NodewiseConfig {
    int t_con = 50;
    PgdConfig inner{};
    int mm_iters = 20;        ///< MM rounds per node for losses without a closed form
    double sweep_tol = 1e-8;  ///< relative decrease below which sweeping stops
    SweepOrder order = SweepOrder::sequential;
    std::uint64_t seed = 1;
    std::optional<ParallelConfig> parallel;

    void validate() const {
        if (t_con < 1) throw std::invalid_argument("NodewiseConfig: t_con must be >= 1");
        if (mm_iters < 1) throw std::invalid_argument("NodewiseConfig: mm_iters must be >= 1");
        if (!(sweep_tol >= 0.0)) throw std::invalid_argument("NodewiseConfig: sweep_tol must be >= 0");
        if (parallel && parallel->workers < 1) throw std::invalid_argument("NodewiseConfig: workers must be >= 1");
        inner.validate();
    }
};

/// Pull toward the one-hot label `anchor` with weight `weight` >= 0.
struct SourceTerm {
    double weight = 0.0;
    std::size_t anchor = 0;
};

/// sum_j w_j phi(y, y_j) + w_s phi(y, e_anchor).
template <LossFunction L = SquaredL2Loss>
double node_objective(std::span<const double> y, std::span<const Entry> row, const Matrix& labels,
                      const std::optional<SourceTerm>& source, const L& phi = {}) {
    double v = 0.0;
    for (const auto& e : row) v += e.value * phi.value(y, labels.row(e.col));
    if (source && source->weight != 0.0) {
        std::vector<double> anchor(y.size(), 0.0);
        anchor.at(source->anchor) = 1.0;
        v += source->weight * phi.value(y, anchor);
    }
    return v;
}

struct NodeUpdateStats {
    bool converged = true;
};

namespace detail {

/// Exact minimizer of sum_j w_j 1/2||y - y_j||^2 + w_s 1/2||y - e||^2 over
/// the simplex. The objective is 1/2 a ||y||^2 - <c, y> + const: strictly
/// convex when a > 0, otherwise concave and minimized at a vertex.
inline std::vector<double> squared_node_minimizer(std::span<const Entry> row, const Matrix& labels,
                                                  const std::optional<SourceTerm>& source, std::size_t p,
                                                  std::vector<double>& scratch) {
    const std::size_t m = labels.cols();
    std::vector<double> c(m, 0.0);
    double a = 0.0;
    for (const auto& e : row) {
        if (e.col == p) continue;  // loops contribute a constant
        a += e.value;
        const auto yj = labels.row(e.col);
        for (std::size_t k = 0; k < m; ++k) c[k] += e.value * yj[k];
    }
    if (source && source->weight != 0.0) {
        a += source->weight;
        c.at(source->anchor) += source->weight;
    }
    if (a > 0.0) {
        for (double& v : c) v /= a;
        project_to_simplex_inplace(c, scratch);
        return c;
    }
    std::vector<double> y(m, 0.0);
    y[argmax(c)] = 1.0;
    return y;
}

template <LossFunction L>
std::vector<double> mm_node_minimizer(std::span<const Entry> row, const Matrix& labels,
                                      const std::optional<SourceTerm>& source, std::size_t p,
                                      const NodewiseConfig& cfg, const L& phi, NodeUpdateStats& stats) {
    const std::size_t m = labels.cols();
    std::vector<Entry> pos, neg;
    for (const auto& e : row) {
        if (e.col == p) continue;
        (e.value > 0.0 ? pos : neg).push_back({e.col, std::abs(e.value)});
    }
    std::vector<double> anchor;
    if (source && source->weight != 0.0) {
        anchor.assign(m, 0.0);
        anchor.at(source->anchor) = 1.0;
    }
    Matrix y(1, m);
    std::copy(labels.row(p).begin(), labels.row(p).end(), y.row(0).begin());
    std::vector<double> gh(m), tmp(m);
    auto f_value = [&](std::span<const double> x) {
        double v = 0.0;
        for (const auto& e : pos) v += e.value * phi.value(x, labels.row(e.col));
        if (!anchor.empty()) v += source->weight * phi.value(x, anchor);
        return v;
    };
    auto h_value = [&](std::span<const double> x) {
        double v = 0.0;
        for (const auto& e : neg) v += e.value * phi.value(x, labels.row(e.col));
        return v;
    };
    double current = f_value(y.row(0)) - h_value(y.row(0));
    for (int round = 0; round < cfg.mm_iters; ++round) {
        std::fill(gh.begin(), gh.end(), 0.0);
        for (const auto& e : neg) {
            phi.gradient_first(y.row(0), labels.row(e.col), tmp);
            for (std::size_t k = 0; k < m; ++k) gh[k] += e.value * tmp[k];
        }
        auto surrogate = [&](const Matrix& x) { return f_value(x.row(0)) - dot(gh, x.row(0)); };
        auto surrogate_grad = [&](const Matrix& x, Matrix& g) {
            auto gr = g.row(0);
            std::fill(gr.begin(), gr.end(), 0.0);
            for (const auto& e : pos) {
                phi.gradient_first(x.row(0), labels.row(e.col), tmp);
                for (std::size_t k = 0; k < m; ++k) gr[k] += e.value * tmp[k];
            }
            if (!anchor.empty()) {
                phi.gradient_first(x.row(0), anchor, tmp);
                for (std::size_t k = 0; k < m; ++k) gr[k] += source->weight * tmp[k];
            }
            for (std::size_t k = 0; k < m; ++k) gr[k] -= gh[k];
        };
        auto inner = projected_gradient(surrogate, surrogate_grad, y, cfg.inner);
        if (!inner.converged) stats.converged = false;
        const double next = f_value(inner.x.row(0)) - h_value(inner.x.row(0));
        if (!(next < current)) break;
        const double decrease = current - next;
        y = std::move(inner.x);
        current = next;
        if (decrease <= cfg.inner.tol * std::max(std::abs(current), 1.0)) break;
    }
    return {y.row(0).begin(), y.row(0).end()};
}

}  // namespace detail

/// Minimizes node p's share of the objective with every other row fixed.
/// The returned row never scores worse than the current one.
template <LossFunction L = SquaredL2Loss>
SimplexVector node_update(std::size_t p, std::span<const Entry> row, const Matrix& labels,
                          const std::optional<SourceTerm>& source, const NodewiseConfig& cfg, const L& phi = {},
                          NodeUpdateStats* stats = nullptr) {
    if (p >= labels.rows()) throw std::out_of_range("node_update: node out of range");
    for (const auto& e : row)
        if (e.col >= labels.rows()) throw std::out_of_range("node_update: neighbor out of range");
    if (source && (source->anchor >= labels.cols() || !(source->weight >= 0.0)))
        throw std::invalid_argument("node_update: invalid source term");
    const auto current = labels.row(p);
    std::vector<Entry> filtered;
    if (std::any_of(row.begin(), row.end(), [&](const Entry& e) { return e.col == p; })) {
        // Loops add phi(y, y) = 0 to the true objective.
        for (const auto& e : row)
            if (e.col != p) filtered.push_back(e);
        row = filtered;
    }
    const bool has_source = source && source->weight != 0.0;
    if (row.empty() && !has_source) return SimplexVector::from_values({current.begin(), current.end()});

    NodeUpdateStats local;
    std::vector<double> candidate;
    if constexpr (is_squared_l2<L>) {
        std::vector<double> scratch;
        candidate = detail::squared_node_minimizer(row, labels, source, p, scratch);
    } else {
        candidate = detail::mm_node_minimizer(row, labels, source, p, cfg, phi, local);
    }
    if (stats) *stats = local;
    const double before = node_objective(current, row, labels, source, phi);
    const double after = node_objective(candidate, row, labels, source, phi);
    if (after < before) return SimplexVector::from_values(std::move(candidate));
    return SimplexVector::from_values({current.begin(), current.end()});
}

template <LossFunction L = SquaredL2Loss>
SimplexVector node_update(std::size_t p, std::span<const Entry> row, const LabelMatrix& labels,
                          const std::optional<SourceTerm>& source, const NodewiseConfig& cfg, const L& phi = {}) {
    return node_update(p, row, labels.matrix(), source, cfg, phi);
}

/// Visit order of one sweep over n nodes.
inline std::vector<std::size_t> sweep_order(std::size_t n, const NodewiseConfig& cfg, int sweep_index) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (cfg.order == SweepOrder::seeded_random) {
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(sweep_index));
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

/// Optional per-node source terms (indexed by node id).
using SourceTerms = std::vector<std::optional<SourceTerm>>;

inline std::optional<SourceTerm> source_of(const SourceTerms* sources, std::size_t p) {
    return sources && p < sources->size() ? (*sources)[p] : std::nullopt;
}

/// One Gauss-Seidel pass in the given order, updating `y` in place.
/// Returns the number of updates whose inner solve did not converge.
template <LossFunction L = SquaredL2Loss>
std::size_t sweep_in_order(const EffectiveWeights& eff, Matrix& y, std::span<const std::size_t> order,
                           const NodewiseConfig& cfg, const SourceTerms* sources = nullptr, const L& phi = {}) {
    std::size_t unconverged = 0;
    for (std::size_t p : order) {
        NodeUpdateStats stats;
        const auto v = node_update(p, eff.w_eff_sym.row(p), y, source_of(sources, p), cfg, phi, &stats);
        if (!stats.converged) ++unconverged;
        std::copy(v.values().begin(), v.values().end(), y.row(p).begin());
    }
    return unconverged;
}

struct SweepResult {
    LabelMatrix y;
    double objective = 0.0;
};

template <LossFunction L = SquaredL2Loss>
SweepResult sweep(const EffectiveWeights& eff, const LabelMatrix& y, const NodewiseConfig& cfg, const L& phi = {}) {
    cfg.validate();
    if (y.rows() != eff.size()) throw std::invalid_argument("sweep: dimension mismatch");
    Matrix work = y.matrix();
    const auto order = sweep_order(eff.size(), cfg, 0);
    sweep_in_order(eff, work, order, cfg, nullptr, phi);
    SweepResult out;
    out.objective = objective(eff, work, phi);
    out.y = LabelMatrix::from_matrix(std::move(work));
    return out;
}

struct NodewiseResult {
    LabelMatrix y;
    SolveTrace trace;
};

/// Objective plus source terms, the quantity node updates decrease.
template <LossFunction L = SquaredL2Loss>
double objective_with_sources(const EffectiveWeights& eff, const Matrix& y, const SourceTerms* sources,
                              const L& phi = {}) {
    double g = objective(eff, y, phi);
    if (!sources) return g;
    std::vector<double> anchor(y.cols());
    for (std::size_t p = 0; p < sources->size() && p < y.rows(); ++p) {
        const auto& s = (*sources)[p];
        if (!s || s->weight == 0.0) continue;
        std::fill(anchor.begin(), anchor.end(), 0.0);
        anchor.at(s->anchor) = 1.0;
        g += s->weight * phi.value(y.row(p), anchor);
    }
    return g;
}

/// Coordinate descent: t_con sweeps, or fewer once a sweep gains less than
/// sweep_tol relative.
template <LossFunction L = SquaredL2Loss>
NodewiseResult solve_nodewise(const EffectiveWeights& eff, const NodewiseConfig& cfg,
                              const std::optional<LabelMatrix>& init = std::nullopt,
                              const SourceTerms* sources = nullptr, const L& phi = {}) {
    cfg.validate();
    const std::size_t n = eff.size();
    NodewiseResult res;
    if (n == 0) {
        res.trace.energies.push_back(0.0);
        res.trace.converged = true;
        return res;
    }
    if (init && init->rows() != n) throw std::invalid_argument("solve_nodewise: init has wrong row count");
    Matrix y = init ? init->matrix() : random_init(n, n, cfg.seed).matrix();
    double g = objective_with_sources(eff, y, sources, phi);
    res.trace.energies.push_back(g);
    for (int s = 0; s < cfg.t_con; ++s) {
        const auto order = sweep_order(n, cfg, s);
        res.trace.unconverged_inner += sweep_in_order(eff, y, order, cfg, sources, phi);
        const double g_new = objective_with_sources(eff, y, sources, phi);
        const double decrease = g - g_new;
        g = g_new;
        res.trace.energies.push_back(g);
        if (decrease <= cfg.sweep_tol * std::max(std::abs(g), 1.0)) {
            res.trace.converged = true;
            break;
        }
    }
    res.y = LabelMatrix::from_matrix(std::move(y));
    return res;
}

using Batch = std::vector<std::size_t>;

/// Partitions the nodes into interference-free batches: no two nodes of a
/// batch share a nonzero symmetrized weight. Nodes are colored first-fit in
/// descending degree order (ties by id); batches are returned largest first
/// with ids ascending inside each batch.
inline std::vector<Batch> schedule_batches(const EffectiveWeights& eff) {
    const std::size_t n = eff.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto degree = [&](std::size_t i) {
        std::size_t d = 0;
        for (const auto& e : eff.w_eff_sym.row(i)) d += e.col != i;
        return d;
    };
    std::vector<std::size_t> deg(n);
    for (std::size_t i = 0; i < n; ++i) deg[i] = degree(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return deg[a] > deg[b]; });

    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> color(n, none);
    std::vector<std::size_t> seen;  // seen[c] == i marks color c as taken by a neighbor of i
    std::size_t colors = 0;
    for (std::size_t i : order) {
        seen.assign(colors, none);
        for (const auto& e : eff.w_eff_sym.row(i))
            if (e.col != i && color[e.col] != none) seen[color[e.col]] = i;
        std::size_t c = 0;
        while (c < colors && seen[c] == i) ++c;
        if (c == colors) ++colors;
        color[i] = c;
    }
    std::vector<Batch> batches(colors);
    for (std::size_t i = 0; i < n; ++i) batches[color[i]].push_back(i);
    std::stable_sort(batches.begin(), batches.end(),
                     [](const Batch& a, const Batch& b) { return a.size() > b.size(); });
    return batches;
}

inline void write_batch_csv(std::ostream& out, const std::vector<Batch>& batches) {
    out << "batch_id,node_id\n";
    for (std::size_t b = 0; b < batches.size(); ++b)
        for (std::size_t i : batches[b]) out << b << ',' << i << '\n';
}

/// Called after every batch with (sweep, batch index, objective).
using BatchObserver = std::function<void(int, std::size_t, double)>;

/// One pass over the batches; nodes within a batch are updated concurrently
/// from the same snapshot and written back after the batch completes.
template <LossFunction L = SquaredL2Loss>
std::size_t parallel_pass(const EffectiveWeights& eff, Matrix& y, const std::vector<Batch>& batches, int workers,
                          const NodewiseConfig& cfg, const SourceTerms* sources, const L& phi, int sweep_index,
                          const BatchObserver& observer) {
    std::size_t unconverged = 0;
    const std::size_t m = y.cols();
    std::vector<double> buffer;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const Batch& batch = batches[b];
        buffer.assign(batch.size() * m, 0.0);
        std::size_t bad = 0;
#pragma omp parallel for num_threads(workers) schedule(dynamic, 4) reduction(+ : bad)
        for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(batch.size()); ++k) {
            const std::size_t p = batch[static_cast<std::size_t>(k)];
            NodeUpdateStats stats;
            const auto v = node_update(p, eff.w_eff_sym.row(p), y, source_of(sources, p), cfg, phi, &stats);
            if (!stats.converged) ++bad;
            std::copy(v.values().begin(), v.values().end(), buffer.begin() + k * static_cast<std::ptrdiff_t>(m));
        }
        unconverged += bad;
        for (std::size_t k = 0; k < batch.size(); ++k)
            std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(k * m),
                      buffer.begin() + static_cast<std::ptrdiff_t>((k + 1) * m), y.row(batch[k]).begin());
        if (observer) observer(sweep_index, b, objective_with_sources(eff, y, sources, phi));
    }
    return unconverged;
}

/// Batch-parallel coordinate descent. With one worker the result equals a
/// sequential run over the concatenated batches.
template <LossFunction L = SquaredL2Loss>
NodewiseResult solve_parallel(const EffectiveWeights& eff, const NodewiseConfig& cfg,
                              const std::optional<LabelMatrix>& init = std::nullopt,
                              const SourceTerms* sources = nullptr, const BatchObserver& observer = {},
                              const L& phi = {}) {
    cfg.validate();
    if (!cfg.parallel) throw std::invalid_argument("solve_parallel: parallel configuration missing");
    const std::size_t n = eff.size();
    NodewiseResult res;
    if (n == 0) {
        res.trace.energies.push_back(0.0);
        res.trace.converged = true;
        return res;
    }
    if (init && init->rows() != n) throw std::invalid_argument("solve_parallel: init has wrong row count");
    Matrix y = init ? init->matrix() : random_init(n, n, cfg.seed).matrix();
    const auto batches = schedule_batches(eff);
    double g = objective_with_sources(eff, y, sources, phi);
    res.trace.energies.push_back(g);
    for (int s = 0; s < cfg.t_con; ++s) {
        res.trace.unconverged_inner +=
            parallel_pass(eff, y, batches, cfg.parallel->workers, cfg, sources, phi, s, observer);
        const double g_new = objective_with_sources(eff, y, sources, phi);
        const double decrease = g - g_new;
        g = g_new;
        res.trace.energies.push_back(g);
        if (decrease <= cfg.sweep_tol * std::max(std::abs(g), 1.0)) {
            res.trace.converged = true;
            break;
        }
    }
    res.y = LabelMatrix::from_matrix(std::move(y));
    return res;
}

/// Node order of a sequential run that mirrors solve_parallel.
inline std::vector<std::size_t> batch_major_order(const std::vector<Batch>& batches) {
    std::vector<std::size_t> order;
    for (const auto& b : batches) order.insert(order.end(), b.begin(), b.end());
    return order;
}

}  // namespace lpmot
