#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpmot/io.hpp"
#include "lpmot/model.hpp"
#include "lpmot/simplex.hpp"

namespace lpmot {

struct Entry {
    std::size_t col;
    double value;
    friend bool operator==(const Entry&, const Entry&) = default;
};

/// Square sparse matrix stored as sorted rows without explicit zeros.
class SparseMatrix {
public:
    SparseMatrix() = default;
    explicit SparseMatrix(std::size_t n) : rows_(n) {}

    std::size_t size() const noexcept { return rows_.size(); }
    std::span<const Entry> row(std::size_t i) const { return rows_.at(i); }

    /// Replaces row i; duplicate columns are summed and zeros dropped.
    void set_row(std::size_t i, std::vector<Entry> entries) {
        check(i);
        for (const auto& e : entries) check(e.col);
        normalize(entries);
        rows_[i] = std::move(entries);
    }

    /// Adds v to entry (i, j).
    void add(std::size_t i, std::size_t j, double v) {
        check(i);
        check(j);
        auto& r = rows_[i];
        auto it = std::lower_bound(r.begin(), r.end(), j, [](const Entry& e, std::size_t c) { return e.col < c; });
        if (it != r.end() && it->col == j) {
            it->value += v;
            if (it->value == 0.0) r.erase(it);
        } else if (v != 0.0) {
            r.insert(it, Entry{j, v});
        }
    }

    double at(std::size_t i, std::size_t j) const {
        const auto& r = rows_.at(i);
        auto it = std::lower_bound(r.begin(), r.end(), j, [](const Entry& e, std::size_t c) { return e.col < c; });
        return it != r.end() && it->col == j ? it->value : 0.0;
    }

    std::size_t nonzeros() const noexcept {
        std::size_t n = 0;
        for (const auto& r : rows_) n += r.size();
        return n;
    }

    void resize(std::size_t n) {
        if (n < rows_.size()) throw std::invalid_argument("SparseMatrix: cannot shrink");
        rows_.resize(n);
    }

    SparseMatrix transposed() const {
        SparseMatrix t(size());
        for (std::size_t i = 0; i < size(); ++i)
            for (const auto& e : rows_[i]) t.rows_[e.col].push_back({i, e.value});
        return t;  // rows come out sorted because i increases
    }

    friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

    static void normalize(std::vector<Entry>& entries) {
        std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.col < b.col; });
        std::size_t out = 0;
        for (std::size_t k = 0; k < entries.size();) {
            Entry e = entries[k++];
            while (k < entries.size() && entries[k].col == e.col) e.value += entries[k++].value;
            if (e.value != 0.0) entries[out++] = e;
        }
        entries.resize(out);
    }

private:
    void check(std::size_t i) const {
        if (i >= rows_.size()) throw std::out_of_range("SparseMatrix: index out of range");
    }

    std::vector<std::vector<Entry>> rows_;
};

/// Directed graph with nonnegative finite edge weights.
class SparseGraph {
public:
    SparseGraph() = default;
    explicit SparseGraph(std::size_t n) : w_(n) {}

    std::size_t size() const noexcept { return w_.size(); }
    std::span<const Entry> out_edges(std::size_t i) const { return w_.row(i); }
    double weight(std::size_t i, std::size_t j) const { return w_.at(i, j); }
    std::size_t edge_count() const noexcept { return w_.nonzeros(); }
    const SparseMatrix& matrix() const noexcept { return w_; }

    void set_out_edges(std::size_t i, std::vector<Entry> edges) {
        for (const auto& e : edges) validate(e.value);
        w_.set_row(i, std::move(edges));
    }
    void add_edge(std::size_t i, std::size_t j, double w) {
        validate(w);
        w_.add(i, j, w);
    }
    void resize(std::size_t n) { w_.resize(n); }

    friend bool operator==(const SparseGraph&, const SparseGraph&) = default;

private:
    static void validate(double w) {
        if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("SparseGraph: weight must be finite and >= 0");
    }

    SparseMatrix w_;
};

struct GraphParams {
    int window = 10;         ///< spatio-temporal window T, frames
    double gamma = 3.0;      ///< time scaling, units per frame
    double v_max = 10.0;     ///< gating speed, units per frame
    double delta = 1e-2;     ///< ridge on reconstruction weights
    std::size_t appearance_neighbors = 30;  ///< nearest featured nodes kept; 0 keeps all
    double drop_below = 1e-9;               ///< reconstruction weights below this are not edges
    std::vector<double> alphas{1.0, 0.5};

    void validate() const {
        if (window < 1) throw std::invalid_argument("GraphParams: window must be >= 1");
        if (gamma < 0.0) throw std::invalid_argument("GraphParams: gamma must be >= 0");
        if (!(v_max > 0.0)) throw std::invalid_argument("GraphParams: v_max must be > 0");
        if (delta < 0.0) throw std::invalid_argument("GraphParams: delta must be >= 0");
        if (alphas.empty()) throw std::invalid_argument("GraphParams: need at least one alpha");
        for (double a : alphas)
            if (!(a >= 0.0)) throw std::invalid_argument("GraphParams: alphas must be >= 0");
    }
};

struct EffectiveWeights {
    SparseMatrix w_eff;      ///< sum_l alpha_l W^(l) - W^(-)
    SparseMatrix w_eff_sym;  ///< w_eff + w_eff^T

    std::size_t size() const noexcept { return w_eff.size(); }
};

/// How two nodes relate in time and under the speed gate.
struct PairRelation {
    bool cooccur = false;  ///< time spans overlap
    int gap = 0;           ///< frames between the spans (0 when they overlap)
    bool gated = false;    ///< displacement exceeds v_max * gap
};

inline PairRelation relate(const Node& a, const Node& b, double v_max) {
    PairRelation r;
    const Node* early = &a;
    const Node* late = &b;
    if (b.first_frame() < a.first_frame()) std::swap(early, late);
    if (late->first_frame() <= early->last_frame()) {
        r.cooccur = true;
        return r;
    }
    r.gap = late->first_frame() - early->last_frame();
    r.gated = distance(early->last_center(), late->first_center()) > v_max * r.gap;
    return r;
}

/// Reconstruction weights of `target` from `neighbors` on the simplex,
/// with ridge delta. Returns nullopt for an empty neighborhood.
inline std::optional<SimplexVector> lle_weights(std::span<const double> target,
                                                const std::vector<std::span<const double>>& neighbors,
                                                double delta, const PgdConfig& cfg) {
    const std::size_t k = neighbors.size();
    if (k == 0) return std::nullopt;
    for (const auto& nb : neighbors)
        if (nb.size() != target.size()) throw std::invalid_argument("lle_weights: dimension mismatch");
    if (k == 1) return SimplexVector::vertex(1, 0);
    // On the simplex ||x - X w||^2 = w^T G w with G the Gram matrix of the
    // offsets x_j - x, which keeps the problem well scaled.
    std::vector<std::vector<double>> offsets(k, std::vector<double>(target.size()));
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < target.size(); ++c) offsets[j][c] = neighbors[j][c] - target[c];
    SimplexQp qp;
    qp.P = Matrix(k, k);
    qp.q.assign(k, 0.0);
    qp.delta = delta;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a; b < k; ++b) {
            const double g = 2.0 * dot(offsets[a], offsets[b]);
            qp.P(a, b) = g;
            qp.P(b, a) = g;
        }
    return solve_simplex_qp(qp, cfg).w;
}

namespace detail {

/// Keeps weights above the threshold and rescales them to sum to one.
inline std::vector<Entry> simplex_row(const std::vector<std::size_t>& ids, const SimplexVector& w, double drop) {
    std::vector<Entry> row;
    double sum = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k)
        if (w[k] > drop) {
            row.push_back({ids[k], w[k]});
            sum += w[k];
        }
    for (auto& e : row) e.value /= sum;
    return row;
}

inline std::vector<std::size_t> by_first_frame(const std::vector<Node>& nodes) {
    std::vector<std::size_t> order(nodes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return nodes[a].first_frame() < nodes[b].first_frame(); });
    return order;
}

inline void check_ids(const std::vector<Node>& nodes) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id() != i) throw std::invalid_argument("graph builders need node ids 0..n-1 in order");
}

}  // namespace detail

/// Spatio-temporal graph: each node is reconstructed from the (gamma t, c)
/// features of the nodes within `window` frames that pass the speed gate.
inline SparseGraph build_spatiotemporal_graph(const std::vector<Node>& nodes, const GraphParams& params,
                                              const PgdConfig& cfg = {}) {
    params.validate();
    detail::check_ids(nodes);
    const std::size_t n = nodes.size();
    SparseGraph g(n);
    const auto order = detail::by_first_frame(nodes);
    std::vector<std::size_t> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
    int max_span = 0;
    for (const auto& nd : nodes) max_span = std::max(max_span, nd.last_frame() - nd.first_frame());

    std::vector<std::vector<Entry>> rows(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        const Node& a = nodes[i];
        const int lo = a.first_frame() - params.window - max_span;
        const int hi = a.last_frame() + params.window;
        std::vector<std::size_t> ids;
        // Walk outward in first-frame order from i.
        for (std::size_t r = rank[i]; r-- > 0;) {
            const Node& b = nodes[order[r]];
            if (b.first_frame() < lo) break;
            const auto rel = relate(a, b, params.v_max);
            if (!rel.cooccur && !rel.gated && rel.gap <= params.window) ids.push_back(order[r]);
        }
        for (std::size_t r = rank[i] + 1; r < n; ++r) {
            const Node& b = nodes[order[r]];
            if (b.first_frame() > hi) break;
            const auto rel = relate(a, b, params.v_max);
            if (!rel.cooccur && !rel.gated && rel.gap <= params.window) ids.push_back(order[r]);
        }
        if (ids.empty()) continue;
        std::sort(ids.begin(), ids.end());
        auto feature = [&](const Node& nd) {
            return std::vector<double>{params.gamma * nd.time(), nd.center().x, nd.center().y};
        };
        const auto target = feature(a);
        std::vector<std::vector<double>> feats;
        feats.reserve(ids.size());
        for (std::size_t j : ids) feats.push_back(feature(nodes[j]));
        std::vector<std::span<const double>> views(feats.begin(), feats.end());
        const auto w = lle_weights(target, views, params.delta, cfg);
        rows[i] = detail::simplex_row(ids, *w, params.drop_below);
    }
    for (std::size_t i = 0; i < n; ++i) g.set_out_edges(i, std::move(rows[i]));
    return g;
}

/// Appearance graph for one feature id: every featured node is reconstructed
/// from the other featured nodes it does not co-occur with, however far
/// apart in time (capped to the nearest `appearance_neighbors`).
inline SparseGraph build_appearance_graph(const std::vector<Node>& nodes, std::size_t feature_id,
                                          const GraphParams& params, const PgdConfig& cfg = {}) {
    params.validate();
    detail::check_ids(nodes);
    const std::size_t n = nodes.size();
    SparseGraph g(n);
    std::vector<std::size_t> featured;
    for (std::size_t i = 0; i < n; ++i)
        if (nodes[i].feature(feature_id)) featured.push_back(i);

    std::vector<std::vector<Entry>> rows(n);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(featured.size()); ++ii) {
        const std::size_t i = featured[static_cast<std::size_t>(ii)];
        const FeatureVector& x = *nodes[i].feature(feature_id);
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j : featured) {
            if (j == i || relate(nodes[i], nodes[j], params.v_max).cooccur) continue;
            cand.emplace_back(squared_distance(x, *nodes[j].feature(feature_id)), j);
        }
        if (cand.empty()) continue;
        if (params.appearance_neighbors > 0 && cand.size() > params.appearance_neighbors) {
            std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(params.appearance_neighbors),
                             cand.end());
            cand.resize(params.appearance_neighbors);
        }
        std::vector<std::size_t> ids;
        for (const auto& c : cand) ids.push_back(c.second);
        std::sort(ids.begin(), ids.end());
        std::vector<std::span<const double>> views;
        for (std::size_t j : ids) views.emplace_back(*nodes[j].feature(feature_id));
        const auto w = lle_weights(x, views, params.delta, cfg);
        rows[i] = detail::simplex_row(ids, *w, params.drop_below);
    }
    for (std::size_t i = 0; i < n; ++i) g.set_out_edges(i, std::move(rows[i]));
    return g;
}

/// Exclusion graph: unit symmetric edges between co-occurring nodes and
/// between nodes that violate the speed gate.
inline SparseGraph build_exclusion_graph(const std::vector<Node>& nodes, const GraphParams& params) {
    params.validate();
    detail::check_ids(nodes);
    const std::size_t n = nodes.size();
    SparseGraph g(n);
    if (n < 2) return g;
    double minx = nodes[0].first_center().x, maxx = minx, miny = nodes[0].first_center().y, maxy = miny;
    for (const auto& nd : nodes)
        for (const Point2& p : {nd.first_center(), nd.last_center()}) {
            minx = std::min(minx, p.x);
            maxx = std::max(maxx, p.x);
            miny = std::min(miny, p.y);
            maxy = std::max(maxy, p.y);
        }
    // Beyond this gap no pair can violate the gate.
    const double horizon = std::hypot(maxx - minx, maxy - miny) / params.v_max + 1.0;
    const auto order = detail::by_first_frame(nodes);
    std::vector<std::vector<Entry>> rows(n);
    for (std::size_t r = 0; r < n; ++r) {
        const Node& a = nodes[order[r]];
        for (std::size_t s = r + 1; s < n; ++s) {
            const Node& b = nodes[order[s]];
            if (b.first_frame() > a.last_frame() + horizon) break;
            const auto rel = relate(a, b, params.v_max);
            if (rel.cooccur || rel.gated) {
                rows[order[r]].push_back({order[s], 1.0});
                rows[order[s]].push_back({order[r], 1.0});
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) g.set_out_edges(i, std::move(rows[i]));
    return g;
}

/// Effective signed weights sum_l alpha_l W^(l) - W^(-) and their symmetrization.
inline EffectiveWeights combine(const std::vector<SparseGraph>& positive, const SparseGraph& negative,
                                std::span<const double> alphas) {
    if (positive.size() != alphas.size()) throw std::invalid_argument("combine: one alpha per positive graph");
    const std::size_t n = negative.size();
    for (const auto& g : positive)
        if (g.size() != n) throw std::invalid_argument("combine: graphs differ in node count");
    EffectiveWeights eff{SparseMatrix(n), SparseMatrix(n)};
    std::vector<std::vector<Entry>> sym(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Entry> row;
        for (std::size_t l = 0; l < positive.size(); ++l) {
            if (alphas[l] == 0.0) continue;
            for (const auto& e : positive[l].out_edges(i)) row.push_back({e.col, alphas[l] * e.value});
        }
        for (const auto& e : negative.out_edges(i)) row.push_back({e.col, -e.value});
        eff.w_eff.set_row(i, std::move(row));
        for (const auto& e : eff.w_eff.row(i)) {
            sym[i].push_back(e);
            sym[e.col].push_back({i, e.value});
        }
    }
    for (std::size_t i = 0; i < n; ++i) eff.w_eff_sym.set_row(i, std::move(sym[i]));
    return eff;
}

inline EffectiveWeights combine(const std::vector<SparseGraph>& positive, const SparseGraph& negative,
                                const std::vector<double>& alphas) {
    return combine(positive, negative, std::span<const double>(alphas));
}

struct NamedGraph {
    std::string id;
    const SparseGraph* graph;
};

/// Debug dump `graph_id,i,j,weight`, rows in (i, j) order per graph.
inline void write_graph_csv(std::ostream& out, std::span<const NamedGraph> graphs) {
    out << "graph_id,i,j,weight\n";
    for (const auto& ng : graphs)
        for (std::size_t i = 0; i < ng.graph->size(); ++i)
            for (const auto& e : ng.graph->out_edges(i))
                out << ng.id << ',' << i << ',' << e.col << ',' << detail::format_double(e.value) << '\n';
}

}  // namespace lpmot
