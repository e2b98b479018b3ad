#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpmot/dc_nodewise.hpp"
#include "lpmot/energy.hpp"
#include "lpmot/graphs.hpp"
#include "lpmot/io.hpp"
#include "lpmot/model.hpp"

namespace lpmot {

/// Connection window and heat scale of one cue.
struct CueParams {
    int window = 10;
    double sigma = 20.0;
};

struct ImageBounds {
    double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
};

struct OnlineParams {
    CueParams spatiotemporal{10, 20.0};
    std::vector<CueParams> appearance{{200, 0.05}};  ///< per feature id; the last entry covers higher ids
    double gamma = 3.0;
    double v_max = 10.0;
    int observation_window = 50;        ///< T_o, frames
    std::optional<double> border_sigma;  ///< defaults to the spatio-temporal sigma
    std::optional<ImageBounds> image_bounds;
    std::vector<double> alphas{1.0, 0.5};  ///< alpha_0 for the spatio-temporal graph, then one per cue
    double min_denominator = 1e-6;

    void validate() const {
        auto check = [](const CueParams& c, const char* what) {
            if (c.window < 1) throw std::invalid_argument(std::string("OnlineParams: ") + what + " window must be >= 1");
            if (!(c.sigma > 0.0)) throw std::invalid_argument(std::string("OnlineParams: ") + what + " sigma must be > 0");
        };
        check(spatiotemporal, "spatio-temporal");
        for (const auto& c : appearance) check(c, "appearance");
        if (observation_window < 1) throw std::invalid_argument("OnlineParams: observation window must be >= 1");
        if (!(v_max > 0.0)) throw std::invalid_argument("OnlineParams: v_max must be > 0");
        if (gamma < 0.0) throw std::invalid_argument("OnlineParams: gamma must be >= 0");
        if (border_sigma && !(*border_sigma > 0.0)) throw std::invalid_argument("OnlineParams: border_sigma must be > 0");
        if (alphas.empty()) throw std::invalid_argument("OnlineParams: need at least one alpha");
        for (double a : alphas)
            if (!(a >= 0.0)) throw std::invalid_argument("OnlineParams: alphas must be >= 0");
        if (image_bounds && !(image_bounds->xmax > image_bounds->xmin && image_bounds->ymax > image_bounds->ymin))
            throw std::invalid_argument("OnlineParams: empty image bounds");
    }

    std::size_t cue_count() const noexcept { return alphas.size() - 1; }
    const CueParams& cue(std::size_t id) const { return appearance.at(std::min(id, appearance.size() - 1)); }
    int horizon() const {
        int h = spatiotemporal.window;
        for (std::size_t c = 0; c < cue_count() && !appearance.empty(); ++c) h = std::max(h, cue(c).window);
        return h;
    }
};

/// exp(-d^2 / sigma^2) when |t_i - t_j| <= window, else 0.
inline double heat_weight(double dist, int t_i, int t_j, double sigma, int window) {
    if (!(sigma > 0.0)) throw std::invalid_argument("heat_weight: sigma must be > 0");
    if (std::abs(t_i - t_j) > window) return 0.0;
    return std::exp(-(dist * dist) / (sigma * sigma));
}

inline double heat_weight(std::span<const double> x_i, std::span<const double> x_j, int t_i, int t_j, double sigma,
                          int window) {
    return heat_weight(std::sqrt(squared_distance(x_i, x_j)), t_i, t_j, sigma, window);
}

/// Prior that the detection starts a new identity. Detections in the first
/// processed frame get 1; otherwise the heat weight of the distance from the
/// box (or center) to the nearest image border.
inline double source_weight(const Detection& det, const OnlineParams& params, int first_frame = 0) {
    if (det.frame == first_frame) return 1.0;
    if (!params.image_bounds) return 0.0;
    const auto& b = *params.image_bounds;
    const double hw = det.extent ? det.extent->width / 2 : 0.0;
    const double hh = det.extent ? det.extent->height / 2 : 0.0;
    const double d = std::max(0.0, std::min({det.center.x - hw - b.xmin, b.xmax - det.center.x - hw,
                                             det.center.y - hh - b.ymin, b.ymax - det.center.y - hh}));
    const double s = params.border_sigma.value_or(params.spatiotemporal.sigma);
    return std::exp(-(d * d) / (s * s));
}

struct OnlineState {
    std::vector<Node> nodes;
    SparseGraph spatiotemporal;
    std::vector<SparseGraph> appearance;
    SparseGraph exclusion;
    EffectiveWeights eff;
    Matrix y;                          ///< n x n; column i is the identity seeded at node i
    std::vector<double> source_weights;  ///< normalized w_i^(s)
    std::vector<char> flagged;           ///< normalization denominator was floored
    std::vector<char> frozen;
    int t = -1;
    int first_frame = 0;
    bool started = false;

    std::size_t size() const noexcept { return nodes.size(); }
    /// First node of the mutable window; nodes are appended in frame order
    /// so the window is a suffix.
    std::size_t window_begin() const noexcept {
        return static_cast<std::size_t>(std::find(frozen.begin(), frozen.end(), 0) - frozen.begin());
    }
};

/// Pads Y_prev with k zero columns and appends k uniform rows.
inline Matrix augment_labels(const Matrix& prev, std::size_t k) {
    if (k == 0) return prev;
    const std::size_t n = prev.rows(), m = prev.cols() + k;
    Matrix y(n + k, m);
    for (std::size_t i = 0; i < n; ++i) std::copy(prev.row(i).begin(), prev.row(i).end(), y.row(i).begin());
    for (std::size_t i = n; i < n + k; ++i) std::fill(y.row(i).begin(), y.row(i).end(), 1.0 / static_cast<double>(m));
    return y;
}

inline LabelMatrix augment_labels(const LabelMatrix& prev, std::size_t k) {
    return LabelMatrix::from_matrix(augment_labels(prev.matrix(), k));
}

namespace detail {

inline void update_frozen(OnlineState& s, int observation_window) {
    s.frozen.resize(s.nodes.size(), 0);
    for (std::size_t i = 0; i < s.nodes.size(); ++i)
        if (s.nodes[i].last_frame() < s.t - observation_window) s.frozen[i] = 1;
}

inline void add_effective(EffectiveWeights& eff, std::size_t i, std::size_t j, double v) {
    if (v == 0.0) return;
    eff.w_eff.add(i, j, v);
    eff.w_eff_sym.add(i, j, v);
    eff.w_eff_sym.add(j, i, v);
}

}  // namespace detail

/// Appends the detections of the next frame as nodes and connects them to
/// the existing graph. Labels are not touched.
inline void increment_graphs(OnlineState& s, const std::vector<Detection>& dets, const OnlineParams& params) {
    params.validate();
    if (!s.started && dets.empty()) {
        ++s.t;
        return;
    }
    int frame = s.started ? s.t + 1 : dets.front().frame;
    if (!dets.empty()) {
        for (const auto& d : dets)
            if (d.frame != dets.front().frame) throw std::invalid_argument("increment_graphs: mixed frames in one step");
        if (s.started && dets.front().frame <= s.t)
            throw std::invalid_argument("increment_graphs: frame " + std::to_string(dets.front().frame) +
                                        " does not follow frame " + std::to_string(s.t));
        frame = dets.front().frame;
    }
    if (!s.started) {
        s.started = true;
        s.first_frame = frame;
        s.appearance.assign(params.cue_count(), SparseGraph{});
    }
    if (s.appearance.size() != params.cue_count())
        throw std::invalid_argument("increment_graphs: cue count differs from the state");
    s.t = frame;

    const std::size_t n0 = s.nodes.size();
    const std::size_t n = n0 + dets.size();
    for (std::size_t k = 0; k < dets.size(); ++k) s.nodes.emplace_back(n0 + k, dets[k]);
    s.spatiotemporal.resize(n);
    for (auto& g : s.appearance) g.resize(n);
    s.exclusion.resize(n);
    s.eff.w_eff.resize(n);
    s.eff.w_eff_sym.resize(n);
    s.source_weights.resize(n, 0.0);
    s.flagged.resize(n, 0);

    // Existing nodes that can still connect to the new frame.
    const int horizon = params.horizon();
    std::size_t lo = n0;
    while (lo > 0 && s.nodes[lo - 1].last_frame() >= frame - horizon) --lo;

    for (std::size_t i = n0; i < n; ++i) {
        const Node& a = s.nodes[i];
        const std::vector<double> xa{params.gamma * a.time(), a.center().x, a.center().y};

        std::vector<Entry> st;
        double total = 0.0;
        for (std::size_t j = lo; j < n0; ++j) {
            const Node& b = s.nodes[j];
            const int dt = a.first_frame() - b.last_frame();
            if (dt < 1 || dt > params.spatiotemporal.window) continue;
            if (distance(a.first_center(), b.last_center()) > params.v_max * dt) continue;
            const std::vector<double> xb{params.gamma * b.time(), b.center().x, b.center().y};
            const double w = heat_weight(xa, xb, frame, b.last_frame(), params.spatiotemporal.sigma,
                                         params.spatiotemporal.window);
            if (w > 0.0) {
                st.push_back({j, w});
                total += w;
            }
        }
        double ws = source_weight(*a.detections().front(), params, s.first_frame);
        total += ws;
        if (total < params.min_denominator) {
            s.flagged[i] = 1;
            total = params.min_denominator;
        }
        for (auto& e : st) e.value /= total;
        s.source_weights[i] = ws / total;
        s.spatiotemporal.set_out_edges(i, st);
        for (const auto& e : st) detail::add_effective(s.eff, i, e.col, params.alphas[0] * e.value);

        for (std::size_t c = 0; c < s.appearance.size(); ++c) {
            const FeatureVector* fa = a.feature(c);
            if (!fa) continue;
            const CueParams& cue = params.cue(c);
            std::vector<Entry> app;
            double sum = 0.0;
            for (std::size_t j = lo; j < n0; ++j) {
                const FeatureVector* fb = s.nodes[j].feature(c);
                if (!fb) continue;
                if (fb->size() != fa->size()) throw DimensionError("feature " + std::to_string(c) + " changes dimension");
                const double w = heat_weight(*fa, *fb, frame, s.nodes[j].last_frame(), cue.sigma, cue.window);
                if (w > 0.0) {
                    app.push_back({j, w});
                    sum += w;
                }
            }
            sum = std::max(sum, params.min_denominator);
            for (auto& e : app) e.value /= sum;
            s.appearance[c].set_out_edges(i, app);
            for (const auto& e : app) detail::add_effective(s.eff, i, e.col, params.alphas[c + 1] * e.value);
        }

        // Co-frame nodes and gating violators, symmetric unit edges.
        std::vector<std::size_t> excl;
        for (std::size_t j = n0; j < i; ++j) excl.push_back(j);
        for (std::size_t j = lo; j < n0; ++j) {
            const Node& b = s.nodes[j];
            const int dt = a.first_frame() - b.last_frame();
            if (dt < 1 || distance(a.first_center(), b.last_center()) > params.v_max * dt) excl.push_back(j);
        }
        for (std::size_t j : excl) {
            s.exclusion.add_edge(i, j, 1.0);
            s.exclusion.add_edge(j, i, 1.0);
            detail::add_effective(s.eff, i, j, -1.0);
            detail::add_effective(s.eff, j, i, -1.0);
        }
    }
    detail::update_frozen(s, params.observation_window);
}

inline SourceTerms window_sources(const OnlineState& s) {
    SourceTerms src(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s.source_weights[i] > 0.0) src[i] = SourceTerm{s.source_weights[i], i};
    return src;
}

/// Objective restricted to terms touching non-frozen nodes, source terms
/// included.
template <LossFunction L = SquaredL2Loss>
double windowed_objective(const OnlineState& s, const Matrix& y, const L& phi = {}) {
    const std::size_t w0 = s.window_begin();
    double total = 0.0;
    std::vector<double> anchor(y.cols(), 0.0);
    for (std::size_t i = w0; i < s.size(); ++i) {
        for (const auto& e : s.eff.w_eff_sym.row(i)) {
            // Pairs inside the window appear in both rows.
            const double share = e.col >= w0 ? 0.5 : 1.0;
            total += share * e.value * phi.value(y.row(i), y.row(e.col));
        }
        if (s.source_weights[i] > 0.0) {
            anchor[i] = 1.0;
            total += s.source_weights[i] * phi.value(y.row(i), anchor);
            anchor[i] = 0.0;
        }
    }
    return total;
}

/// Node-wise sweeps over the window nodes with their source terms; frozen
/// rows are read but never written.
template <LossFunction L = SquaredL2Loss>
SolveTrace propagate_window(OnlineState& s, const NodewiseConfig& cfg, const L& phi = {}) {
    cfg.validate();
    SolveTrace trace;
    const std::size_t w0 = s.window_begin();
    const auto sources = window_sources(s);
    std::vector<std::size_t> order(s.size() - w0);
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = w0 + k;
    double g = windowed_objective(s, s.y, phi);
    trace.energies.push_back(g);
    if (order.empty()) {
        trace.converged = true;
        return trace;
    }
    for (int sw = 0; sw < cfg.t_con; ++sw) {
        if (cfg.order == SweepOrder::seeded_random) {
            std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(s.t) * 1000003u + static_cast<std::uint64_t>(sw));
            std::shuffle(order.begin(), order.end(), rng);
        }
        trace.unconverged_inner += sweep_in_order(s.eff, s.y, order, cfg, &sources, phi);
        const double g_new = windowed_objective(s, s.y, phi);
        const double decrease = g - g_new;
        g = g_new;
        trace.energies.push_back(g);
        if (decrease <= cfg.sweep_tol * std::max(std::abs(g), 1.0)) {
            trace.converged = true;
            break;
        }
    }
    return trace;
}

/// Grows the graph with one frame of detections, augments the labels and
/// re-optimizes the window. An empty frame only advances time.
template <LossFunction L = SquaredL2Loss>
SolveTrace online_step(OnlineState& s, const std::vector<Detection>& dets, const OnlineParams& params,
                       const NodewiseConfig& cfg, const L& phi = {}) {
    const std::size_t n0 = s.size();
    increment_graphs(s, dets, params);
    if (dets.empty()) return SolveTrace{{}, true, 0};
    s.y = augment_labels(s.y, s.size() - n0);
    return propagate_window(s, cfg, phi);
}

// Checkpoints are JSON; doubles are written in shortest round-trip form.

namespace detail {

inline nlohmann::json detection_to_json(const Detection& d) {
    nlohmann::json j;
    j["frame"] = d.frame;
    j["center"] = {d.center.x, d.center.y};
    if (d.extent) j["extent"] = {d.extent->width, d.extent->height};
    j["confidence"] = d.confidence;
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : d.features) feats.push_back(f ? nlohmann::json(*f) : nlohmann::json());
    j["features"] = feats;
    return j;
}

inline Detection detection_from_json(const nlohmann::json& j) {
    Detection d;
    d.frame = j.at("frame").get<int>();
    d.center = {j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()};
    if (j.contains("extent")) d.extent = Extent{j["extent"].at(0).get<double>(), j["extent"].at(1).get<double>()};
    d.confidence = j.at("confidence").get<double>();
    for (const auto& f : j.at("features")) {
        if (f.is_null()) d.features.emplace_back();
        else d.features.emplace_back(f.get<FeatureVector>());
    }
    return d;
}

inline nlohmann::json sparse_to_json(const SparseMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.size(); ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& e : m.row(i)) r.push_back({e.col, e.value});
        rows.push_back(std::move(r));
    }
    return rows;
}

inline SparseMatrix sparse_from_json(const nlohmann::json& j) {
    SparseMatrix m(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        std::vector<Entry> row;
        for (const auto& e : j[i]) row.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
        m.set_row(i, std::move(row));
    }
    return m;
}

inline SparseGraph graph_from_json(const nlohmann::json& j) {
    SparseGraph g(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        std::vector<Entry> row;
        for (const auto& e : j[i]) row.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
        g.set_out_edges(i, std::move(row));
    }
    return g;
}

}  // namespace detail

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const OnlineState& s) {
    using nlohmann::json;
    json j;
    j["version"] = kCheckpointVersion;
    j["t"] = s.t;
    j["first_frame"] = s.first_frame;
    j["started"] = s.started;
    json nodes = json::array();
    for (const auto& nd : s.nodes) nodes.push_back(detail::detection_to_json(*nd.detections().front()));
    j["nodes"] = nodes;
    j["spatiotemporal"] = detail::sparse_to_json(s.spatiotemporal.matrix());
    json app = json::array();
    for (const auto& g : s.appearance) app.push_back(detail::sparse_to_json(g.matrix()));
    j["appearance"] = app;
    j["exclusion"] = detail::sparse_to_json(s.exclusion.matrix());
    j["w_eff"] = detail::sparse_to_json(s.eff.w_eff);
    j["w_eff_sym"] = detail::sparse_to_json(s.eff.w_eff_sym);
    j["labels"] = {{"rows", s.y.rows()}, {"cols", s.y.cols()},
                   {"values", std::vector<double>(s.y.values().begin(), s.y.values().end())}};
    j["source_weights"] = s.source_weights;
    j["flagged"] = std::vector<int>(s.flagged.begin(), s.flagged.end());
    j["frozen"] = std::vector<int>(s.frozen.begin(), s.frozen.end());
    return j;
}

inline OnlineState checkpoint_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + j.at("version").dump());
    OnlineState s;
    s.t = j.at("t").get<int>();
    s.first_frame = j.at("first_frame").get<int>();
    s.started = j.at("started").get<bool>();
    std::size_t id = 0;
    for (const auto& d : j.at("nodes")) s.nodes.emplace_back(id++, detail::detection_from_json(d));
    s.spatiotemporal = detail::graph_from_json(j.at("spatiotemporal"));
    for (const auto& g : j.at("appearance")) s.appearance.push_back(detail::graph_from_json(g));
    s.exclusion = detail::graph_from_json(j.at("exclusion"));
    s.eff.w_eff = detail::sparse_from_json(j.at("w_eff"));
    s.eff.w_eff_sym = detail::sparse_from_json(j.at("w_eff_sym"));
    const auto& lab = j.at("labels");
    s.y = Matrix(lab.at("rows").get<std::size_t>(), lab.at("cols").get<std::size_t>());
    const auto vals = lab.at("values").get<std::vector<double>>();
    if (vals.size() != s.y.values().size()) throw std::runtime_error("checkpoint: label matrix size mismatch");
    std::copy(vals.begin(), vals.end(), s.y.values().begin());
    s.source_weights = j.at("source_weights").get<std::vector<double>>();
    for (int f : j.at("flagged").get<std::vector<int>>()) s.flagged.push_back(static_cast<char>(f));
    for (int f : j.at("frozen").get<std::vector<int>>()) s.frozen.push_back(static_cast<char>(f));
    const std::size_t n = s.nodes.size();
    if (s.spatiotemporal.size() != n || s.exclusion.size() != n || s.eff.size() != n || s.y.rows() != n ||
        s.source_weights.size() != n || s.flagged.size() != n || s.frozen.size() != n)
        throw std::runtime_error("checkpoint: inconsistent node counts");
    return s;
}

inline void save_checkpoint(const OnlineState& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << checkpoint_to_json(s).dump() << '\n';
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline OnlineState load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace lpmot
