#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpmot/clear_mot.hpp"
#include "lpmot/dc_joint.hpp"
#include "lpmot/dc_nodewise.hpp"
#include "lpmot/energy.hpp"
#include "lpmot/graphs.hpp"
#include "lpmot/incremental.hpp"
#include "lpmot/io.hpp"
#include "lpmot/model.hpp"

namespace lpmot {

/// Failure in one pipeline stage; the message names the stage.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

enum class SolverKind { joint, nodewise };

inline SolverKind parse_solver_kind(std::string_view s) {
    if (s == "joint") return SolverKind::joint;
    if (s == "nodewise") return SolverKind::nodewise;
    throw std::invalid_argument("unknown solver '" + std::string(s) + "'");
}

struct PostfilterParams {
    bool enabled = true;
    std::size_t min_length = 10;  ///< minimum number of boxes
    double min_confidence = 0.8;
};

struct PipelineConfig {
    DetectionFormat format = DetectionFormat::mot_csv;
    GraphParams graph{};
    bool use_tracklets = false;
    double tracklet_max_dist = 15.0;
    int tracklet_window = 100;               ///< spatio-temporal window for tracklet nodes
    std::optional<double> strip_overlap;     ///< drop features of boxes overlapping above this IoU
    OnlineParams online{};
    SolverKind solver = SolverKind::nodewise;
    JointConfig joint{};
    NodewiseConfig nodewise{};
    PostfilterParams postfilter{};
    MatchRule match = MatchRule::dist(30.0);
    std::size_t max_unconverged = 1000;  ///< above this many unconverged inner solves the CLI exits with 3

    void validate() const {
        graph.validate();
        online.validate();
        joint.validate();
        nodewise.validate();
        if (!(tracklet_max_dist > 0.0)) throw std::invalid_argument("tracklet_max_dist must be > 0");
        if (tracklet_window < 1) throw std::invalid_argument("tracklet_window must be >= 1");
        if (strip_overlap && !(*strip_overlap > 0.0)) throw std::invalid_argument("strip_overlap must be > 0");
        if (!(postfilter.min_confidence >= 0.0)) throw std::invalid_argument("min_confidence must be >= 0");
        if (!(match.threshold > 0.0)) throw std::invalid_argument("match threshold must be > 0");
    }
};

/// Chains detections of successive frames that lie closer than max_dist
/// when no other detection of either frame lies closer than max_dist to
/// either of them. Every detection ends up in exactly one tracklet.
inline std::vector<Tracklet> build_tracklets(const std::vector<Detection>& dets, double max_dist) {
    for (std::size_t k = 1; k < dets.size(); ++k)
        if (dets[k].frame < dets[k - 1].frame) throw std::invalid_argument("build_tracklets: detections not frame-sorted");
    std::map<int, std::vector<std::size_t>> by_frame;
    for (std::size_t k = 0; k < dets.size(); ++k) by_frame[dets[k].frame].push_back(k);

    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> next(dets.size(), none), prev(dets.size(), none);
    auto close = [&](std::size_t a, std::size_t b) { return distance(dets[a].center, dets[b].center) < max_dist; };
    for (const auto& [f, cur] : by_frame) {
        const auto it = by_frame.find(f + 1);
        if (it == by_frame.end()) continue;
        const auto& nxt = it->second;
        std::vector<std::size_t> pool(cur);
        pool.insert(pool.end(), nxt.begin(), nxt.end());
        for (std::size_t a : cur)
            for (std::size_t b : nxt) {
                if (!close(a, b)) continue;
                bool ambiguous = false;
                for (std::size_t o : pool)
                    if (o != a && o != b && (close(o, a) || close(o, b))) {
                        ambiguous = true;
                        break;
                    }
                if (!ambiguous) {
                    next[a] = b;
                    prev[b] = a;
                }
            }
    }
    std::vector<Tracklet> out;
    for (std::size_t k = 0; k < dets.size(); ++k) {
        if (prev[k] != none) continue;
        std::vector<Detection> chain;
        for (std::size_t c = k; c != none; c = next[c]) chain.push_back(dets[c]);
        out.emplace_back(std::move(chain));
    }
    return out;
}

/// Node i joins the track named by the largest entry of row i (lowest
/// column on ties). When two nodes of one track share a frame, the more
/// confident box is kept.
inline TrackSet extract_tracks(const Matrix& y, const std::vector<Node>& nodes) {
    if (y.rows() != nodes.size()) throw std::invalid_argument("extract_tracks: label rows differ from node count");
    TrackSet ts;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const int label = static_cast<int>(argmax(y.row(i)));
        ts.provenance[nodes[i].id()] = label;
        TrackRecord& tr = ts.track(label);
        for (const Detection* d : nodes[i].detections()) {
            const TrackBox box{d->center, d->extent, d->confidence};
            auto [it, inserted] = tr.boxes.emplace(d->frame, box);
            if (!inserted && box.confidence > it->second.confidence) it->second = box;
        }
    }
    return ts;
}

inline TrackSet extract_tracks(const LabelMatrix& y, const std::vector<Node>& nodes) {
    return extract_tracks(y.matrix(), nodes);
}

/// Removes tracks with fewer than min_length boxes or whose most confident
/// box is below min_confidence.
inline TrackSet postfilter(const TrackSet& tracks, const PostfilterParams& params) {
    if (!params.enabled) return tracks;
    TrackSet out;
    for (const auto& t : tracks.tracks)
        if (t.boxes.size() >= params.min_length && t.max_confidence() >= params.min_confidence) out.tracks.push_back(t);
    for (const auto& [node, id] : tracks.provenance)
        if (out.find(id)) out.provenance[node] = id;
    return out;
}

struct RunResult {
    TrackSet tracks;
    std::optional<EvalReport> report;
    SolveTrace trace;
    std::vector<Node> nodes;
    std::vector<SparseGraph> positive_graphs;  ///< spatio-temporal first, then one per cue
    SparseGraph exclusion;
    EffectiveWeights eff;
    double seconds = 0.0;  ///< wall time excluding file input
};

namespace detail {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

inline std::size_t feature_count(const std::vector<Detection>& dets) {
    std::size_t k = 0;
    for (const auto& d : dets) k = std::max(k, d.features.size());
    return k;
}

}  // namespace detail

/// Offline tracking of an in-memory detection list.
inline RunResult track_offline(std::vector<Detection> dets, const PipelineConfig& cfg,
                               const std::optional<TrackSet>& gt = std::nullopt) {
    detail::stage("config", [&] { cfg.validate(); return 0; });
    const auto start = std::chrono::steady_clock::now();
    RunResult res;
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.frame < b.frame; });
    if (cfg.strip_overlap) dets = strip_overlapping_features(std::move(dets), *cfg.strip_overlap);

    GraphParams gp = cfg.graph;
    res.nodes = detail::stage("tracklets", [&] {
        if (!cfg.use_tracklets) return make_nodes(dets);
        gp.window = cfg.tracklet_window;
        return make_nodes(build_tracklets(dets, cfg.tracklet_max_dist));
    });

    detail::stage("graphs", [&] {
        res.positive_graphs.push_back(build_spatiotemporal_graph(res.nodes, gp, cfg.joint.inner));
        for (std::size_t c = 0; c + 1 < gp.alphas.size(); ++c) {
            if (gp.alphas[c + 1] == 0.0) res.positive_graphs.emplace_back(res.nodes.size());
            else res.positive_graphs.push_back(build_appearance_graph(res.nodes, c, gp, cfg.joint.inner));
        }
        res.exclusion = build_exclusion_graph(res.nodes, gp);
        res.eff = combine(res.positive_graphs, res.exclusion, gp.alphas);
        return 0;
    });

    Matrix y = detail::stage("solver", [&] {
        if (res.nodes.empty()) return Matrix();
        if (cfg.solver == SolverKind::joint) {
            auto r = solve_joint(res.eff, cfg.joint);
            res.trace = std::move(r.trace);
            return r.y.matrix();
        }
        auto r = cfg.nodewise.parallel ? solve_parallel(res.eff, cfg.nodewise) : solve_nodewise(res.eff, cfg.nodewise);
        res.trace = std::move(r.trace);
        return r.y.matrix();
    });

    res.tracks = detail::stage("extract", [&] { return postfilter(extract_tracks(y, res.nodes), cfg.postfilter); });
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (gt) res.report = detail::stage("evaluate", [&] { return evaluate_clear_mot(res.tracks, *gt, cfg.match); });
    return res;
}

/// Called once per processed frame with the current state.
using FrameObserver = std::function<void(int frame, const OnlineState&)>;

/// Frame-by-frame incremental tracking of an in-memory detection list.
inline RunResult track_online(std::vector<Detection> dets, const PipelineConfig& cfg,
                              const std::optional<TrackSet>& gt = std::nullopt, const FrameObserver& observer = {},
                              OnlineState* final_state = nullptr) {
    detail::stage("config", [&] { cfg.validate(); return 0; });
    const auto start = std::chrono::steady_clock::now();
    RunResult res;
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.frame < b.frame; });
    if (cfg.strip_overlap) dets = strip_overlapping_features(std::move(dets), *cfg.strip_overlap);

    OnlineParams params = cfg.online;
    params.alphas = cfg.graph.alphas;
    OnlineState state;
    detail::stage("online", [&] {
        std::size_t k = 0;
        double last = 0.0;
        while (k < dets.size()) {
            const int frame = state.started ? state.t + 1 : dets[k].frame;
            std::vector<Detection> batch;
            while (k < dets.size() && dets[k].frame == frame) batch.push_back(dets[k++]);
            auto tr = online_step(state, batch, params, cfg.nodewise);
            res.trace.unconverged_inner += tr.unconverged_inner;
            if (!tr.energies.empty()) last = tr.energies.back();
            res.trace.energies.push_back(last);
            if (observer) observer(frame, state);
        }
        res.trace.converged = res.trace.unconverged_inner == 0;
        return 0;
    });

    res.nodes = state.nodes;
    res.positive_graphs.push_back(state.spatiotemporal);
    for (const auto& g : state.appearance) res.positive_graphs.push_back(g);
    res.exclusion = state.exclusion;
    res.eff = state.eff;
    res.tracks = detail::stage("extract", [&] { return postfilter(extract_tracks(state.y, state.nodes), cfg.postfilter); });
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (final_state) *final_state = std::move(state);
    if (gt) res.report = detail::stage("evaluate", [&] { return evaluate_clear_mot(res.tracks, *gt, cfg.match); });
    return res;
}

inline std::optional<TrackSet> load_ground_truth(const std::optional<std::filesystem::path>& gt_path,
                                                 DetectionFormat format) {
    if (!gt_path) return std::nullopt;
    return detail::stage("ground truth", [&] { return parse_ground_truth_file(*gt_path, format); });
}

inline RunResult run_offline(const PipelineConfig& cfg, const std::filesystem::path& det_path,
                             const std::optional<std::filesystem::path>& gt_path = std::nullopt) {
    auto dets = detail::stage("detections", [&] { return parse_detection_file(det_path, cfg.format); });
    return track_offline(std::move(dets), cfg, load_ground_truth(gt_path, cfg.format));
}

inline RunResult run_online(const PipelineConfig& cfg, const std::filesystem::path& det_path,
                            const std::optional<std::filesystem::path>& gt_path = std::nullopt,
                            const FrameObserver& observer = {}) {
    auto dets = detail::stage("detections", [&] { return parse_detection_file(det_path, cfg.format); });
    return track_online(std::move(dets), cfg, load_ground_truth(gt_path, cfg.format), observer);
}

}  // namespace lpmot
