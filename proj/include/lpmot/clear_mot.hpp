#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lpmot/io.hpp"
#include "lpmot/model.hpp"

namespace lpmot {

/// A track box matches a ground-truth box when IoU > threshold, or when the
/// center distance is < threshold.
struct MatchRule {
    enum class Kind { iou, distance };
    Kind kind = Kind::distance;
    double threshold = 30.0;

    static MatchRule iou(double t = 0.5) { return {Kind::iou, t}; }
    static MatchRule dist(double t = 30.0) { return {Kind::distance, t}; }

    /// Accepts `iou:<t>` or `dist:<t>`.
    static MatchRule parse(std::string_view text) {
        const auto colon = text.find(':');
        if (colon == std::string_view::npos) throw std::invalid_argument("match rule must look like iou:0.5 or dist:30");
        const auto kind = text.substr(0, colon);
        const double t = detail::to_double(text.substr(colon + 1), 0);
        if (!(t > 0.0)) throw std::invalid_argument("match threshold must be > 0");
        if (kind == "iou") return iou(t);
        if (kind == "dist") return dist(t);
        throw std::invalid_argument("unknown match rule '" + std::string(kind) + "'");
    }

    std::string to_string() const {
        return (kind == Kind::iou ? "iou:" : "dist:") + detail::format_double(threshold);
    }

    /// Match quality where larger is better, or nullopt when the pair does
    /// not match.
    std::optional<double> score(const TrackBox& gt, const TrackBox& tr) const {
        if (kind == Kind::distance) {
            const double d = distance(gt.center, tr.center);
            if (d < threshold) return -d;
            return std::nullopt;
        }
        if (!gt.extent || !tr.extent) return std::nullopt;
        const double v = box_iou(gt.center, *gt.extent, tr.center, *tr.extent);
        if (v > threshold) return v;
        return std::nullopt;
    }
    /// Per-match precision term: distance, or IoU.
    double precision(const TrackBox& gt, const TrackBox& tr) const {
        if (kind == Kind::distance) return distance(gt.center, tr.center);
        return box_iou(gt.center, *gt.extent, tr.center, *tr.extent);
    }
};

struct EvalReport {
    double mota = 1.0;
    double motp = 0.0;  ///< mean match distance, or mean IoU under an IoU rule
    std::size_t switches = 0;
    std::size_t misses = 0;
    std::size_t false_positives = 0;
    std::size_t matches = 0;
    std::size_t total_gt = 0;
};

/// CLEAR MOT with greedy persistent matching. Each frame first keeps the
/// previous ground-truth to track correspondences that still match, then
/// pairs the rest by best score (ties by ground-truth id, then track id).
/// A switch is counted whenever a ground-truth id is matched to a track id
/// other than its last matched one.
inline EvalReport evaluate_clear_mot(const TrackSet& tracks, const TrackSet& gt, const MatchRule& rule) {
    std::map<int, std::vector<std::pair<int, const TrackBox*>>> gt_frames, tr_frames;
    for (const auto& t : gt.tracks)
        for (const auto& [f, b] : t.boxes) gt_frames[f].emplace_back(t.track_id, &b);
    for (const auto& t : tracks.tracks)
        for (const auto& [f, b] : t.boxes) tr_frames[f].emplace_back(t.track_id, &b);
    std::set<int> frames;
    for (const auto& [f, v] : gt_frames) frames.insert(f);
    for (const auto& [f, v] : tr_frames) frames.insert(f);

    EvalReport r;
    double precision_sum = 0.0;
    std::map<int, int> last_match;  // gt id -> track id
    static const std::vector<std::pair<int, const TrackBox*>> none;
    for (int f : frames) {
        const auto git = gt_frames.find(f);
        const auto tit = tr_frames.find(f);
        const auto& gs = git == gt_frames.end() ? none : git->second;
        const auto& ts = tit == tr_frames.end() ? none : tit->second;
        r.total_gt += gs.size();
        std::vector<char> g_used(gs.size(), 0), t_used(ts.size(), 0);
        auto record = [&](std::size_t gi, std::size_t ti) {
            g_used[gi] = t_used[ti] = 1;
            ++r.matches;
            precision_sum += rule.precision(*gs[gi].second, *ts[ti].second);
            auto [it, inserted] = last_match.emplace(gs[gi].first, ts[ti].first);
            if (!inserted && it->second != ts[ti].first) {
                ++r.switches;
                it->second = ts[ti].first;
            }
        };
        for (std::size_t gi = 0; gi < gs.size(); ++gi) {
            const auto prev = last_match.find(gs[gi].first);
            if (prev == last_match.end()) continue;
            for (std::size_t ti = 0; ti < ts.size(); ++ti)
                if (!t_used[ti] && ts[ti].first == prev->second && rule.score(*gs[gi].second, *ts[ti].second)) {
                    record(gi, ti);
                    break;
                }
        }
        struct Cand {
            double score;
            int gid, tid;
            std::size_t gi, ti;
        };
        std::vector<Cand> cands;
        for (std::size_t gi = 0; gi < gs.size(); ++gi) {
            if (g_used[gi]) continue;
            for (std::size_t ti = 0; ti < ts.size(); ++ti) {
                if (t_used[ti]) continue;
                if (auto s = rule.score(*gs[gi].second, *ts[ti].second))
                    cands.push_back({*s, gs[gi].first, ts[ti].first, gi, ti});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            return std::tie(b.score, a.gid, a.tid) < std::tie(a.score, b.gid, b.tid);
        });
        for (const auto& c : cands)
            if (!g_used[c.gi] && !t_used[c.ti]) record(c.gi, c.ti);
        for (char u : g_used) r.misses += !u;
        for (char u : t_used) r.false_positives += !u;
    }
    if (r.total_gt > 0)
        r.mota = 1.0 - static_cast<double>(r.misses + r.false_positives + r.switches) / static_cast<double>(r.total_gt);
    else
        r.mota = r.false_positives == 0 ? 1.0 : 0.0;  // no ground truth: only false positives can count
    r.motp = r.matches > 0 ? precision_sum / static_cast<double>(r.matches) : 0.0;
    return r;
}

}  // namespace lpmot
