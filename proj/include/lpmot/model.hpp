#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace lpmot {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

struct Extent {
    double width = 0.0;
    double height = 0.0;
    friend bool operator==(const Extent&, const Extent&) = default;
};

/// Axis-aligned box given by its center and extent.
inline double box_iou(const Point2& ca, const Extent& ea, const Point2& cb, const Extent& eb) noexcept {
    const double ix = std::min(ca.x + ea.width / 2, cb.x + eb.width / 2) -
                      std::max(ca.x - ea.width / 2, cb.x - eb.width / 2);
    const double iy = std::min(ca.y + ea.height / 2, cb.y + eb.height / 2) -
                      std::max(ca.y - ea.height / 2, cb.y - eb.height / 2);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    const double uni = ea.width * ea.height + eb.width * eb.height - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

using FeatureVector = std::vector<double>;

/// One observation. Appearance features are indexed by feature id; a
/// missing entry (or nullopt) means the feature was not measured.
struct Detection {
    int frame = 0;
    Point2 center;
    std::optional<Extent> extent;
    double confidence = 1.0;
    std::vector<std::optional<FeatureVector>> features;

    const FeatureVector* feature(std::size_t id) const noexcept {
        return id < features.size() && features[id] ? &*features[id] : nullptr;
    }
    void set_feature(std::size_t id, FeatureVector v) {
        if (features.size() <= id) features.resize(id + 1);
        features[id] = std::move(v);
    }
    void clear_features() noexcept {
        for (auto& f : features) f.reset();
    }

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Chain of detections in consecutive frames with averaged features.
class Tracklet {
public:
    explicit Tracklet(std::vector<Detection> detections) : detections_(std::move(detections)) {
        if (detections_.empty()) throw std::invalid_argument("Tracklet: empty");
        for (std::size_t k = 1; k < detections_.size(); ++k)
            if (detections_[k].frame != detections_[k - 1].frame + 1)
                throw std::invalid_argument("Tracklet: frames must be consecutive");
        std::size_t nfeat = 0;
        for (const auto& d : detections_) nfeat = std::max(nfeat, d.features.size());
        aggregate_.resize(nfeat);
        for (std::size_t f = 0; f < nfeat; ++f) {
            std::size_t count = 0;
            FeatureVector sum;
            for (const auto& d : detections_) {
                const FeatureVector* v = d.feature(f);
                if (!v) continue;
                if (sum.empty()) sum.assign(v->size(), 0.0);
                if (v->size() != sum.size()) throw std::invalid_argument("Tracklet: feature dimension mismatch");
                for (std::size_t k = 0; k < v->size(); ++k) sum[k] += (*v)[k];
                ++count;
            }
            if (count == 0) continue;
            for (double& s : sum) s /= static_cast<double>(count);
            aggregate_[f] = std::move(sum);
        }
    }

    const std::vector<Detection>& detections() const noexcept { return detections_; }
    const std::vector<std::optional<FeatureVector>>& aggregate_features() const noexcept { return aggregate_; }
    int first_frame() const noexcept { return detections_.front().frame; }
    int last_frame() const noexcept { return detections_.back().frame; }

private:
    std::vector<Detection> detections_;
    std::vector<std::optional<FeatureVector>> aggregate_;
};

/// Graph vertex wrapping either a single detection or a tracklet.
class Node {
public:
    Node(std::size_t id, Detection det) : id_(id), payload_(std::move(det)) { cache(); }
    Node(std::size_t id, Tracklet tr) : id_(id), payload_(std::move(tr)) { cache(); }

    std::size_t id() const noexcept { return id_; }
    const std::variant<Detection, Tracklet>& payload() const noexcept { return payload_; }
    bool is_tracklet() const noexcept { return std::holds_alternative<Tracklet>(payload_); }

    int first_frame() const noexcept { return first_; }
    int last_frame() const noexcept { return last_; }
    /// Mean frame index.
    double time() const noexcept { return time_; }
    /// Mean center over member detections.
    const Point2& center() const noexcept { return center_; }
    const Point2& first_center() const noexcept { return first_center_; }
    const Point2& last_center() const noexcept { return last_center_; }
    double confidence() const noexcept { return confidence_; }

    const FeatureVector* feature(std::size_t id) const noexcept {
        if (const auto* d = std::get_if<Detection>(&payload_)) return d->feature(id);
        const auto& agg = std::get<Tracklet>(payload_).aggregate_features();
        return id < agg.size() && agg[id] ? &*agg[id] : nullptr;
    }

    std::vector<const Detection*> detections() const {
        std::vector<const Detection*> out;
        if (const auto* d = std::get_if<Detection>(&payload_)) {
            out.push_back(d);
        } else {
            for (const auto& m : std::get<Tracklet>(payload_).detections()) out.push_back(&m);
        }
        return out;
    }

private:
    void cache() {
        const auto dets = detections();
        first_ = dets.front()->frame;
        last_ = dets.back()->frame;
        first_center_ = dets.front()->center;
        last_center_ = dets.back()->center;
        double t = 0.0, x = 0.0, y = 0.0;
        confidence_ = 0.0;
        for (const Detection* d : dets) {
            t += d->frame;
            x += d->center.x;
            y += d->center.y;
            confidence_ = std::max(confidence_, d->confidence);
        }
        const double n = static_cast<double>(dets.size());
        time_ = t / n;
        center_ = {x / n, y / n};
    }

    std::size_t id_;
    std::variant<Detection, Tracklet> payload_;
    int first_ = 0;
    int last_ = 0;
    double time_ = 0.0;
    Point2 center_, first_center_, last_center_;
    double confidence_ = 0.0;
};

/// Wraps detections as nodes with dense ids in (frame, input order).
inline std::vector<Node> make_nodes(const std::vector<Detection>& dets) {
    std::vector<Node> nodes;
    nodes.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) nodes.emplace_back(i, dets[i]);
    return nodes;
}

inline std::vector<Node> make_nodes(std::vector<Tracklet> tracklets) {
    std::stable_sort(tracklets.begin(), tracklets.end(),
                     [](const Tracklet& a, const Tracklet& b) { return a.first_frame() < b.first_frame(); });
    std::vector<Node> nodes;
    nodes.reserve(tracklets.size());
    for (std::size_t i = 0; i < tracklets.size(); ++i) nodes.emplace_back(i, std::move(tracklets[i]));
    return nodes;
}

struct TrackBox {
    Point2 center;
    std::optional<Extent> extent;
    double confidence = 1.0;
    friend bool operator==(const TrackBox&, const TrackBox&) = default;
};

struct TrackRecord {
    int track_id = 0;
    std::map<int, TrackBox> boxes;  ///< frame -> box

    int first_frame() const { return boxes.empty() ? 0 : boxes.begin()->first; }
    int last_frame() const { return boxes.empty() ? 0 : boxes.rbegin()->first; }
    double max_confidence() const {
        double c = 0.0;
        for (const auto& [f, b] : boxes) c = std::max(c, b.confidence);
        return c;
    }
    friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

/// Identity-labeled trajectories; tracks are kept sorted by id.
struct TrackSet {
    std::vector<TrackRecord> tracks;
    std::map<std::size_t, int> provenance;  ///< node id -> track id

    TrackRecord& track(int id) {
        auto it = std::lower_bound(tracks.begin(), tracks.end(), id,
                                   [](const TrackRecord& t, int v) { return t.track_id < v; });
        if (it == tracks.end() || it->track_id != id) it = tracks.insert(it, TrackRecord{id, {}});
        return *it;
    }
    const TrackRecord* find(int id) const {
        auto it = std::lower_bound(tracks.begin(), tracks.end(), id,
                                   [](const TrackRecord& t, int v) { return t.track_id < v; });
        return it != tracks.end() && it->track_id == id ? &*it : nullptr;
    }
    std::size_t box_count() const {
        std::size_t n = 0;
        for (const auto& t : tracks) n += t.boxes.size();
        return n;
    }

    friend bool operator==(const TrackSet&, const TrackSet&) = default;
};

}  // namespace lpmot
