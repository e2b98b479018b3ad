#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lpmot/incremental.hpp"
#include "lpmot/io.hpp"
#include "lpmot/model.hpp"

namespace lpmot {

enum class ScenarioKind { crossing, parallel, occlusion };

inline ScenarioKind parse_scenario(std::string_view s) {
    if (s == "crossing") return ScenarioKind::crossing;
    if (s == "parallel") return ScenarioKind::parallel;
    if (s == "occlusion") return ScenarioKind::occlusion;
    throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

/// Synthetic sequence with point detections in a 640 x 480 scene.
struct Scenario {
    std::vector<Detection> detections;  ///< frame-sorted
    TrackSet ground_truth;
    ImageBounds bounds{0.0, 0.0, 640.0, 480.0};
    int frames = 0;
};

namespace detail {

/// Deterministic draws built only on mt19937_64 output so that sequences
/// are identical across standard libraries.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : rng_(seed) {}
    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool chance(double p) { return uniform() < p; }
    double normal(double sd) {
        // Box-Muller on two fresh uniforms.
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 rng_;
};

inline FeatureVector signature(int target, int targets) {
    FeatureVector f(static_cast<std::size_t>(targets), 0.0);
    f[static_cast<std::size_t>(target)] = 1.0;
    return f;
}

inline void emit(Scenario& sc, SynthRng& rng, int target, int frame, Point2 truth, double pos_noise,
                 const std::optional<FeatureVector>& feature, double feature_noise) {
    Detection d;
    d.frame = frame;
    d.center = {truth.x + rng.normal(pos_noise), truth.y + rng.normal(pos_noise)};
    d.confidence = rng.uniform(0.9, 1.0);
    if (feature) {
        FeatureVector f = *feature;
        for (double& v : f) v += rng.normal(feature_noise);
        d.set_feature(0, std::move(f));
    }
    sc.detections.push_back(std::move(d));
    sc.ground_truth.track(target).boxes[frame] = TrackBox{truth, std::nullopt, 1.0};
}

}  // namespace detail

/// Two targets walk side by side 40 apart and cross paths while occluded.
/// Afterwards they are 20 apart vertically with one 40 ahead, so the mean
/// positions of the post-occlusion segments sit closer to the wrong
/// pre-occlusion segments. Appearance is seen on about one frame in five,
/// never near the crossing. Meant to be tracked with tracklet nodes.
inline Scenario crossing_scenario(std::uint64_t seed) {
    detail::SynthRng rng(seed);
    Scenario sc;
    sc.frames = 120;
    const int tc = 60;
    const int hidden = 4;        // undetected within this many frames of tc
    const int featureless = 10;  // no appearance within this many frames of tc
    for (int t = 0; t < sc.frames; ++t) {
        for (int k = 0; k < 2; ++k) {
            const double side = k == 0 ? -1.0 : 1.0;
            const Point2 truth = t < tc ? Point2{80.0 + 3.0 * t, 240.0 + side * 20.0}
                                        : Point2{80.0 + 3.0 * t - side * 20.0, 240.0 - side * 10.0};
            const bool feat = std::abs(t - tc) > featureless && rng.chance(0.2);
            if (std::abs(t - tc) <= hidden) continue;
            std::optional<FeatureVector> f;
            if (feat) f = detail::signature(k, 2);
            detail::emit(sc, rng, k, t, truth, 0.3, f, 0.01);
        }
    }
    return sc;
}

/// `targets` targets in horizontal lanes 80 apart with a gentle vertical
/// wobble, detected every frame, appearance on about one frame in five.
inline Scenario parallel_scenario(std::uint64_t seed, int targets = 4, int frames = 100) {
    if (targets < 1 || frames < 1) throw std::invalid_argument("parallel_scenario: need targets and frames");
    detail::SynthRng rng(seed);
    Scenario sc;
    sc.frames = frames;
    std::vector<double> phase(static_cast<std::size_t>(targets)), speed(phase.size());
    for (int k = 0; k < targets; ++k) {
        phase[static_cast<std::size_t>(k)] = rng.uniform(0.0, 6.283185307179586);
        speed[static_cast<std::size_t>(k)] = rng.uniform(2.5, 3.5);
    }
    for (int t = 0; t < frames; ++t)
        for (int k = 0; k < targets; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            const double lane = 240.0 + 80.0 * (k - (targets - 1) / 2.0);
            const Point2 truth{100.0 + speed[ks] * t, lane + 10.0 * std::sin(0.05 * t + phase[ks])};
            std::optional<FeatureVector> f;
            if (rng.chance(0.2)) f = detail::signature(k, targets);
            detail::emit(sc, rng, k, t, truth, 0.5, f, 0.01);
        }
    return sc;
}

/// Three lane targets with random missed detections and low-confidence
/// clutter.
inline Scenario occlusion_scenario(std::uint64_t seed) {
    detail::SynthRng rng(seed);
    Scenario sc;
    sc.frames = 100;
    const int targets = 3;
    for (int t = 0; t < sc.frames; ++t) {
        for (int k = 0; k < targets; ++k) {
            const Point2 truth{100.0 + 3.0 * t, 160.0 + 80.0 * k};
            const bool missed = rng.chance(0.1);
            const bool feat = rng.chance(0.2);
            if (missed) {
                sc.ground_truth.track(k).boxes[t] = TrackBox{truth, std::nullopt, 1.0};
                continue;
            }
            std::optional<FeatureVector> f;
            if (feat) f = detail::signature(k, targets);
            detail::emit(sc, rng, k, t, truth, 0.5, f, 0.01);
        }
        if (rng.chance(0.05)) {
            Detection fp;
            fp.frame = t;
            fp.center = {rng.uniform(50.0, 590.0), rng.uniform(20.0, 100.0)};
            fp.confidence = rng.uniform(0.3, 0.6);
            sc.detections.push_back(fp);
        }
    }
    return sc;
}

inline Scenario make_scenario(ScenarioKind kind, std::uint64_t seed) {
    switch (kind) {
        case ScenarioKind::crossing: return crossing_scenario(seed);
        case ScenarioKind::parallel: return parallel_scenario(seed);
        case ScenarioKind::occlusion: return occlusion_scenario(seed);
    }
    throw std::invalid_argument("unknown scenario");
}

/// Writes `frame,id,x,y,conf[,feature...]` rows; features are space-separated.
inline void write_detections_apidis(std::ostream& out, const std::vector<Detection>& dets) {
    for (const auto& d : dets) {
        out << d.frame << ",-1," << detail::format_double(d.center.x) << ',' << detail::format_double(d.center.y) << ','
            << detail::format_double(d.confidence);
        for (std::size_t f = 0; f < d.features.size(); ++f) {
            out << ',';
            if (!d.features[f]) continue;
            for (std::size_t k = 0; k < d.features[f]->size(); ++k)
                out << (k ? " " : "") << detail::format_double((*d.features[f])[k]);
        }
        out << '\n';
    }
}

inline void write_ground_truth_apidis(std::ostream& out, const TrackSet& gt) {
    std::vector<std::tuple<int, int, const TrackBox*>> rows;
    for (const auto& t : gt.tracks)
        for (const auto& [f, b] : t.boxes) rows.emplace_back(f, t.track_id, &b);
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b)); });
    for (const auto& [f, id, b] : rows)
        out << f << ',' << id << ',' << detail::format_double(b->center.x) << ',' << detail::format_double(b->center.y)
            << ',' << detail::format_double(b->confidence) << '\n';
}

}  // namespace lpmot
