#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <vector>

#include "lpmot/model.hpp"

namespace lpmot {

enum class DetectionFormat { mot_csv, apidis_csv };

inline DetectionFormat parse_format_name(std::string_view name) {
    if (name == "mot_csv") return DetectionFormat::mot_csv;
    if (name == "apidis_csv") return DetectionFormat::apidis_csv;
    throw std::invalid_argument("unknown detection format '" + std::string(name) + "'");
}

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Present feature vectors of one feature id differ in length.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline double to_double(std::string_view s, std::size_t line) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError(line, "expected a number, got '" + std::string(s) + "'");
    return v;
}

inline int to_int(std::string_view s, std::size_t line) {
    const double v = to_double(s, line);
    if (v != std::floor(v) || std::abs(v) > 2e9) throw ParseError(line, "expected an integer, got '" + std::string(s) + "'");
    return static_cast<int>(v);
}

/// Shortest decimal text that reads back to exactly `v`.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline void check_dimensions(const std::vector<Detection>& dets) {
    std::vector<std::size_t> dims;
    for (const auto& d : dets) {
        if (dims.size() < d.features.size()) dims.resize(d.features.size(), 0);
        for (std::size_t f = 0; f < d.features.size(); ++f) {
            if (!d.features[f]) continue;
            const std::size_t n = d.features[f]->size();
            if (dims[f] == 0) dims[f] = n;
            else if (dims[f] != n)
                throw DimensionError("feature " + std::to_string(f) + " has dimensions " + std::to_string(dims[f]) +
                                     " and " + std::to_string(n));
        }
    }
}

struct ParsedRow {
    Detection det;
    int id = -1;
};

inline ParsedRow parse_row(std::string_view text, DetectionFormat format, std::size_t line) {
    const auto fields = split(text, ',');
    ParsedRow row;
    Detection& d = row.det;
    const std::size_t fixed = format == DetectionFormat::mot_csv ? 7 : 5;
    if (fields.size() < fixed)
        throw ParseError(line, "expected at least " + std::to_string(fixed) + " fields, got " +
                                   std::to_string(fields.size()));
    d.frame = to_int(fields[0], line);
    row.id = to_int(fields[1], line);
    if (format == DetectionFormat::mot_csv) {
        const double left = to_double(fields[2], line);
        const double top = to_double(fields[3], line);
        const double w = to_double(fields[4], line);
        const double h = to_double(fields[5], line);
        if (w < 0.0 || h < 0.0) throw ParseError(line, "negative box extent");
        d.center = {left + w / 2, top + h / 2};
        d.extent = Extent{w, h};
        d.confidence = to_double(fields[6], line);
        // Trailing columns form feature 0; all-empty means absent.
        if (fields.size() > fixed) {
            std::size_t empty = 0;
            for (std::size_t k = fixed; k < fields.size(); ++k) empty += trim(fields[k]).empty();
            const std::size_t count = fields.size() - fixed;
            if (empty == 0) {
                FeatureVector v;
                for (std::size_t k = fixed; k < fields.size(); ++k) v.push_back(to_double(fields[k], line));
                d.set_feature(0, std::move(v));
            } else if (empty != count) {
                throw ParseError(line, "feature columns partially empty");
            }
        }
    } else {
        d.center = {to_double(fields[2], line), to_double(fields[3], line)};
        d.confidence = to_double(fields[4], line);
        // One field per feature id, values separated by spaces.
        for (std::size_t k = fixed; k < fields.size(); ++k) {
            const auto f = trim(fields[k]);
            if (f.empty()) continue;
            FeatureVector v;
            for (auto tok : split(f, ' '))
                if (!trim(tok).empty()) v.push_back(to_double(tok, line));
            d.set_feature(k - fixed, std::move(v));
        }
    }
    if (d.frame < 0) throw ParseError(line, "negative frame");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw ParseError(line, "confidence outside [0,1]");
    return row;
}

inline std::vector<ParsedRow> parse_rows(std::istream& in, DetectionFormat format) {
    std::vector<ParsedRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        rows.push_back(parse_row(t, format, lineno));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ParsedRow& a, const ParsedRow& b) { return a.det.frame < b.det.frame; });
    return rows;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

}  // namespace detail

/// Reads detections; the id column is ignored. Output is sorted by frame,
/// keeping input order within a frame.
inline std::vector<Detection> parse_detections(std::istream& in, DetectionFormat format) {
    std::vector<Detection> dets;
    for (auto& r : detail::parse_rows(in, format)) dets.push_back(std::move(r.det));
    detail::check_dimensions(dets);
    return dets;
}

inline std::vector<Detection> parse_detection_file(const std::filesystem::path& path, DetectionFormat format) {
    auto in = detail::open_input(path);
    return parse_detections(in, format);
}

/// Reads a ground-truth file (same layout as detections, ids meaningful).
inline TrackSet parse_ground_truth(std::istream& in, DetectionFormat format) {
    TrackSet gt;
    for (auto& r : detail::parse_rows(in, format)) {
        TrackRecord& t = gt.track(r.id);
        TrackBox box{r.det.center, r.det.extent, r.det.confidence};
        if (!t.boxes.emplace(r.det.frame, box).second)
            throw std::runtime_error("ground truth: id " + std::to_string(r.id) + " repeated in frame " +
                                     std::to_string(r.det.frame));
    }
    return gt;
}

inline TrackSet parse_ground_truth_file(const std::filesystem::path& path, DetectionFormat format) {
    auto in = detail::open_input(path);
    return parse_ground_truth(in, format);
}

/// Track output: `frame,track_id,x,y,w,h` with (x, y) the box center,
/// sorted by frame then track id. An absent extent leaves w and h empty.
inline void write_tracks(const TrackSet& tracks, std::ostream& out) {
    struct Line {
        int frame;
        int id;
        const TrackBox* box;
    };
    std::vector<Line> lines;
    for (const auto& t : tracks.tracks)
        for (const auto& [frame, box] : t.boxes) lines.push_back({frame, t.track_id, &box});
    std::sort(lines.begin(), lines.end(),
              [](const Line& a, const Line& b) { return std::tie(a.frame, a.id) < std::tie(b.frame, b.id); });
    using detail::format_double;
    for (const auto& l : lines) {
        out << l.frame << ',' << l.id << ',' << format_double(l.box->center.x) << ','
            << format_double(l.box->center.y) << ',';
        if (l.box->extent) out << format_double(l.box->extent->width) << ',' << format_double(l.box->extent->height);
        else out << ',';
        out << '\n';
    }
}

inline void write_track_file(const TrackSet& tracks, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    write_tracks(tracks, out);
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline TrackSet parse_tracks(std::istream& in) {
    TrackSet ts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto f = detail::split(t, ',');
        if (f.size() != 6) throw ParseError(lineno, "expected 6 fields");
        const int frame = detail::to_int(f[0], lineno);
        const int id = detail::to_int(f[1], lineno);
        TrackBox box;
        box.center = {detail::to_double(f[2], lineno), detail::to_double(f[3], lineno)};
        const bool we = detail::trim(f[4]).empty(), he = detail::trim(f[5]).empty();
        if (we != he) throw ParseError(lineno, "width and height must both be present or both empty");
        if (!we) box.extent = Extent{detail::to_double(f[4], lineno), detail::to_double(f[5], lineno)};
        if (!ts.track(id).boxes.emplace(frame, box).second)
            throw ParseError(lineno, "track " + std::to_string(id) + " repeated in frame " + std::to_string(frame));
    }
    return ts;
}

inline TrackSet parse_track_file(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return parse_tracks(in);
}

/// Drops the appearance features of every detection whose box overlaps a
/// same-frame box with IoU above `max_overlap`. Positions are untouched.
inline std::vector<Detection> strip_overlapping_features(std::vector<Detection> dets, double max_overlap) {
    std::vector<char> strip(dets.size(), 0);
    std::size_t begin = 0;
    while (begin < dets.size()) {
        std::size_t end = begin;
        while (end < dets.size() && dets[end].frame == dets[begin].frame) ++end;
        for (std::size_t i = begin; i < end; ++i) {
            if (!dets[i].extent) continue;
            for (std::size_t j = i + 1; j < end; ++j) {
                if (!dets[j].extent) continue;
                if (box_iou(dets[i].center, *dets[i].extent, dets[j].center, *dets[j].extent) > max_overlap)
                    strip[i] = strip[j] = 1;
            }
        }
        begin = end;
    }
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (strip[i]) dets[i].clear_features();
    return dets;
}

}  // namespace lpmot
