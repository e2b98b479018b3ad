#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lpmot/clear_mot.hpp"
#include "lpmot/io.hpp"
#include "lpmot/pipeline.hpp"

namespace lpmot {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline double config_double(const std::string& key, std::string_view text) {
    text = trim(text);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size() || text.empty())
        throw ConfigError(key + ": expected a number, got '" + std::string(text) + "'");
    return v;
}

inline long long config_integer(const std::string& key, std::string_view text) {
    text = trim(text);
    long long v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size() || text.empty())
        throw ConfigError(key + ": expected an integer, got '" + std::string(text) + "'");
    return v;
}

inline std::size_t config_count(const std::string& key, std::string_view text) {
    const long long v = config_integer(key, text);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    return static_cast<std::size_t>(v);
}

inline bool config_bool(const std::string& key, std::string_view text) {
    text = trim(text);
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + std::string(text) + "'");
}

/// Whitespace-separated numbers.
inline std::vector<double> config_list(const std::string& key, std::string_view text) {
    std::vector<double> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) out.push_back(config_double(key, tok));
    if (out.empty()) throw ConfigError(key + ": expected at least one number");
    return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, std::map<std::string, Setter>>& config_setters() {
    static const std::map<std::string, std::map<std::string, Setter>> table = {
        {"graph",
         {
             {"window", [](auto& c, auto& k, auto& v) { c.graph.window = static_cast<int>(config_integer(k, v)); }},
             {"gamma", [](auto& c, auto& k, auto& v) { c.graph.gamma = config_double(k, v); }},
             {"v_max", [](auto& c, auto& k, auto& v) { c.graph.v_max = config_double(k, v); }},
             {"delta", [](auto& c, auto& k, auto& v) { c.graph.delta = config_double(k, v); }},
             {"appearance_neighbors",
              [](auto& c, auto& k, auto& v) { c.graph.appearance_neighbors = config_count(k, v); }},
             {"drop_below", [](auto& c, auto& k, auto& v) { c.graph.drop_below = config_double(k, v); }},
             {"alphas", [](auto& c, auto& k, auto& v) { c.graph.alphas = config_list(k, v); }},
             {"use_tracklets", [](auto& c, auto& k, auto& v) { c.use_tracklets = config_bool(k, v); }},
             {"tracklet_max_dist", [](auto& c, auto& k, auto& v) { c.tracklet_max_dist = config_double(k, v); }},
             {"tracklet_window",
              [](auto& c, auto& k, auto& v) { c.tracklet_window = static_cast<int>(config_integer(k, v)); }},
             {"strip_overlap", [](auto& c, auto& k, auto& v) { c.strip_overlap = config_double(k, v); }},
         }},
        {"online",
         {
             {"st_window",
              [](auto& c, auto& k, auto& v) { c.online.spatiotemporal.window = static_cast<int>(config_integer(k, v)); }},
             {"st_sigma", [](auto& c, auto& k, auto& v) { c.online.spatiotemporal.sigma = config_double(k, v); }},
             {"app_windows",
              [](auto& c, auto& k, auto& v) {
                  const auto w = config_list(k, v);
                  c.online.appearance.resize(w.size(), c.online.appearance.back());
                  for (std::size_t i = 0; i < w.size(); ++i) c.online.appearance[i].window = static_cast<int>(w[i]);
              }},
             {"app_sigmas",
              [](auto& c, auto& k, auto& v) {
                  const auto s = config_list(k, v);
                  c.online.appearance.resize(s.size(), c.online.appearance.back());
                  for (std::size_t i = 0; i < s.size(); ++i) c.online.appearance[i].sigma = s[i];
              }},
             {"observation_window",
              [](auto& c, auto& k, auto& v) { c.online.observation_window = static_cast<int>(config_integer(k, v)); }},
             {"border_sigma", [](auto& c, auto& k, auto& v) { c.online.border_sigma = config_double(k, v); }},
             {"image_bounds",
              [](auto& c, auto& k, auto& v) {
                  const auto b = config_list(k, v);
                  if (b.size() != 4) throw ConfigError(k + ": expected xmin ymin xmax ymax");
                  c.online.image_bounds = ImageBounds{b[0], b[1], b[2], b[3]};
              }},
             {"min_denominator", [](auto& c, auto& k, auto& v) { c.online.min_denominator = config_double(k, v); }},
         }},
        {"solver",
         {
             {"kind",
              [](auto& c, auto& k, auto& v) {
                  try {
                      c.solver = parse_solver_kind(trim(v));
                  } catch (const std::invalid_argument& e) {
                      throw ConfigError(k + ": " + e.what());
                  }
              }},
             {"seed",
              [](auto& c, auto& k, auto& v) {
                  const auto s = static_cast<std::uint64_t>(config_count(k, v));
                  c.joint.seed = s;
                  c.nodewise.seed = s;
              }},
             {"inner_max_iters",
              [](auto& c, auto& k, auto& v) {
                  const int n = static_cast<int>(config_integer(k, v));
                  c.joint.inner.max_iters = n;
                  c.nodewise.inner.max_iters = n;
              }},
             {"inner_tol",
              [](auto& c, auto& k, auto& v) {
                  const double t = config_double(k, v);
                  c.joint.inner.tol = t;
                  c.nodewise.inner.tol = t;
              }},
             {"t_joint", [](auto& c, auto& k, auto& v) { c.joint.t_joint = static_cast<int>(config_integer(k, v)); }},
             {"outer_tol", [](auto& c, auto& k, auto& v) { c.joint.outer_tol = config_double(k, v); }},
             {"init_mix", [](auto& c, auto& k, auto& v) { c.joint.init_mix = config_double(k, v); }},
             {"t_con", [](auto& c, auto& k, auto& v) { c.nodewise.t_con = static_cast<int>(config_integer(k, v)); }},
             {"mm_iters",
              [](auto& c, auto& k, auto& v) { c.nodewise.mm_iters = static_cast<int>(config_integer(k, v)); }},
             {"sweep_tol", [](auto& c, auto& k, auto& v) { c.nodewise.sweep_tol = config_double(k, v); }},
             {"order",
              [](auto& c, auto& k, auto& v) {
                  const auto s = trim(v);
                  if (s == "sequential")
                      c.nodewise.order = SweepOrder::sequential;
                  else if (s == "seeded_random")
                      c.nodewise.order = SweepOrder::seeded_random;
                  else
                      throw ConfigError(k + ": expected sequential or seeded_random");
              }},
             {"workers",
              [](auto& c, auto& k, auto& v) {
                  const auto w = static_cast<int>(config_integer(k, v));
                  if (w <= 1)
                      c.nodewise.parallel.reset();
                  else
                      c.nodewise.parallel = ParallelConfig{w};
              }},
             {"max_unconverged", [](auto& c, auto& k, auto& v) { c.max_unconverged = config_count(k, v); }},
         }},
        {"pipeline",
         {
             {"format",
              [](auto& c, auto& k, auto& v) {
                  try {
                      c.format = parse_format_name(trim(v));
                  } catch (const std::exception& e) {
                      throw ConfigError(k + ": " + e.what());
                  }
              }},
             {"postfilter", [](auto& c, auto& k, auto& v) { c.postfilter.enabled = config_bool(k, v); }},
             {"min_length", [](auto& c, auto& k, auto& v) { c.postfilter.min_length = config_count(k, v); }},
             {"min_confidence", [](auto& c, auto& k, auto& v) { c.postfilter.min_confidence = config_double(k, v); }},
             {"match",
              [](auto& c, auto& k, auto& v) {
                  try {
                      c.match = MatchRule::parse(trim(v));
                  } catch (const std::exception& e) {
                      throw ConfigError(k + ": " + e.what());
                  }
              }},
         }},
    };
    return table;
}

}  // namespace detail

/// Reads an INI file with sections [graph], [online], [solver] and
/// [pipeline]. Keys left out keep their defaults; unknown sections or keys
/// are errors. The online graph shares gamma, v_max and alphas with
/// [graph].
inline PipelineConfig load_config(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    PipelineConfig cfg;
    const auto& setters = detail::config_setters();
    for (const auto& [section, body] : tree) {
        const auto sit = setters.find(section);
        if (sit == setters.end()) {
            if (!body.data().empty()) throw ConfigError("key '" + section + "' outside a section");
            throw ConfigError("unknown section [" + section + "]");
        }
        for (const auto& [key, node] : body) {
            const std::string name = section + "." + key;
            const auto kit = sit->second.find(key);
            if (kit == sit->second.end()) throw ConfigError("unknown key " + name);
            kit->second(cfg, name, node.data());
        }
    }
    cfg.online.gamma = cfg.graph.gamma;
    cfg.online.v_max = cfg.graph.v_max;
    cfg.online.alphas = cfg.graph.alphas;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

inline PipelineConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return load_config(in);
}

}  // namespace lpmot
