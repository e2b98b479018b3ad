// Command line front end: offline / online tracking, evaluation and
// synthetic scenario generation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lpmot/lpmot.hpp"

namespace fs = std::filesystem;
using namespace lpmot;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadInput = 2;
constexpr int kUnconverged = 3;

std::ofstream open_output(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    return out;
}

void print_report(const EvalReport& r, const MatchRule& rule) {
    std::cout << "# CLEAR MOT, greedy persistent matching, " << rule.to_string() << '\n'
              << "mota=" << detail::format_double(r.mota) << '\n'
              << "motp=" << detail::format_double(r.motp) << '\n'
              << "switches=" << r.switches << '\n'
              << "misses=" << r.misses << '\n'
              << "false_positives=" << r.false_positives << '\n'
              << "matches=" << r.matches << '\n'
              << "total_gt=" << r.total_gt << '\n';
}

void dump_graphs(const RunResult& res, const fs::path& p) {
    std::vector<NamedGraph> named;
    named.push_back({"spatiotemporal", &res.positive_graphs.at(0)});
    std::vector<std::string> ids;
    for (std::size_t c = 1; c < res.positive_graphs.size(); ++c) ids.push_back("appearance" + std::to_string(c - 1));
    for (std::size_t c = 1; c < res.positive_graphs.size(); ++c) named.push_back({ids[c - 1], &res.positive_graphs[c]});
    named.push_back({"exclusion", &res.exclusion});
    auto out = open_output(p);
    write_graph_csv(out, named);
}

int finish(const RunResult& res, const PipelineConfig& cfg) {
    if (res.report) print_report(*res.report, cfg.match);
    std::cerr << "tracks=" << res.tracks.tracks.size() << " nodes=" << res.nodes.size()
              << " seconds=" << detail::format_double(res.seconds) << '\n';
    if (res.trace.unconverged_inner > cfg.max_unconverged) {
        std::cerr << "warning: " << res.trace.unconverged_inner << " unconverged inner solves (threshold "
                  << cfg.max_unconverged << ")\n";
        return kUnconverged;
    }
    return kOk;
}

bool is_input_stage(const StageError& e) {
    return e.stage() == "config" || e.stage() == "detections" || e.stage() == "ground truth";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-object tracking by label propagation on complementary graphs"};
    app.require_subcommand(1);

    std::string dets, gt, config, out, trace_path, solver, graphs_path, batches_path, checkpoint_path;
    int workers = 1;
    std::optional<int> window;

    auto* offline = app.add_subcommand("offline", "track a whole detection file at once");
    offline->add_option("--dets", dets, "detection file")->required()->check(CLI::ExistingFile);
    offline->add_option("--gt", gt, "ground truth for evaluation")->check(CLI::ExistingFile);
    offline->add_option("--config", config, "INI configuration")->required()->check(CLI::ExistingFile);
    offline->add_option("--solver", solver, "joint or nodewise")->check(CLI::IsMember({"joint", "nodewise"}));
    offline->add_option("--workers", workers, "parallel node-wise workers")->check(CLI::PositiveNumber);
    offline->add_option("--energy-trace", trace_path, "write iter,objective CSV");
    offline->add_option("--dump-graphs", graphs_path, "write graph_id,i,j,weight CSV");
    offline->add_option("--dump-batches", batches_path, "write batch_id,node_id CSV");
    offline->add_option("--out", out, "track output file")->required();

    auto* online = app.add_subcommand("online", "track frame by frame with a sliding window");
    online->add_option("--dets", dets, "detection file")->required()->check(CLI::ExistingFile);
    online->add_option("--gt", gt, "ground truth for evaluation")->check(CLI::ExistingFile);
    online->add_option("--config", config, "INI configuration")->required()->check(CLI::ExistingFile);
    online->add_option("--window", window, "observation window T_o in frames")->check(CLI::PositiveNumber);
    online->add_option("--energy-trace", trace_path, "write per-frame window objective CSV");
    online->add_option("--checkpoint", checkpoint_path, "write the final state as JSON");
    online->add_option("--out", out, "track output file")->required();

    std::string tracks_path, match = "dist:30", format = "mot_csv";
    auto* eval = app.add_subcommand("eval", "CLEAR MOT metrics of a track file");
    eval->add_option("--tracks", tracks_path, "track file")->required()->check(CLI::ExistingFile);
    eval->add_option("--gt", gt, "ground truth")->required()->check(CLI::ExistingFile);
    eval->add_option("--match", match, "iou:<t> or dist:<t>");
    eval->add_option("--format", format, "ground truth format")->check(CLI::IsMember({"mot_csv", "apidis_csv"}));

    std::string scenario, out_dets, out_gt;
    std::uint64_t seed = 1;
    auto* synth = app.add_subcommand("synth", "write a synthetic scenario");
    synth->add_option("--scenario", scenario, "crossing, parallel or occlusion")
        ->required()
        ->check(CLI::IsMember({"crossing", "parallel", "occlusion"}));
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out-dets", out_dets, "detections (apidis_csv)")->required();
    synth->add_option("--out-gt", out_gt, "ground truth (apidis_csv)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kBadInput;
    }

    try {
        if (*synth) {
            const Scenario sc = make_scenario(parse_scenario(scenario), seed);
            auto d = open_output(out_dets);
            write_detections_apidis(d, sc.detections);
            auto g = open_output(out_gt);
            write_ground_truth_apidis(g, sc.ground_truth);
            return kOk;
        }
        if (*eval) {
            const MatchRule rule = MatchRule::parse(match);
            const TrackSet tracks = parse_track_file(tracks_path);
            const TrackSet truth = parse_ground_truth_file(gt, parse_format_name(format));
            print_report(evaluate_clear_mot(tracks, truth, rule), rule);
            return kOk;
        }

        PipelineConfig cfg = load_config_file(config);
        const std::optional<fs::path> gt_path = gt.empty() ? std::nullopt : std::optional<fs::path>(gt);
        if (*offline) {
            if (!solver.empty()) cfg.solver = parse_solver_kind(solver);
            if (offline->count("--workers") > 0) {
                if (workers > 1) cfg.nodewise.parallel = ParallelConfig{workers};
                else cfg.nodewise.parallel.reset();
            }
            const RunResult res = run_offline(cfg, dets, gt_path);
            write_track_file(res.tracks, out);
            if (!trace_path.empty()) {
                auto t = open_output(trace_path);
                write_energy_trace(t, res.trace.energies);
            }
            if (!graphs_path.empty()) dump_graphs(res, graphs_path);
            if (!batches_path.empty()) {
                auto b = open_output(batches_path);
                write_batch_csv(b, schedule_batches(res.eff));
            }
            return finish(res, cfg);
        }
        if (window) cfg.online.observation_window = *window;
        OnlineState state;
        auto det_list = detail::stage("detections", [&] { return parse_detection_file(dets, cfg.format); });
        const RunResult res = track_online(std::move(det_list), cfg, load_ground_truth(gt_path, cfg.format), {},
                                           checkpoint_path.empty() ? nullptr : &state);
        write_track_file(res.tracks, out);
        if (!trace_path.empty()) {
            auto t = open_output(trace_path);
            write_energy_trace(t, res.trace.energies);
        }
        if (!checkpoint_path.empty()) save_checkpoint(state, checkpoint_path);
        return finish(res, cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kBadInput;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kBadInput;
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return is_input_stage(e) ? kBadInput : kFailure;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
