#include "orbit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "orbit/controllers.hpp"

namespace orbit {

namespace {

// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

std::string indexed_name(const char* stem, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.csv", stem, index);
    return buf;
}

double parse_field(std::stringstream& ss, const std::string& context) {
    std::string cell;
    if (!std::getline(ss, cell, ','))
        throw ParseError(context + ": missing field");
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw ParseError(context + ": bad number '" + cell + "'");
    }
}

}  // namespace

const char* controller_kind_name(ControllerKind k) {
    switch (k) {
        case ControllerKind::svd:
            return "svd";
        case ControllerKind::supervised:
            return "supervised";
        case ControllerKind::mbrl:
            return "mbrl";
    }
    return "unknown";
}

void ExperimentConfig::validate() const {
    env.validate();
    if (n_trajectories < 1)
        throw ConfigError("ExperimentConfig: n_trajectories must be at least 1");
    if (trajectory_length < 1)
        throw ConfigError("ExperimentConfig: trajectory_length must be at least 1");
    if (!(rms_threshold > 0.0) || !std::isfinite(rms_threshold))
        throw ConfigError("ExperimentConfig: rms_threshold must be positive and finite");
    if (out_dir.empty()) throw ConfigError("ExperimentConfig: out_dir must not be empty");
    switch (controller) {
        case ControllerKind::svd:
            if (svd.lambda && (*svd.lambda < 0.0 || !std::isfinite(*svd.lambda)))
                throw ConfigError("ExperimentConfig: svd.lambda must be non-negative and finite");
            if (!(svd.gain > 0.0) || !std::isfinite(svd.gain))
                throw ConfigError("ExperimentConfig: svd.gain must be positive and finite");
            break;
        case ControllerKind::supervised: {
            const SupervisedSpec& s = supervised;
            if (!(s.gain > 0.0) || !std::isfinite(s.gain))
                throw ConfigError("ExperimentConfig: supervised.gain must be positive and finite");
            if (!(s.action_scale > 0.0) || !std::isfinite(s.action_scale))
                throw ConfigError(
                    "ExperimentConfig: supervised.action_scale must be positive and finite");
            if (!s.checkpoint.empty()) break;  // the rest only matters when training
            if (s.recipe == DatasetProvenance::archive && s.dataset_path.empty())
                throw ConfigError(
                    "ExperimentConfig: the archive recipe requires supervised.dataset_path");
            if (s.recipe != DatasetProvenance::archive && s.dataset_size < 1)
                throw ConfigError("ExperimentConfig: supervised.dataset_size must be at least 1");
            if (s.label_lambda && (*s.label_lambda < 0.0 || !std::isfinite(*s.label_lambda)))
                throw ConfigError(
                    "ExperimentConfig: supervised.label_lambda must be non-negative and finite");
            if (s.recipe == DatasetProvenance::forward_random &&
                (!(s.excitation_sigma > 0.0) || !std::isfinite(s.excitation_sigma)))
                throw ConfigError(
                    "ExperimentConfig: supervised.excitation_sigma must be positive and finite");
            if (s.epochs < 0)
                throw ConfigError("ExperimentConfig: supervised.epochs must be non-negative");
            if (s.batch_size < 1)
                throw ConfigError("ExperimentConfig: supervised.batch_size must be at least 1");
            if (!(s.lr > 0.0))
                throw ConfigError("ExperimentConfig: supervised.lr must be positive");
            for (int h : s.hidden_layers)
                if (h < 1)
                    throw ConfigError(
                        "ExperimentConfig: supervised hidden layer widths must be at least 1");
            break;
        }
        case ControllerKind::mbrl:
            mbrl.adaptive.validate();
            if (mbrl.checkpoint.empty()) mbrl.pretrain.validate();
            break;
    }
}

MetricsSummary compute_metrics(const std::vector<TrajectoryLog>& logs, double threshold) {
    if (logs.empty()) throw ValueError("compute_metrics: no trajectories");
    if (!(threshold > 0.0) || !std::isfinite(threshold))
        throw ConfigError("compute_metrics: threshold must be positive and finite");

    MetricsSummary out;
    out.threshold = threshold;
    std::vector<double> mins, maxs, finals, steps;
    for (const TrajectoryLog& log : logs) {
        const std::vector<double>& series = log.rms_series;
        if (series.empty()) throw ValueError("compute_metrics: trajectory with empty rms series");
        TrajectoryMetrics m;
        m.min_rms = *std::min_element(series.begin(), series.end());
        m.max_rms = *std::max_element(series.begin(), series.end());
        m.final_rms = series.back();
        for (std::size_t i = 0; i < series.size(); ++i) {
            if (series[i] <= threshold) {
                m.steps_to_threshold = static_cast<long>(i);
                break;
            }
        }
        mins.push_back(m.min_rms);
        maxs.push_back(m.max_rms);
        finals.push_back(m.final_rms);
        if (m.steps_to_threshold >= 0) steps.push_back(static_cast<double>(m.steps_to_threshold));
        out.per_trajectory.push_back(m);
    }

    std::tie(out.min_rms_mean, out.min_rms_std) = mean_std(mins);
    std::tie(out.max_rms_mean, out.max_rms_std) = mean_std(maxs);
    std::tie(out.final_rms_mean, out.final_rms_std) = mean_std(finals);
    if (!steps.empty()) std::tie(out.steps_mean, out.steps_std) = mean_std(steps);
    out.reach_fraction = static_cast<double>(steps.size()) / static_cast<double>(logs.size());
    return out;
}

ExperimentArtifacts run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const int dim = cfg.env.dim;

    // One ring per campaign: the machine is fixed, only the per-trajectory
    // noise/reset streams differ. Seed derivation matches RingEnv's internal
    // convention (drift target drawn from seed + 1).
    const Mat r_a = generate_orm(dim, cfg.env.cond_number, cfg.env.seed);
    const Mat r_b = perturb_orm(r_a, cfg.env.drift_fraction, cfg.env.seed + 1);

    // Controller setup is paid once; trajectories reuse the result.
    std::optional<SvdController> svd_ctrl;
    std::optional<PolicyController> supervised_ctrl;
    MlpParams mbrl_policy;
    switch (cfg.controller) {
        case ControllerKind::svd:
            svd_ctrl.emplace(r_a, cfg.svd.lambda, cfg.svd.gain);
            break;
        case ControllerKind::supervised: {
            const SupervisedSpec& s = cfg.supervised;
            MlpParams net;
            if (!s.checkpoint.empty()) {
                net = load_checkpoint(s.checkpoint);
            } else {
                LabeledDataset data;
                switch (s.recipe) {
                    case DatasetProvenance::archive:
                        data = ingest_dataset(s.dataset_path);
                        break;
                    case DatasetProvenance::svd_labels: {
                        // Resolve an unset ridge weight through the controller
                        // so the default lives in one place.
                        const double lambda = SvdController(r_a, s.label_lambda).lambda();
                        data = gen_dataset_svd_labels(cfg.env, r_a, lambda, s.dataset_size,
                                                      cfg.env.seed + 606000);
                        break;
                    }
                    case DatasetProvenance::forward_random: {
                        RingEnv data_env(cfg.env, r_a, r_b);
                        data = gen_dataset_forward(data_env, s.excitation_sigma, s.dataset_size,
                                                   cfg.env.seed + 606000);
                        break;
                    }
                }
                if (data.dim() != dim)
                    throw DimensionError(
                        "run_experiment: dataset dimension does not match the environment");
                std::vector<int> layers;
                layers.push_back(dim);
                layers.insert(layers.end(), s.hidden_layers.begin(), s.hidden_layers.end());
                layers.push_back(dim);
                net = mlp_init(layers, cfg.env.seed + 404000);
                AdamState st = adam_init(net, s.lr);
                train_supervised(net, data, s.epochs, s.batch_size, st, cfg.env.seed + 505000,
                                 s.action_scale);
            }
            if (net.in_dim() != dim || net.out_dim() != dim)
                throw DimensionError(
                    "run_experiment: supervised network does not match the environment");
            supervised_ctrl.emplace(std::move(net), s.action_scale, s.gain);
            break;
        }
        case ControllerKind::mbrl: {
            if (!cfg.mbrl.checkpoint.empty()) {
                mbrl_policy = load_checkpoint(cfg.mbrl.checkpoint);
            } else {
                mbrl_policy = pretrain_policy(r_a, cfg.env, cfg.mbrl.pretrain);
            }
            if (mbrl_policy.in_dim() != dim || mbrl_policy.out_dim() != dim)
                throw DimensionError(
                    "run_experiment: mbrl policy does not match the environment");
            break;
        }
    }

    // Independent trajectories, executed and aggregated in index order.
    std::vector<TrajectoryLog> logs;
    logs.reserve(static_cast<std::size_t>(cfg.n_trajectories));
    std::vector<std::vector<RefitEvent>> events(static_cast<std::size_t>(cfg.n_trajectories));
    for (int t = 0; t < cfg.n_trajectories; ++t) {
        EnvConfig ec = cfg.env;
        ec.seed = cfg.env.seed + 1000003ull * static_cast<std::uint64_t>(t + 1);
        RingEnv env(ec, r_a, r_b);
        if (cfg.controller == ControllerKind::mbrl) {
            AdaptiveConfig ac = cfg.mbrl.adaptive;
            ac.seed = ec.seed;
            AdaptiveResult res =
                adaptive_loop(env, mbrl_policy, r_a, ac, cfg.trajectory_length);
            logs.push_back(std::move(res.log));
            events[static_cast<std::size_t>(t)] = std::move(res.events);
        } else {
            Controller& ctrl =
                svd_ctrl ? static_cast<Controller&>(*svd_ctrl) : *supervised_ctrl;
            Vec obs = env.reset();
            for (long k = 0; k < cfg.trajectory_length; ++k) obs = env.step(ctrl.act(obs));
            logs.push_back(env.log());
        }
    }

    ExperimentArtifacts out;
    out.summary = compute_metrics(logs, cfg.rms_threshold);

    for (int t = 0; t < cfg.n_trajectories; ++t) {
        const std::string path = join_path(cfg.out_dir, indexed_name("trajectory", t));
        write_trajectory_csv(path, logs[static_cast<std::size_t>(t)], dim);
        out.trajectory_csvs.push_back(path);
        if (cfg.controller == ControllerKind::mbrl) {
            const std::string event_path = join_path(cfg.out_dir, indexed_name("events", t));
            write_event_log(event_path, events[static_cast<std::size_t>(t)]);
            out.event_csvs.push_back(event_path);
        }
    }

    // Per-step mean/std of the observed RMS across trajectories.
    out.rms_curve_csv = join_path(cfg.out_dir, "rms_curve.csv");
    {
        std::ofstream curve(out.rms_curve_csv);
        if (!curve) throw Error("run_experiment: cannot open " + out.rms_curve_csv);
        curve << "step,mean_rms,std_rms\n";
        const std::size_t rows = logs.front().rms_series.size();
        std::vector<double> column(logs.size());
        std::string line;
        for (std::size_t k = 0; k < rows; ++k) {
            for (std::size_t t = 0; t < logs.size(); ++t) column[t] = logs[t].rms_series[k];
            const auto [mean, std] = mean_std(column);
            line.clear();
            line += std::to_string(k);
            line += ',';
            format_value(line, mean);
            line += ',';
            format_value(line, std);
            curve << line << "\n";
        }
        if (!curve) throw Error("run_experiment: write failed for " + out.rms_curve_csv);
    }

    out.summary_csv = join_path(cfg.out_dir, "summary.csv");
    write_summary_csv(out.summary_csv, out.summary);
    return out;
}

void write_summary_csv(const std::string& path, const MetricsSummary& s) {
    std::ofstream out(path);
    if (!out) throw Error("write_summary_csv: cannot open " + path);
    out << "threshold,n_trajectories,min_rms_mean,min_rms_std,max_rms_mean,max_rms_std,"
           "final_rms_mean,final_rms_std,steps_mean,steps_std,reach_fraction\n";
    std::string line;
    format_value(line, s.threshold);
    line += ',';
    line += std::to_string(s.n_trajectories());
    for (double v : {s.min_rms_mean, s.min_rms_std, s.max_rms_mean, s.max_rms_std,
                     s.final_rms_mean, s.final_rms_std, s.steps_mean, s.steps_std,
                     s.reach_fraction}) {
        line += ',';
        format_value(line, v);
    }
    out << line << "\n";
    out << "trajectory,min_rms,max_rms,final_rms,steps_to_threshold\n";
    for (std::size_t t = 0; t < s.per_trajectory.size(); ++t) {
        const TrajectoryMetrics& m = s.per_trajectory[t];
        line.clear();
        line += std::to_string(t);
        line += ',';
        format_value(line, m.min_rms);
        line += ',';
        format_value(line, m.max_rms);
        line += ',';
        format_value(line, m.final_rms);
        line += ',';
        line += std::to_string(m.steps_to_threshold);
        out << line << "\n";
    }
    if (!out) throw Error("write_summary_csv: write failed for " + path);
}

MetricsSummary read_summary_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_summary_csv: cannot open " + path);
    const std::string context = "read_summary_csv: " + path;
    std::string line;
    if (!std::getline(in, line) || line.rfind("threshold,", 0) != 0)
        throw ParseError(context + ": missing aggregate header");
    if (!std::getline(in, line)) throw ParseError(context + ": missing aggregate row");

    MetricsSummary s;
    int n = 0;
    {
        std::stringstream ss(line);
        s.threshold = parse_field(ss, context);
        n = static_cast<int>(parse_field(ss, context));
        s.min_rms_mean = parse_field(ss, context);
        s.min_rms_std = parse_field(ss, context);
        s.max_rms_mean = parse_field(ss, context);
        s.max_rms_std = parse_field(ss, context);
        s.final_rms_mean = parse_field(ss, context);
        s.final_rms_std = parse_field(ss, context);
        s.steps_mean = parse_field(ss, context);
        s.steps_std = parse_field(ss, context);
        s.reach_fraction = parse_field(ss, context);
    }
    if (n < 0) throw ParseError(context + ": negative trajectory count");
    if (!std::getline(in, line) || line.rfind("trajectory,", 0) != 0)
        throw ParseError(context + ": missing per-trajectory header");
    for (int t = 0; t < n; ++t) {
        if (!std::getline(in, line)) throw ParseError(context + ": missing trajectory row");
        std::stringstream ss(line);
        if (static_cast<int>(parse_field(ss, context)) != t)
            throw ParseError(context + ": trajectory rows out of order");
        TrajectoryMetrics m;
        m.min_rms = parse_field(ss, context);
        m.max_rms = parse_field(ss, context);
        m.final_rms = parse_field(ss, context);
        m.steps_to_threshold = static_cast<long>(parse_field(ss, context));
        s.per_trajectory.push_back(m);
    }
    return s;
}

namespace {

std::string rms_cell(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.5e +- %.1e", mean, std);
    return buf;
}

std::string steps_cell(const MetricsSummary& s) {
    if (s.reach_fraction == 0.0) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "N/A (0/%d)", s.n_trajectories());
        return buf;
    }
    const int reached =
        static_cast<int>(std::lround(s.reach_fraction * s.n_trajectories()));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +- %.2f (%d/%d)", s.steps_mean, s.steps_std, reached,
                  s.n_trajectories());
    return buf;
}

}  // namespace

void compare_report(std::ostream& out, const std::vector<NamedSummary>& rows) {
    if (rows.empty()) throw ValueError("compare_report: no summaries");

    // Best (lowest-mean) entry per column; steps only among methods that
    // reached the threshold at all.
    std::size_t best_min = 0, best_max = 0, best_final = 0;
    std::size_t best_steps = rows.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MetricsSummary& s = rows[i].summary;
        if (s.min_rms_mean < rows[best_min].summary.min_rms_mean) best_min = i;
        if (s.max_rms_mean < rows[best_max].summary.max_rms_mean) best_max = i;
        if (s.final_rms_mean < rows[best_final].summary.final_rms_mean) best_final = i;
        if (s.reach_fraction > 0.0 &&
            (best_steps == rows.size() || s.steps_mean < rows[best_steps].summary.steps_mean))
            best_steps = i;
    }

    char steps_header[48];
    std::snprintf(steps_header, sizeof(steps_header), "steps to %g", rows[0].summary.threshold);
    const std::vector<std::string> headers = {"method", "best rms", "worst rms", "final rms",
                                              steps_header};
    std::vector<std::vector<std::string>> cells;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MetricsSummary& s = rows[i].summary;
        auto mark = [&](std::size_t best, std::string cell) {
            return (i == best ? "* " : "  ") + cell;
        };
        cells.push_back({rows[i].name, mark(best_min, rms_cell(s.min_rms_mean, s.min_rms_std)),
                         mark(best_max, rms_cell(s.max_rms_mean, s.max_rms_std)),
                         mark(best_final, rms_cell(s.final_rms_mean, s.final_rms_std)),
                         mark(best_steps, steps_cell(s))});
    }

    std::vector<std::size_t> widths;
    for (std::size_t c = 0; c < headers.size(); ++c) {
        std::size_t w = headers[c].size();
        for (const auto& row : cells) w = std::max(w, row[c].size());
        widths.push_back(w);
    }
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << row[c];
            if (c + 1 < row.size())
                out << std::string(widths[c] - row[c].size() + 2, ' ');
        }
        out << "\n";
    };
    emit_row(headers);
    for (const auto& row : cells) emit_row(row);
}

void compare_report(const std::string& path, const std::vector<NamedSummary>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("compare_report: cannot open " + path);
    compare_report(out, rows);
    if (!out) throw Error("compare_report: write failed for " + path);
}

}  // namespace orbit
