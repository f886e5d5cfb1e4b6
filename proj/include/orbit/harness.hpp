#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/env.hpp"
#include "orbit/mbrl.hpp"
#include "orbit/supervised.hpp"

namespace orbit {

enum class ControllerKind { svd, supervised, mbrl };

const char* controller_kind_name(ControllerKind k);

/// Spectral controller arm: frozen ridge/SVD feedback on the nominal ORM.
struct SvdSpec {
    // Ridge weight; unset selects the SvdController default (1e-4 * sigma_1^2).
    std::optional<double> lambda;
    double gain = 1.0;
};

/// Supervised-policy arm: train a network on labeled pairs once per campaign,
/// then run it frozen on every trajectory.
struct SupervisedSpec {
    DatasetProvenance recipe = DatasetProvenance::svd_labels;
    std::string dataset_path;  // archive recipe: CSV of state/action pairs
    int dataset_size = 8000;   // generated recipes: number of pairs
    // svd_labels recipe: ridge weight for the labeling controller; unset
    // selects the SvdController default.
    std::optional<double> label_lambda;
    double excitation_sigma = 0.01;  // forward_random recipe: action std
    int epochs = 40;
    int batch_size = 64;
    double lr = 1e-3;
    double action_scale = 1.0;
    double gain = 1.0;
    std::vector<int> hidden_layers = {512, 512, 512};
    // Pretrained checkpoint; when set, training is skipped entirely and the
    // dataset fields are ignored.
    std::string checkpoint;
};

/// Adaptive model-based arm: pretrained policy plus the online
/// refit-and-retrain loop.
struct MbrlSpec {
    AdaptiveConfig adaptive;  // per-trajectory seed is derived by the harness
    PretrainConfig pretrain;
    // Pretrained checkpoint; when set, pretraining is skipped.
    std::string checkpoint;
};

struct ExperimentConfig {
    EnvConfig env;  // env.seed doubles as the campaign master seed
    ControllerKind controller = ControllerKind::svd;
    SvdSpec svd;
    SupervisedSpec supervised;
    MbrlSpec mbrl;
    int n_trajectories = 20;
    long trajectory_length = 2000;
    double rms_threshold = 0.05;
    std::string out_dir = ".";

    void validate() const;
};

struct TrajectoryMetrics {
    double min_rms = 0.0;
    double max_rms = 0.0;
    double final_rms = 0.0;
    long steps_to_threshold = -1;  // first step index with rms <= threshold; -1 = never
};

struct MetricsSummary {
    double threshold = 0.05;
    double min_rms_mean = 0.0, min_rms_std = 0.0;
    double max_rms_mean = 0.0, max_rms_std = 0.0;
    double final_rms_mean = 0.0, final_rms_std = 0.0;
    // Aggregated over the trajectories that reached the threshold only;
    // meaningless (0) when reach_fraction is 0.
    double steps_mean = 0.0, steps_std = 0.0;
    double reach_fraction = 0.0;
    std::vector<TrajectoryMetrics> per_trajectory;

    int n_trajectories() const { return static_cast<int>(per_trajectory.size()); }
};

/// Per-trajectory min/max/final of the observed RMS series and the first step
/// index at which it crosses the threshold, aggregated as means and sample
/// stds across trajectories. Throws ValueError on empty input.
MetricsSummary compute_metrics(const std::vector<TrajectoryLog>& logs, double threshold);

struct ExperimentArtifacts {
    MetricsSummary summary;
    std::string rms_curve_csv;
    std::string summary_csv;
    std::vector<std::string> trajectory_csvs;
    std::vector<std::string> event_csvs;  // mbrl arm only, one per trajectory
};

/// Runs the configured campaign: one shared ring (R_A, R_B drawn from the
/// master seed), controller setup paid once, then n_trajectories independent
/// trajectories on fresh environments whose per-trajectory seeds are derived
/// from the master seed, each experiencing the drift schedule from t = 0.
/// Writes per-step mean/std RMS, per-trajectory CSVs, the summary CSV, and
/// (for the mbrl arm) per-trajectory refit event logs under cfg.out_dir.
ExperimentArtifacts run_experiment(const ExperimentConfig& cfg);

void write_summary_csv(const std::string& path, const MetricsSummary& summary);
MetricsSummary read_summary_csv(const std::string& path);

struct NamedSummary {
    std::string name;
    MetricsSummary summary;
};

/// Renders the comparison table: one row per method with best/worst/final RMS
/// (mean +/- std) and steps-to-threshold columns; the best value in each
/// column is starred, and a method that never reaches the threshold renders
/// its steps column as N/A.
void compare_report(std::ostream& out, const std::vector<NamedSummary>& rows);
void compare_report(const std::string& path, const std::vector<NamedSummary>& rows);

}  // namespace orbit
