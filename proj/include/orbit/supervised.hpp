#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/env.hpp"
#include "orbit/mlp.hpp"

namespace orbit {

enum class DatasetProvenance { archive, svd_labels, forward_random };

// State/action pairs for supervised policy training.
struct LabeledDataset {
    std::vector<Vec> states;
    std::vector<Vec> actions;
    DatasetProvenance provenance = DatasetProvenance::archive;

    std::size_t size() const { return states.size(); }
    int dim() const;
    void validate() const;
};

// States drawn like environment resets (std init_rms), labeled by the
// spectral controller built on r_nominal with the given lambda.
LabeledDataset gen_dataset_svd_labels(const EnvConfig& env_config, const Mat& r_nominal,
                                      double lambda, int n, std::uint64_t seed);

// Random Gaussian excitations applied to the running environment; each
// resulting state is labeled with the negated action that produced it.
LabeledDataset gen_dataset_forward(RingEnv& env, double action_sigma, int n, std::uint64_t seed);

LabeledDataset ingest_dataset(const std::string& path);
LabeledDataset read_dataset_csv(std::istream& in, const std::string& context);
void write_dataset_csv(const std::string& path, const LabeledDataset& d);
void write_dataset_csv(std::ostream& out, const LabeledDataset& d);

// Minibatch MSE regression of the policy output toward action / action_scale.
// Shuffles per epoch (seeded), updates p and st in place, and returns the
// per-epoch mean loss measured in scaled units.
std::vector<double> train_supervised(MlpParams& p, const LabeledDataset& d, int epochs,
                                     int batch_size, AdamState& st, std::uint64_t seed,
                                     double action_scale = 1.0);

}  // namespace orbit
