#include "orbit/supervised.hpp"

#include <fstream>
#include <sstream>

#include "orbit/controllers.hpp"

namespace orbit {

namespace {

constexpr std::uint64_t kStreamSvdLabelStates = 606;
constexpr std::uint64_t kStreamForwardActions = 707;
constexpr std::uint64_t kStreamShuffle = 505;

}  // namespace

int LabeledDataset::dim() const {
    if (states.empty()) throw ValueError("LabeledDataset::dim: dataset is empty");
    return static_cast<int>(states.front().size());
}

void LabeledDataset::validate() const {
    if (states.size() != actions.size())
        throw DimensionError("LabeledDataset: state and action counts differ");
    if (states.empty()) return;
    const Eigen::Index d = states.front().size();
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i].size() != d || actions[i].size() != d)
            throw DimensionError("LabeledDataset: inconsistent pair dimensions at index " +
                                 std::to_string(i));
    }
}

LabeledDataset gen_dataset_svd_labels(const EnvConfig& env_config, const Mat& r_nominal,
                                      double lambda, int n, std::uint64_t seed) {
    env_config.validate();
    if (n < 1) throw ConfigError("gen_dataset_svd_labels: n must be >= 1");
    if (r_nominal.rows() != env_config.dim || r_nominal.cols() != env_config.dim)
        throw DimensionError("gen_dataset_svd_labels: ORM shape does not match configured dim");
    SvdController labeler(r_nominal, lambda);
    Rng rng = make_rng(seed, kStreamSvdLabelStates);
    LabeledDataset d;
    d.provenance = DatasetProvenance::svd_labels;
    d.states.reserve(static_cast<std::size_t>(n));
    d.actions.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Vec s = gaussian_vector(env_config.dim, env_config.init_rms, rng);
        d.actions.push_back(labeler.act(s));
        d.states.push_back(std::move(s));
    }
    return d;
}

LabeledDataset gen_dataset_forward(RingEnv& env, double action_sigma, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("gen_dataset_forward: n must be >= 1");
    if (!(action_sigma > 0.0)) throw ConfigError("gen_dataset_forward: action_sigma must be > 0");
    Rng rng = make_rng(seed, kStreamForwardActions);
    const int dim = env.config().dim;
    LabeledDataset d;
    d.provenance = DatasetProvenance::forward_random;
    d.states.reserve(static_cast<std::size_t>(n));
    d.actions.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Vec a = gaussian_vector(dim, action_sigma, rng);
        d.states.push_back(env.step(a));
        d.actions.push_back(-a);
    }
    return d;
}

LabeledDataset read_dataset_csv(std::istream& in, const std::string& context) {
    std::string line;
    if (!std::getline(in, line))
        throw ParseError(context + ":1: missing dataset header");
    int dim = 0;
    try {
        std::size_t pos = 0;
        dim = std::stoi(line, &pos);
        if (pos != line.size() || dim < 1) throw std::invalid_argument("bad dim");
    } catch (const std::exception&) {
        throw ParseError(context + ":1: header must be a positive integer dimension");
    }
    LabeledDataset d;
    d.provenance = DatasetProvenance::archive;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(2 * dim));
        std::stringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t pos = 0;
                values.push_back(std::stod(cell, &pos));
                if (pos != cell.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ParseError(context + ":" + std::to_string(line_no) + ": bad value '" +
                                 cell + "'");
            }
        }
        if (values.size() != static_cast<std::size_t>(2 * dim))
            throw ParseError(context + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(2 * dim) + " values, found " +
                             std::to_string(values.size()));
        Vec s(dim), a(dim);
        for (int i = 0; i < dim; ++i) {
            s(i) = values[static_cast<std::size_t>(i)];
            a(i) = values[static_cast<std::size_t>(dim + i)];
        }
        d.states.push_back(std::move(s));
        d.actions.push_back(std::move(a));
    }
    return d;
}

LabeledDataset ingest_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("ingest_dataset: cannot open '" + path + "'");
    return read_dataset_csv(in, path);
}

void write_dataset_csv(std::ostream& out, const LabeledDataset& d) {
    d.validate();
    const int dim = d.states.empty() ? 0 : static_cast<int>(d.states.front().size());
    if (dim < 1) throw ValueError("write_dataset_csv: dataset is empty");
    std::string buffer = std::to_string(dim);
    buffer.push_back('\n');
    for (std::size_t k = 0; k < d.states.size(); ++k) {
        for (int i = 0; i < dim; ++i) {
            if (i > 0) buffer.push_back(',');
            format_value(buffer, d.states[k](i));
        }
        for (int i = 0; i < dim; ++i) {
            buffer.push_back(',');
            format_value(buffer, d.actions[k](i));
        }
        buffer.push_back('\n');
    }
    out << buffer;
}

void write_dataset_csv(const std::string& path, const LabeledDataset& d) {
    std::ofstream out(path);
    if (!out) throw ParseError("write_dataset_csv: cannot open '" + path + "'");
    write_dataset_csv(out, d);
    if (!out) throw ParseError("write_dataset_csv: failed writing '" + path + "'");
}

std::vector<double> train_supervised(MlpParams& p, const LabeledDataset& d, int epochs,
                                     int batch_size, AdamState& st, std::uint64_t seed,
                                     double action_scale) {
    d.validate();
    if (d.states.empty()) throw ValueError("train_supervised: dataset is empty");
    if (epochs < 0) throw ConfigError("train_supervised: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train_supervised: batch_size must be >= 1");
    if (!(action_scale > 0.0)) throw ConfigError("train_supervised: action_scale must be > 0");
    p.validate();
    if (p.in_dim() != d.states.front().size() || p.out_dim() != d.actions.front().size())
        throw DimensionError("train_supervised: dataset dimension does not match the network");

    Rng rng = make_rng(seed, kStreamShuffle);
    return train_regression(p, d.states, d.actions, epochs, batch_size, st, rng, action_scale);
}

}  // namespace orbit
