#pragma once

#include "iti/activations.hpp"
#include "iti/common.hpp"
#include "iti/data.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iti {

// Dense row-major matrix of probe inputs.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

struct ProbeSettings {
    double l2 = 1e-3;
    double grad_tol = 1e-6;
    int max_iter = 2000;
    double initial_step = 1.0;
};

// Logistic probe p(x) = sigmoid(<theta, x> + intercept). For the concatenated
// probe theta lives in standardized coordinates described by feature_mean and
// feature_scale.
struct Probe {
    std::vector<double> theta;
    double intercept = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;

    double logit(std::span<const double> x) const;
    double predict_proba(std::span<const double> x) const;
};

// Fraction of rows classified correctly at threshold 0.5; p == 0.5 counts as wrong.
double probe_accuracy(const Probe & probe, const FeatureMatrix & x, std::span<const int> y);

// Full-batch gradient descent with backtracking on L2-regularized logistic
// loss (intercept unregularized). When val_x is null val_accuracy mirrors
// train_accuracy.
Probe train_probe(const FeatureMatrix & train_x, std::span<const int> train_y, const FeatureMatrix * val_x,
                  std::span<const int> val_y, const ProbeSettings & settings = {});

// Second probe restricted to the hyperplane orthogonal to first.theta.
Probe train_orthogonal_probe(const FeatureMatrix & train_x, std::span<const int> train_y, const FeatureMatrix * val_x,
                             std::span<const int> val_y, const Probe & first, const ProbeSettings & settings = {});

struct HeadAccuracyMatrix {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> values; // layer-major

    double at(int layer, int head) const { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
    double & at(int layer, int head) { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
};

struct HeadProbes {
    HeadAccuracyMatrix accuracy;
    std::vector<std::optional<Probe>> probes; // layer-major; empty where training failed
    std::vector<std::string> errors;          // parallel to probes; empty string when ok

    const std::optional<Probe> & at(int layer, int head) const {
        return probes[static_cast<std::size_t>(layer) * accuracy.n_heads + head];
    }
};

struct HeadSelection {
    SelectorKind kind = SelectorKind::head_wise;
    std::vector<HeadId> heads;             // head_wise / all_heads, ranked
    std::vector<std::size_t> coordinates;  // point_wise: flat (layer, head, dim) indices
};

FeatureMatrix head_features(const ActivationDataset & ds, std::span<const std::size_t> records, int layer, int head);
std::vector<int> record_labels(const ActivationDataset & ds, std::span<const std::size_t> records);

// Train and validation record indices for the development set of a fold
// (every fold when held_out is empty).
struct DevelopmentRecords {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> all() const;
};
DevelopmentRecords development_records(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out);

HeadProbes probe_all_heads(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out = {},
                           const ProbeSettings & settings = {});
HeadProbes probe_all_heads_on(const ActivationDataset & ds, const DevelopmentRecords & dev, const ProbeSettings & settings = {});

// Top-k heads by accuracy; ties go to the lower (layer, head).
HeadSelection select_heads(const HeadAccuracyMatrix & matrix, int k);

// Every head, ranked as select_heads would rank them.
HeadSelection select_all_heads(const HeadAccuracyMatrix & matrix);

struct ConcatProbeResult {
    Probe probe;
    HeadSelection selection; // point_wise, k * head_dim coordinates
};

// One probe over all heads' activations concatenated (z-scored with train
// statistics); coordinates ranked by |theta|.
ConcatProbeResult train_concat_probe(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out, int k,
                                     const ProbeSettings & settings = {});
ConcatProbeResult train_concat_probe_on(const ActivationDataset & ds, const DevelopmentRecords & dev, int k,
                                        const ProbeSettings & settings = {});

std::string head_probes_to_json(const HeadProbes & probes);

} // namespace iti
