#pragma once

#include "iti/activations.hpp"
#include "iti/common.hpp"
#include "iti/data.hpp"
#include "iti/probing.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iti {

enum class DirectionMethod { probe_weight, mass_mean, ccs, random };

std::string_view to_string(DirectionMethod method);
DirectionMethod parse_direction_method(std::string_view name);

struct Direction {
    std::vector<double> vector; // unit norm; empty when it could not be computed
    DirectionMethod method = DirectionMethod::mass_mean;
    double sigma = 0.0;
    std::string error;
};

// normalize(mean(x | y=1) - mean(x | y=0))
std::vector<double> mass_mean_direction(const FeatureMatrix & x, std::span<const int> y);

std::vector<double> probe_weight_direction(const Probe & probe);

// Uniform on the unit sphere.
std::vector<double> random_direction(int dim, std::uint64_t seed);

struct CcsSettings {
    int restarts = 10;
    int iterations = 1000;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
    // best loss above this is reported as low confidence (0.25 is the loss of
    // the constant p = 0.5 solution)
    double low_confidence_loss = 0.15;
};

struct CcsResult {
    std::vector<double> direction;     // after label-based sign resolution
    std::vector<double> raw_direction; // as optimized, before sign resolution
    double loss = 0.0;
    int best_restart = 0;
    bool sign_flipped = false;
    bool low_confidence = false;
};

// Contrast-consistent search over paired activations. Pair order is hidden
// from the optimizer by a seeded per-pair swap; labels are used only to pick
// the sign so that true activations project higher than false ones.
CcsResult ccs_direction(const FeatureMatrix & true_acts, const FeatureMatrix & false_acts, const CcsSettings & settings = {});

// Population standard deviation of <x, direction> over the given records.
double estimate_sigma(const ActivationDataset & ds, HeadId head, std::span<const double> direction,
                      std::span<const std::size_t> records);

// Over train + validation records of the development set.
double estimate_sigma(const ActivationDataset & ds, HeadId head, std::span<const double> direction, const SplitPlan & plan,
                      std::optional<int> held_out);

struct DirectionSet {
    int n_layers = 0;
    int n_heads = 0;
    int head_dim = 0;
    DirectionMethod method = DirectionMethod::mass_mean;
    std::vector<Direction> heads; // layer-major
    std::map<std::string, std::string> provenance;

    const Direction & at(HeadId h) const { return heads[static_cast<std::size_t>(h.layer) * n_heads + h.head]; }
    Direction & at(HeadId h) { return heads[static_cast<std::size_t>(h.layer) * n_heads + h.head]; }
};

struct DirectionOptions {
    DirectionMethod method = DirectionMethod::mass_mean;
    std::uint64_t seed = 0;
    CcsSettings ccs;
};

// Directions and sigmas for every head, fitted on the development set of
// held_out (all folds when empty). probe_weight uses probes from the train split.
DirectionSet compute_directions(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out,
                                const DirectionOptions & options, const HeadProbes * probes = nullptr);

// Same, restricted to an explicit development record set.
DirectionSet compute_directions_on(const ActivationDataset & ds, const DevelopmentRecords & dev, const DirectionOptions & options,
                                   const HeadProbes * probes = nullptr);

std::string directions_to_json(const DirectionSet & set);
DirectionSet directions_from_json(const std::string & text);

} // namespace iti
