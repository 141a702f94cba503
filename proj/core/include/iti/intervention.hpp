#pragma once

#include "iti/directions.hpp"
#include "iti/model.hpp"
#include "iti/probing.hpp"
#include "iti/spec.hpp"

namespace iti {

// Spec holding exactly the selected heads. Point-wise selections keep only the
// selected coordinates of each head's direction, renormalized, with the
// head's sigma unchanged.
InterventionSpec build_spec(const HeadSelection & selection, const DirectionSet & directions, double alpha);

// Per-layer stream vector alpha * sum_h Q_l^h (sigma_l^h theta_l^h), hidden_dim floats.
std::vector<float> layer_bias_delta(const Model & model, const InterventionSpec & spec, int layer);

// Copy of model with the intervention folded into each layer's output-projection bias.
Model bake_bias(const Model & model, const InterventionSpec & spec);

} // namespace iti
