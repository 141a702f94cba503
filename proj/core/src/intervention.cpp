#include "iti/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace iti {

namespace {

std::string head_name(HeadId h) {
    return "(" + std::to_string(h.layer) + "," + std::to_string(h.head) + ")";
}

const Direction & require_direction(const DirectionSet & dirs, HeadId h) {
    if (h.layer < 0 || h.layer >= dirs.n_layers || h.head < 0 || h.head >= dirs.n_heads) {
        throw std::invalid_argument("build_spec: head " + head_name(h) + " outside direction set");
    }
    const auto & d = dirs.at(h);
    if (d.vector.empty()) {
        throw std::invalid_argument("build_spec: missing direction for selected head " + head_name(h) +
                                    (d.error.empty() ? "" : ": " + d.error));
    }
    return d;
}

} // namespace

InterventionSpec build_spec(const HeadSelection & selection, const DirectionSet & directions, double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("build_spec: alpha must be finite and >= 0");
    }
    InterventionSpec spec;
    spec.alpha = alpha;
    spec.selector = selection.kind;
    spec.provenance["direction_method"] = std::string(to_string(directions.method));
    for (const auto & [k, v] : directions.provenance) {
        spec.provenance["directions." + k] = v;
    }

    if (selection.kind == SelectorKind::point_wise) {
        const std::size_t D = static_cast<std::size_t>(directions.head_dim);
        std::map<HeadId, std::vector<std::uint8_t>> masks;
        for (auto c : selection.coordinates) {
            const auto flat_head = static_cast<int>(c / D);
            const HeadId h{flat_head / directions.n_heads, flat_head % directions.n_heads};
            auto & m = masks[h];
            m.resize(D, 0);
            m[c % D] = 1;
        }
        for (auto & [h, mask] : masks) {
            const auto & d = require_direction(directions, h);
            SpecEntry e;
            e.head = h;
            e.sigma = d.sigma;
            e.direction.assign(D, 0.0);
            for (std::size_t j = 0; j < D; ++j) {
                if (mask[j]) e.direction[j] = d.vector[j];
            }
            const double n = norm2(e.direction);
            if (n == 0.0) {
                throw std::invalid_argument("build_spec: direction of head " + head_name(h) + " vanishes on its coordinate mask");
            }
            for (auto & v : e.direction) v /= n;
            e.mask = std::move(mask);
            spec.entries.push_back(std::move(e));
        }
    } else {
        for (const auto & h : selection.heads) {
            const auto & d = require_direction(directions, h);
            spec.entries.push_back({h, d.vector, d.sigma, {}});
        }
        std::sort(spec.entries.begin(), spec.entries.end(), [](const SpecEntry & a, const SpecEntry & b) { return a.head < b.head; });
        for (std::size_t i = 1; i < spec.entries.size(); ++i) {
            if (spec.entries[i - 1].head == spec.entries[i].head) {
                throw std::invalid_argument("build_spec: duplicate head " + head_name(spec.entries[i].head));
            }
        }
    }
    spec.validate(directions.n_layers, directions.n_heads, directions.head_dim);
    return spec;
}

std::vector<float> layer_bias_delta(const Model & model, const InterventionSpec & spec, int layer) {
    const auto & c = model.config;
    std::vector<double> acc(c.hidden_dim, 0.0);
    const auto shift = spec.layer_shift(layer, c.n_heads, c.head_dim);
    for (const auto & e : spec.entries) {
        if (e.head.layer != layer) continue;
        model.add_head_output(layer, e.head.head,
                              std::span(shift.data() + static_cast<std::size_t>(e.head.head) * c.head_dim, c.head_dim), acc);
    }
    return {acc.begin(), acc.end()};
}

Model bake_bias(const Model & model, const InterventionSpec & spec) {
    const auto & c = model.config;
    spec.validate(c.n_layers, c.n_heads, c.head_dim);
    Model out = model;
    if (spec.alpha == 0.0) {
        return out;
    }
    for (int l = 0; l < c.n_layers; ++l) {
        if (!spec.touches_layer(l)) continue;
        const auto delta = layer_bias_delta(model, spec, l);
        auto & bias = out.layers[l].out_bias;
        for (int i = 0; i < c.hidden_dim; ++i) {
            bias[i] += delta[i];
        }
    }
    return out;
}

} // namespace iti
