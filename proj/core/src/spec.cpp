#include "iti/spec.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

using json = nlohmann::json;

namespace iti {

bool InterventionSpec::is_noop() const {
    if (alpha == 0.0 || entries.empty()) {
        return true;
    }
    return std::all_of(entries.begin(), entries.end(), [](const SpecEntry & e) { return e.sigma == 0.0; });
}

const SpecEntry * InterventionSpec::find(HeadId head) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), head,
                               [](const SpecEntry & e, HeadId h) { return e.head < h; });
    if (it != entries.end() && it->head == head) {
        return &*it;
    }
    return nullptr;
}

bool InterventionSpec::touches_layer(int layer) const {
    return std::any_of(entries.begin(), entries.end(), [&](const SpecEntry & e) { return e.head.layer == layer; });
}

std::vector<float> InterventionSpec::layer_shift(int layer, int n_heads, int head_dim) const {
    std::vector<float> shift(static_cast<std::size_t>(n_heads) * head_dim, 0.0f);
    for (const auto & e : entries) {
        if (e.head.layer != layer) {
            continue;
        }
        const double scale = alpha * e.sigma;
        float * row = shift.data() + static_cast<std::size_t>(e.head.head) * head_dim;
        for (int d = 0; d < head_dim; ++d) {
            row[d] = static_cast<float>(scale * e.direction[d]);
        }
    }
    return shift;
}

void InterventionSpec::validate(int n_layers, int n_heads, int head_dim) const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("spec: alpha must be finite and >= 0");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto & e = entries[i];
        if (e.head.layer < 0 || e.head.layer >= n_layers || e.head.head < 0 || e.head.head >= n_heads) {
            throw std::invalid_argument("spec: head out of range");
        }
        if (i > 0 && !(entries[i - 1].head < e.head)) {
            throw std::invalid_argument("spec: entries must be sorted and unique");
        }
        if (static_cast<int>(e.direction.size()) != head_dim) {
            throw std::invalid_argument("spec: direction length does not match head_dim");
        }
        if (!(e.sigma >= 0.0) || !std::isfinite(e.sigma)) {
            throw std::invalid_argument("spec: sigma must be finite and >= 0");
        }
        const double n = norm2(e.direction);
        if (std::abs(n - 1.0) > 1e-6) {
            throw std::invalid_argument("spec: direction is not unit norm");
        }
        if (!e.mask.empty() && static_cast<int>(e.mask.size()) != head_dim) {
            throw std::invalid_argument("spec: mask length does not match head_dim");
        }
    }
}

std::vector<float> intervene_layer(std::span<const float> head_outputs, int layer, const InterventionSpec & spec,
                                   int n_heads, int head_dim) {
    if (head_outputs.size() != static_cast<std::size_t>(n_heads) * head_dim) {
        throw std::invalid_argument("intervene_layer: shape mismatch");
    }
    std::vector<float> out(head_outputs.begin(), head_outputs.end());
    if (spec.alpha == 0.0 || !spec.touches_layer(layer)) {
        return out;
    }
    const auto shift = spec.layer_shift(layer, n_heads, head_dim);
    add_shift_inplace(out, shift);
    return out;
}

void add_shift_inplace(std::span<float> head_outputs, std::span<const float> shift) {
    for (std::size_t i = 0; i < head_outputs.size(); ++i) {
        head_outputs[i] += shift[i];
    }
}

std::string spec_to_json(const InterventionSpec & spec) {
    json j;
    j["format"] = "iti-spec";
    j["version"] = 1;
    j["alpha"] = spec.alpha;
    j["selector"] = std::string(to_string(spec.selector));
    j["entries"] = json::array();
    for (const auto & e : spec.entries) {
        json je;
        je["layer"] = e.head.layer;
        je["head"] = e.head.head;
        je["sigma"] = e.sigma;
        je["direction"] = e.direction;
        if (!e.mask.empty()) {
            je["mask"] = e.mask;
        }
        j["entries"].push_back(std::move(je));
    }
    j["provenance"] = spec.provenance;
    return j.dump(2) + "\n";
}

InterventionSpec spec_from_json(const std::string & text) {
    InterventionSpec spec;
    try {
        const json j = json::parse(text);
        if (j.value("format", "") != "iti-spec") {
            throw std::runtime_error("not an intervention spec file");
        }
        if (j.at("version").get<int>() != 1) {
            throw std::runtime_error("unsupported spec version");
        }
        spec.alpha = j.at("alpha").get<double>();
        spec.selector = parse_selector(j.at("selector").get<std::string>());
        for (const auto & je : j.at("entries")) {
            SpecEntry e;
            e.head = {je.at("layer").get<int>(), je.at("head").get<int>()};
            e.sigma = je.at("sigma").get<double>();
            e.direction = je.at("direction").get<std::vector<double>>();
            if (je.contains("mask")) {
                e.mask = je.at("mask").get<std::vector<std::uint8_t>>();
            }
            spec.entries.push_back(std::move(e));
        }
        if (j.contains("provenance")) {
            spec.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
        }
    } catch (const json::exception & ex) {
        throw std::runtime_error(std::string("malformed spec: ") + ex.what());
    }
    return spec;
}

InterventionSpec load_spec(const std::filesystem::path & path) {
    return spec_from_json(read_file(path));
}

void save_spec(const InterventionSpec & spec, const std::filesystem::path & path) {
    write_file_atomic(path, spec_to_json(spec));
}

} // namespace iti
