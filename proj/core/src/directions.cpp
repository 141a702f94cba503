#include "iti/directions.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

using json = nlohmann::json;

namespace iti {

std::string_view to_string(DirectionMethod method) {
    switch (method) {
        case DirectionMethod::probe_weight: return "probe-weight";
        case DirectionMethod::mass_mean:    return "mass-mean";
        case DirectionMethod::ccs:          return "ccs";
        case DirectionMethod::random:       return "random";
    }
    return "mass-mean";
}

DirectionMethod parse_direction_method(std::string_view name) {
    if (name == "probe-weight" || name == "probe_weight") return DirectionMethod::probe_weight;
    if (name == "mass-mean" || name == "mass_mean") return DirectionMethod::mass_mean;
    if (name == "ccs") return DirectionMethod::ccs;
    if (name == "random") return DirectionMethod::random;
    throw std::invalid_argument("unknown direction method: " + std::string(name));
}

namespace {

std::vector<double> normalized(std::vector<double> v, const char * what) {
    const double n = norm2(v);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument(std::string(what) + ": zero-norm direction");
    }
    for (auto & x : v) x /= n;
    return v;
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace

std::vector<double> mass_mean_direction(const FeatureMatrix & x, std::span<const int> y) {
    if (x.rows != y.size()) {
        throw std::invalid_argument("mass_mean_direction: feature/label count mismatch");
    }
    std::vector<double> pos(x.cols, 0.0), neg(x.cols, 0.0);
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        auto & acc = y[i] == 1 ? pos : neg;
        (y[i] == 1 ? np : nn) += 1;
        const auto r = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) acc[j] += r[j];
    }
    if (np == 0 || nn == 0) {
        throw std::invalid_argument("mass_mean_direction: both classes must be present");
    }
    std::vector<double> diff(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) {
        diff[j] = pos[j] / static_cast<double>(np) - neg[j] / static_cast<double>(nn);
    }
    return normalized(std::move(diff), "mass_mean_direction");
}

std::vector<double> probe_weight_direction(const Probe & probe) {
    return normalized(probe.theta, "probe_weight_direction");
}

std::vector<double> random_direction(int dim, std::uint64_t seed) {
    if (dim < 1) {
        throw std::invalid_argument("random_direction: dim must be >= 1");
    }
    Rng rng(seed);
    std::vector<double> v(dim);
    double n = 0.0;
    while (n == 0.0) {
        for (auto & x : v) x = standard_normal(rng);
        n = norm2(v);
    }
    for (auto & x : v) x /= n;
    return v;
}

CcsResult ccs_direction(const FeatureMatrix & true_acts, const FeatureMatrix & false_acts, const CcsSettings & s) {
    const std::size_t n = true_acts.rows, d = true_acts.cols;
    if (false_acts.rows != n || false_acts.cols != d) {
        throw std::invalid_argument("ccs_direction: paired matrices differ in shape");
    }
    if (n < 2 || d == 0) {
        throw std::invalid_argument("ccs_direction: need at least two pairs");
    }
    bool any_distinct = false;
    for (std::size_t i = 0; i < n && !any_distinct; ++i) {
        const auto a = true_acts.row(i), b = false_acts.row(i);
        any_distinct = !std::equal(a.begin(), a.end(), b.begin());
    }
    if (!any_distinct) {
        throw std::invalid_argument("ccs_direction: every pair is degenerate (identical activations)");
    }

    // hide which member is true, then center each population
    Rng rng(s.seed);
    FeatureMatrix xa(n, d), xb(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const bool swap = (rng() >> 63) != 0;
        const auto t = true_acts.row(i), f = false_acts.row(i);
        std::copy(t.begin(), t.end(), (swap ? xb : xa).row(i).begin());
        std::copy(f.begin(), f.end(), (swap ? xa : xb).row(i).begin());
    }
    for (FeatureMatrix * m : {&xa, &xb}) {
        std::vector<double> mean(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = m->row(i);
            for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
        }
        for (auto & v : mean) v /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = m->row(i);
            for (std::size_t j = 0; j < d; ++j) r[j] -= mean[j];
        }
    }

    // loss and gradient for w = (theta, bias)
    std::vector<double> grad(d + 1);
    auto eval = [&](const std::vector<double> & w, bool want_grad) {
        double loss = 0.0;
        if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto a = xa.row(i), b = xb.row(i);
            double za = w[d], zb = w[d];
            for (std::size_t j = 0; j < d; ++j) {
                za += w[j] * a[j];
                zb += w[j] * b[j];
            }
            const double pa = sigmoid(za), pb = sigmoid(zb);
            const double c = pa + pb - 1.0;
            const double m = std::min(pa, pb);
            loss += c * c + m * m;
            if (want_grad) {
                double dpa = 2.0 * c, dpb = 2.0 * c;
                if (pa <= pb) dpa += 2.0 * m; else dpb += 2.0 * m;
                const double dza = dpa * pa * (1.0 - pa), dzb = dpb * pb * (1.0 - pb);
                for (std::size_t j = 0; j < d; ++j) grad[j] += dza * a[j] + dzb * b[j];
                grad[d] += dza + dzb;
            }
        }
        const double inv = 1.0 / static_cast<double>(n);
        if (want_grad) for (auto & g : grad) g *= inv;
        return loss * inv;
    };

    CcsResult best;
    best.loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_w;
    for (int r = 0; r < std::max(1, s.restarts); ++r) {
        std::vector<double> w(d + 1, 0.0), m1(d + 1, 0.0), m2(d + 1, 0.0);
        for (std::size_t j = 0; j < d; ++j) w[j] = standard_normal(rng) / std::sqrt(static_cast<double>(d));
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double b1t = 1.0, b2t = 1.0;
        for (int it = 0; it < s.iterations; ++it) {
            eval(w, true);
            b1t *= b1;
            b2t *= b2;
            for (std::size_t j = 0; j <= d; ++j) {
                m1[j] = b1 * m1[j] + (1 - b1) * grad[j];
                m2[j] = b2 * m2[j] + (1 - b2) * grad[j] * grad[j];
                w[j] -= s.learning_rate * (m1[j] / (1 - b1t)) / (std::sqrt(m2[j] / (1 - b2t)) + eps);
            }
        }
        const double loss = eval(w, false);
        if (loss < best.loss) {
            best.loss = loss;
            best.best_restart = r;
            best_w = w;
        }
    }

    std::vector<double> theta(best_w.begin(), best_w.begin() + static_cast<std::ptrdiff_t>(d));
    best.raw_direction = normalized(theta, "ccs_direction");
    best.direction = best.raw_direction;
    double mt = 0.0, mf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mt += dot(true_acts.row(i), best.direction);
        mf += dot(false_acts.row(i), best.direction);
    }
    if (mt < mf) {
        for (auto & v : best.direction) v = -v;
        best.sign_flipped = true;
    }
    best.low_confidence = best.loss > s.low_confidence_loss;
    return best;
}

double estimate_sigma(const ActivationDataset & ds, HeadId head, std::span<const double> direction,
                      std::span<const std::size_t> records) {
    if (records.empty()) {
        throw std::invalid_argument("estimate_sigma: empty record set");
    }
    if (direction.size() != static_cast<std::size_t>(ds.head_dim)) {
        throw std::invalid_argument("estimate_sigma: direction length mismatch");
    }
    if (std::abs(norm2(direction) - 1.0) > 1e-6) {
        throw std::invalid_argument("estimate_sigma: direction must be unit norm");
    }
    std::vector<double> proj;
    proj.reserve(records.size());
    for (auto r : records) {
        const auto v = ds.head(r, head.layer, head.head);
        double p = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) p += static_cast<double>(v[j]) * direction[j];
        proj.push_back(p);
    }
    double mean = 0.0;
    for (double p : proj) mean += p;
    mean /= static_cast<double>(proj.size());
    double var = 0.0;
    for (double p : proj) var += (p - mean) * (p - mean);
    return std::sqrt(var / static_cast<double>(proj.size()));
}

double estimate_sigma(const ActivationDataset & ds, HeadId head, std::span<const double> direction, const SplitPlan & plan,
                      std::optional<int> held_out) {
    const auto recs = development_records(ds, plan, held_out).all();
    return estimate_sigma(ds, head, direction, recs);
}

DirectionSet compute_directions_on(const ActivationDataset & ds, const DevelopmentRecords & dev, const DirectionOptions & options,
                                   const HeadProbes * probes) {
    DirectionSet out;
    out.n_layers = ds.n_layers;
    out.n_heads = ds.n_heads;
    out.head_dim = ds.head_dim;
    out.method = options.method;
    out.heads.resize(static_cast<std::size_t>(ds.n_layers) * ds.n_heads);
    out.provenance["method"] = std::string(to_string(options.method));
    out.provenance["seed"] = std::to_string(options.seed);

    const auto all = dev.all();
    const auto y_all = record_labels(ds, all);

    // one true and one false record per development question, for CCS
    std::vector<std::size_t> ccs_true, ccs_false;
    if (options.method == DirectionMethod::ccs) {
        std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_q;
        for (auto r : all) {
            auto & slot = by_q[ds.question_ids[r]];
            (ds.labels[r] ? slot.first : slot.second).push_back(r);
        }
        Rng rng(options.seed ^ 0x5ccULL);
        for (auto & [qid, lists] : by_q) {
            if (lists.first.empty() || lists.second.empty()) continue;
            ccs_true.push_back(lists.first[uniform_index(rng, lists.first.size())]);
            ccs_false.push_back(lists.second[uniform_index(rng, lists.second.size())]);
        }
        out.provenance["ccs_pairs"] = std::to_string(ccs_true.size());
    }

    for (int l = 0; l < ds.n_layers; ++l) {
        for (int h = 0; h < ds.n_heads; ++h) {
            Direction & dir = out.at({l, h});
            dir.method = options.method;
            try {
                switch (options.method) {
                    case DirectionMethod::mass_mean: {
                        dir.vector = mass_mean_direction(head_features(ds, all, l, h), y_all);
                        break;
                    }
                    case DirectionMethod::probe_weight: {
                        if (probes && probes->at(l, h)) {
                            dir.vector = probe_weight_direction(*probes->at(l, h));
                        } else {
                            const auto xtr = head_features(ds, dev.train, l, h);
                            const auto p = train_probe(xtr, record_labels(ds, dev.train), nullptr, {});
                            dir.vector = probe_weight_direction(p);
                        }
                        break;
                    }
                    case DirectionMethod::ccs: {
                        auto cs = options.ccs;
                        cs.seed = options.seed * 1000003ULL + static_cast<std::uint64_t>(l * ds.n_heads + h);
                        const auto r = ccs_direction(head_features(ds, ccs_true, l, h), head_features(ds, ccs_false, l, h), cs);
                        dir.vector = r.direction;
                        break;
                    }
                    case DirectionMethod::random: {
                        dir.vector = random_direction(ds.head_dim, options.seed * 1000003ULL + static_cast<std::uint64_t>(l * ds.n_heads + h));
                        break;
                    }
                }
                dir.sigma = estimate_sigma(ds, {l, h}, dir.vector, all);
            } catch (const std::invalid_argument & ex) {
                dir.vector.clear();
                dir.sigma = 0.0;
                dir.error = ex.what();
            }
        }
    }
    return out;
}

DirectionSet compute_directions(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out,
                                const DirectionOptions & options, const HeadProbes * probes) {
    auto set = compute_directions_on(ds, development_records(ds, plan, held_out), options, probes);
    set.provenance["held_out_fold"] = held_out ? std::to_string(*held_out) : "none";
    return set;
}

std::string directions_to_json(const DirectionSet & set) {
    json j;
    j["format"] = "iti-directions";
    j["version"] = 1;
    j["n_layers"] = set.n_layers;
    j["n_heads"] = set.n_heads;
    j["head_dim"] = set.head_dim;
    j["method"] = std::string(to_string(set.method));
    j["provenance"] = set.provenance;
    j["heads"] = json::array();
    for (int l = 0; l < set.n_layers; ++l) {
        for (int h = 0; h < set.n_heads; ++h) {
            const auto & d = set.at({l, h});
            json jd{{"layer", l}, {"head", h}, {"sigma", d.sigma}, {"direction", d.vector}};
            if (!d.error.empty()) jd["error"] = d.error;
            j["heads"].push_back(std::move(jd));
        }
    }
    return j.dump(1) + "\n";
}

DirectionSet directions_from_json(const std::string & text) {
    DirectionSet set;
    try {
        const auto j = json::parse(text);
        if (j.value("format", "") != "iti-directions") {
            throw std::runtime_error("not a direction file");
        }
        set.n_layers = j.at("n_layers").get<int>();
        set.n_heads = j.at("n_heads").get<int>();
        set.head_dim = j.at("head_dim").get<int>();
        set.method = parse_direction_method(j.at("method").get<std::string>());
        set.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
        set.heads.resize(static_cast<std::size_t>(set.n_layers) * set.n_heads);
        for (const auto & jd : j.at("heads")) {
            auto & d = set.at({jd.at("layer").get<int>(), jd.at("head").get<int>()});
            d.method = set.method;
            d.sigma = jd.at("sigma").get<double>();
            d.vector = jd.at("direction").get<std::vector<double>>();
            d.error = jd.value("error", "");
        }
    } catch (const json::exception & ex) {
        throw std::runtime_error(std::string("malformed direction file: ") + ex.what());
    }
    return set;
}

} // namespace iti
