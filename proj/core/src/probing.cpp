#include "iti/probing.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

using json = nlohmann::json;

namespace iti {

namespace {

double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_inputs(const FeatureMatrix & x, std::span<const int> y) {
    if (x.rows != y.size()) {
        throw std::invalid_argument("train_probe: feature/label count mismatch");
    }
    if (x.data.size() != x.rows * x.cols || x.cols == 0) {
        throw std::invalid_argument("train_probe: dimension mismatch");
    }
    if (x.rows < 2) {
        throw std::invalid_argument("train_probe: need at least two samples");
    }
    const auto pos = std::count(y.begin(), y.end(), 1);
    const auto neg = std::count(y.begin(), y.end(), 0);
    if (pos == 0 || neg == 0 || pos + neg != static_cast<long>(y.size())) {
        throw std::invalid_argument("train_probe: both labels must be present");
    }
    bool varies = false;
    for (std::size_t i = 1; i < x.rows && !varies; ++i) {
        const auto a = x.row(0), b = x.row(i);
        varies = !std::equal(a.begin(), a.end(), b.begin());
    }
    if (!varies) {
        throw std::invalid_argument("train_probe: degenerate features (all samples identical)");
    }
}

struct LogisticObjective {
    const FeatureMatrix & x;
    std::span<const int> y;
    double l2;

    // loss and gradient (theta..., intercept) at w
    double eval(std::span<const double> w, std::vector<double> * grad) const {
        const std::size_t d = x.cols;
        const double b = w[d];
        double loss = 0.0;
        if (grad) {
            std::fill(grad->begin(), grad->end(), 0.0);
        }
        for (std::size_t i = 0; i < x.rows; ++i) {
            const auto xi = x.row(i);
            double z = b;
            for (std::size_t j = 0; j < d; ++j) {
                z += w[j] * xi[j];
            }
            loss += softplus(z) - y[i] * z;
            if (grad) {
                const double r = sigmoid(z) - y[i];
                for (std::size_t j = 0; j < d; ++j) {
                    (*grad)[j] += r * xi[j];
                }
                (*grad)[d] += r;
            }
        }
        const double inv_n = 1.0 / static_cast<double>(x.rows);
        loss *= inv_n;
        double reg = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            reg += w[j] * w[j];
        }
        loss += 0.5 * l2 * reg;
        if (grad) {
            for (std::size_t j = 0; j < d; ++j) {
                (*grad)[j] = (*grad)[j] * inv_n + l2 * w[j];
            }
            (*grad)[d] *= inv_n;
        }
        return loss;
    }
};

Probe fit_logistic(const FeatureMatrix & x, std::span<const int> y, const ProbeSettings & s) {
    const std::size_t d = x.cols;
    LogisticObjective obj{x, y, s.l2};
    std::vector<double> w(d + 1, 0.0), g(d + 1), trial(d + 1);
    double step = s.initial_step;
    double f = obj.eval(w, &g);
    Probe p;
    int it = 0;
    for (; it < s.max_iter; ++it) {
        const double gn2 = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
        if (std::sqrt(gn2) <= s.grad_tol) {
            p.converged = true;
            break;
        }
        // Armijo backtracking; the accepted step carries to the next iteration
        double ft = 0.0;
        for (;;) {
            for (std::size_t j = 0; j <= d; ++j) {
                trial[j] = w[j] - step * g[j];
            }
            ft = obj.eval(trial, nullptr);
            if (ft <= f - 1e-4 * step * gn2 || step < 1e-20) {
                break;
            }
            step *= 0.5;
        }
        if (step < 1e-20) {
            break;
        }
        w.swap(trial);
        f = obj.eval(w, &g);
    }
    if (!p.converged) {
        const double gn = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
        p.converged = gn <= s.grad_tol;
    }
    p.iterations = it;
    p.theta.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
    p.intercept = w[d];
    return p;
}

} // namespace

double Probe::logit(std::span<const double> x) const {
    if (x.size() != theta.size()) {
        throw std::invalid_argument("probe: dimension mismatch");
    }
    double z = intercept;
    for (std::size_t j = 0; j < theta.size(); ++j) {
        double v = x[j];
        if (!feature_mean.empty()) {
            v = (v - feature_mean[j]) / feature_scale[j];
        }
        z += theta[j] * v;
    }
    return z;
}

double Probe::predict_proba(std::span<const double> x) const {
    return sigmoid(logit(x));
}

double probe_accuracy(const Probe & probe, const FeatureMatrix & x, std::span<const int> y) {
    if (x.rows == 0) {
        return 0.0;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double p = probe.predict_proba(x.row(i));
        if ((p > 0.5 && y[i] == 1) || (p < 0.5 && y[i] == 0)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows);
}

Probe train_probe(const FeatureMatrix & train_x, std::span<const int> train_y, const FeatureMatrix * val_x,
                  std::span<const int> val_y, const ProbeSettings & settings) {
    check_inputs(train_x, train_y);
    if (val_x && (val_x->cols != train_x.cols || val_x->rows != val_y.size())) {
        throw std::invalid_argument("train_probe: validation dimension mismatch");
    }
    Probe p = fit_logistic(train_x, train_y, settings);
    p.train_accuracy = probe_accuracy(p, train_x, train_y);
    p.val_accuracy = (val_x && val_x->rows > 0) ? probe_accuracy(p, *val_x, val_y) : p.train_accuracy;
    return p;
}

Probe train_orthogonal_probe(const FeatureMatrix & train_x, std::span<const int> train_y, const FeatureMatrix * val_x,
                             std::span<const int> val_y, const Probe & first, const ProbeSettings & settings) {
    if (first.theta.size() != train_x.cols) {
        throw std::invalid_argument("train_orthogonal_probe: first probe dimension mismatch");
    }
    const double n = norm2(first.theta);
    if (n == 0.0) {
        throw std::invalid_argument("train_orthogonal_probe: first probe has zero theta");
    }
    std::vector<double> u(first.theta);
    for (auto & v : u) v /= n;

    auto project = [&](const FeatureMatrix & x) {
        FeatureMatrix out = x;
        for (std::size_t i = 0; i < out.rows; ++i) {
            auto r = out.row(i);
            const double c = dot(r, u);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] -= c * u[j];
        }
        return out;
    };
    const FeatureMatrix tx = project(train_x);
    std::optional<FeatureMatrix> vx;
    if (val_x) vx = project(*val_x);

    Probe p = train_probe(tx, train_y, vx ? &*vx : nullptr, val_y, settings);
    // remove the round-off component along u
    for (int pass = 0; pass < 2; ++pass) {
        const double c = dot(p.theta, u);
        for (std::size_t j = 0; j < u.size(); ++j) p.theta[j] -= c * u[j];
    }
    p.train_accuracy = probe_accuracy(p, train_x, train_y);
    p.val_accuracy = val_x && val_x->rows > 0 ? probe_accuracy(p, *val_x, val_y) : p.train_accuracy;
    return p;
}

FeatureMatrix head_features(const ActivationDataset & ds, std::span<const std::size_t> records, int layer, int head) {
    FeatureMatrix x(records.size(), static_cast<std::size_t>(ds.head_dim));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto v = ds.head(records[i], layer, head);
        std::copy(v.begin(), v.end(), x.row(i).begin());
    }
    return x;
}

std::vector<int> record_labels(const ActivationDataset & ds, std::span<const std::size_t> records) {
    std::vector<int> y;
    y.reserve(records.size());
    for (auto r : records) y.push_back(ds.labels[r]);
    return y;
}

std::vector<std::size_t> DevelopmentRecords::all() const {
    std::vector<std::size_t> out(train);
    out.insert(out.end(), validation.begin(), validation.end());
    std::sort(out.begin(), out.end());
    return out;
}

DevelopmentRecords development_records(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out) {
    DevelopmentRecords dev;
    dev.train = ds.records_for_pairs(plan.development_pairs(held_out, PairRole::train));
    dev.validation = ds.records_for_pairs(plan.development_pairs(held_out, PairRole::validation));
    return dev;
}

HeadProbes probe_all_heads(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out,
                           const ProbeSettings & settings) {
    return probe_all_heads_on(ds, development_records(ds, plan, held_out), settings);
}

HeadProbes probe_all_heads_on(const ActivationDataset & ds, const DevelopmentRecords & dev, const ProbeSettings & settings) {
    const auto ytr = record_labels(ds, dev.train);
    const auto yva = record_labels(ds, dev.validation);

    HeadProbes out;
    out.accuracy.n_layers = ds.n_layers;
    out.accuracy.n_heads = ds.n_heads;
    out.accuracy.values.assign(static_cast<std::size_t>(ds.n_layers) * ds.n_heads, 0.0);
    out.probes.resize(out.accuracy.values.size());
    out.errors.resize(out.accuracy.values.size());
    for (int l = 0; l < ds.n_layers; ++l) {
        for (int h = 0; h < ds.n_heads; ++h) {
            const std::size_t idx = static_cast<std::size_t>(l) * ds.n_heads + h;
            try {
                const auto xtr = head_features(ds, dev.train, l, h);
                const auto xva = head_features(ds, dev.validation, l, h);
                auto p = train_probe(xtr, ytr, &xva, yva, settings);
                out.accuracy.values[idx] = p.val_accuracy;
                out.probes[idx] = std::move(p);
            } catch (const std::invalid_argument & ex) {
                out.errors[idx] = ex.what();
            }
        }
    }
    return out;
}

HeadSelection select_heads(const HeadAccuracyMatrix & matrix, int k) {
    const int total = matrix.n_layers * matrix.n_heads;
    if (k < 0 || k > total) {
        throw std::invalid_argument("select_heads: K out of range");
    }
    std::vector<HeadId> all;
    all.reserve(total);
    for (int l = 0; l < matrix.n_layers; ++l) {
        for (int h = 0; h < matrix.n_heads; ++h) all.push_back({l, h});
    }
    std::stable_sort(all.begin(), all.end(), [&](HeadId a, HeadId b) {
        const double aa = matrix.at(a.layer, a.head), bb = matrix.at(b.layer, b.head);
        if (aa != bb) return aa > bb;
        return a < b;
    });
    HeadSelection sel;
    sel.kind = SelectorKind::head_wise;
    sel.heads.assign(all.begin(), all.begin() + k);
    return sel;
}

HeadSelection select_all_heads(const HeadAccuracyMatrix & matrix) {
    auto sel = select_heads(matrix, matrix.n_layers * matrix.n_heads);
    sel.kind = SelectorKind::all_heads;
    return sel;
}

ConcatProbeResult train_concat_probe(const ActivationDataset & ds, const SplitPlan & plan, std::optional<int> held_out, int k,
                                     const ProbeSettings & settings) {
    return train_concat_probe_on(ds, development_records(ds, plan, held_out), k, settings);
}

ConcatProbeResult train_concat_probe_on(const ActivationDataset & ds, const DevelopmentRecords & dev, int k,
                                        const ProbeSettings & settings) {
    const int total_heads = ds.n_layers * ds.n_heads;
    if (k < 0 || k > total_heads) {
        throw std::invalid_argument("train_concat_probe: K out of range");
    }
    const std::size_t width = ds.record_stride();
    auto gather = [&](const std::vector<std::size_t> & recs) {
        FeatureMatrix x(recs.size(), width);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto r = ds.record(recs[i]);
            std::copy(r.begin(), r.end(), x.row(i).begin());
        }
        return x;
    };
    FeatureMatrix xtr = gather(dev.train), xva = gather(dev.validation);
    const auto ytr = record_labels(ds, dev.train);
    const auto yva = record_labels(ds, dev.validation);
    if (xtr.rows == 0) {
        throw std::invalid_argument("train_concat_probe: empty training set");
    }

    std::vector<double> mean(width, 0.0), scale(width, 0.0);
    for (std::size_t i = 0; i < xtr.rows; ++i) {
        const auto r = xtr.row(i);
        for (std::size_t j = 0; j < width; ++j) mean[j] += r[j];
    }
    for (auto & m : mean) m /= static_cast<double>(xtr.rows);
    for (std::size_t i = 0; i < xtr.rows; ++i) {
        const auto r = xtr.row(i);
        for (std::size_t j = 0; j < width; ++j) scale[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
    }
    for (auto & s : scale) {
        s = std::sqrt(s / static_cast<double>(xtr.rows));
        if (s == 0.0) s = 1.0;
    }
    auto standardize = [&](FeatureMatrix & x) {
        for (std::size_t i = 0; i < x.rows; ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j < width; ++j) r[j] = (r[j] - mean[j]) / scale[j];
        }
    };
    standardize(xtr);
    standardize(xva);

    ConcatProbeResult out;
    out.probe = train_probe(xtr, ytr, &xva, yva, settings);
    out.probe.feature_mean = mean;
    out.probe.feature_scale = scale;

    std::vector<std::size_t> order(width);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double aa = std::abs(out.probe.theta[a]), bb = std::abs(out.probe.theta[b]);
        if (aa != bb) return aa > bb;
        return a < b;
    });
    out.selection.kind = SelectorKind::point_wise;
    out.selection.coordinates.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * ds.head_dim));
    return out;
}

std::string head_probes_to_json(const HeadProbes & probes) {
    json j;
    j["format"] = "iti-probes";
    j["version"] = 1;
    j["n_layers"] = probes.accuracy.n_layers;
    j["n_heads"] = probes.accuracy.n_heads;
    j["val_accuracy"] = probes.accuracy.values;
    j["probes"] = json::array();
    for (int l = 0; l < probes.accuracy.n_layers; ++l) {
        for (int h = 0; h < probes.accuracy.n_heads; ++h) {
            const std::size_t idx = static_cast<std::size_t>(l) * probes.accuracy.n_heads + h;
            json jp{{"layer", l}, {"head", h}};
            if (const auto & p = probes.probes[idx]) {
                jp["theta"] = p->theta;
                jp["intercept"] = p->intercept;
                jp["train_accuracy"] = p->train_accuracy;
                jp["val_accuracy"] = p->val_accuracy;
                jp["iterations"] = p->iterations;
                jp["converged"] = p->converged;
            } else {
                jp["error"] = probes.errors[idx];
            }
            j["probes"].push_back(std::move(jp));
        }
    }
    return j.dump(1) + "\n";
}

} // namespace iti
