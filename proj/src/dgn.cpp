#include "gvd/dgn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gvd {

int gate_hidden_width(int dg) { return std::max(4, dg / 8); }

GateLayer make_gate_layer(ParamStore& ps, const std::string& name, int dg) {
    GateLayer l;
    l.v = ps.add(name + ".v", {dg}, Stage::dgn);
    l.mlp = make_mlp(ps, name + ".mlp", dg, gate_hidden_width(dg), 1, Stage::dgn);
    return l;
}

double relevance_forward(const ParamStore& ps, const GateLayer& l, const Tensor& pooled,
                         RelevanceCache* cache) {
    const int64_t m = pooled.rows(), dg = pooled.cols();
    RelevanceCache local;
    RelevanceCache& c = cache ? *cache : local;
    c.pooled = pooled;
    c.logits = Tensor({m});
    const Tensor& v = ps.value(l.v);
    for (int64_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int64_t i = 0; i < dg; ++i) acc += v[i] * pooled.at2(k, i);
        c.logits[k] = acc;
    }
    c.alpha = softmax(c.logits);
    c.weighted = Tensor({1, dg});
    for (int64_t k = 0; k < m; ++k)
        for (int64_t i = 0; i < dg; ++i) c.weighted.at2(0, i) += c.alpha[k] * pooled.at2(k, i);
    const Tensor r = mlp_fwd(ps, l.mlp, c.weighted, &c.mlp_c);
    return r[0];
}

void relevance_backward(ParamStore& ps, const GateLayer& l, const RelevanceCache& cache, double dr,
                        Tensor* dpooled_acc) {
    const int64_t m = cache.pooled.rows(), dg = cache.pooled.cols();
    Tensor dweighted({1, dg});
    mlp_bwd(ps, l.mlp, cache.mlp_c, Tensor::from({1, 1}, {dr}), &dweighted);

    Tensor dalpha({m});
    for (int64_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (int64_t i = 0; i < dg; ++i) acc += dweighted.at2(0, i) * cache.pooled.at2(k, i);
        dalpha[k] = acc;
    }
    Tensor dlogits = softmax_vjp(cache.alpha, dalpha);

    const Tensor& v = ps.value(l.v);
    Tensor& dv = ps.grad(l.v);
    for (int64_t k = 0; k < m; ++k)
        for (int64_t i = 0; i < dg; ++i) dv[i] += dlogits[k] * cache.pooled.at2(k, i);
    if (dpooled_acc) {
        for (int64_t k = 0; k < m; ++k)
            for (int64_t i = 0; i < dg; ++i)
                dpooled_acc->at2(k, i) += dlogits[k] * v[i] + cache.alpha[k] * dweighted.at2(0, i);
    }
}

GateDecision gate_decision(double r, bool train, double eps, double n) {
    GateDecision d;
    d.train = train;
    d.relevance = r;
    d.noised = train ? r + eps : r;
    d.soft = sigmoid(d.noised);
    d.hard = d.noised >= 0.0 ? 1.0 : 0.0;
    d.mix = n;
    d.value = train ? (n >= 0.5 ? d.soft : d.hard) : d.hard;
    return d;
}

GateDecision sample_gate(double r, bool train, RngStream& eps_stream, RngStream& uniform_stream) {
    if (!train) return gate_decision(r, false, 0.0, 0.0);
    const double eps = eps_stream.logistic();
    const double n = uniform_stream.uniform01();
    return gate_decision(r, true, eps, n);
}

double gate_value_grad(const GateDecision& d) {
    if (!d.train || d.mix < 0.5) return 0.0;  // hard path: zero gradient
    return d.soft * (1.0 - d.soft);
}

SkipReport collect_skip_stats(const std::vector<GateDecision>& trace, int num_layers) {
    if (trace.empty()) fail("empty-trace", "no gate decisions recorded");
    SkipReport report;
    report.rows.resize(static_cast<size_t>(num_layers));
    std::vector<int64_t> skipped(static_cast<size_t>(num_layers), 0);
    std::vector<int64_t> total(static_cast<size_t>(num_layers), 0);
    for (const GateDecision& d : trace) {
        if (d.layer < 0 || d.layer >= num_layers) fail("empty-trace", "layer index out of range");
        ++total[static_cast<size_t>(d.layer)];
        if (d.hard == 0.0) ++skipped[static_cast<size_t>(d.layer)];
    }
    for (int i = 0; i < num_layers; ++i) {
        SkipReport::Row& row = report.rows[static_cast<size_t>(i)];
        row.layer = i;
        row.samples = total[static_cast<size_t>(i)];
        row.skip_percent =
            row.samples > 0 ? 100.0 * static_cast<double>(skipped[static_cast<size_t>(i)]) /
                                  static_cast<double>(row.samples)
                            : 0.0;
    }
    return report;
}

std::string skip_report_csv(const SkipReport& report) {
    std::string out = "layer_index,skip_percent,samples\n";
    char line[96];
    for (const SkipReport::Row& row : report.rows) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%lld\n", row.layer, row.skip_percent,
                      static_cast<long long>(row.samples));
        out += line;
    }
    return out;
}

}  // namespace gvd
