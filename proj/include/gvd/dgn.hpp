#pragma once

#include <vector>

#include "gvd/rng.hpp"
#include "gvd/stgl.hpp"

namespace gvd {

// Per-layer gate parameters: a grounding-aware embedding and a low-rank MLP
// scoring the pooled grounded features.
struct GateLayer {
    int v = -1;  // (dg)
    MlpLayer mlp;
};
GateLayer make_gate_layer(ParamStore& ps, const std::string& name, int dg);
int gate_hidden_width(int dg);  // dg/8, floor 4

struct RelevanceCache {
    Tensor pooled;  // (M x dg)
    Tensor logits, alpha;
    Tensor weighted;  // (1 x dg)
    MlpCache mlp_c;
};

// r_i = MLP(sum_k alpha_k p_k), alpha = softmax([v . p_k]). pooled must have
// at least one row; the M = 0 case is handled by pooling the null grounded
// feature before calling.
double relevance_forward(const ParamStore& ps, const GateLayer& l, const Tensor& pooled,
                         RelevanceCache* cache);
void relevance_backward(ParamStore& ps, const GateLayer& l, const RelevanceCache& cache, double dr,
                        Tensor* dpooled_acc);

struct GateDecision {
    int layer = 0;
    double relevance = 0;  // r
    double noised = 0;     // r + eps
    double soft = 0;       // sigmoid(noised)
    double hard = 0;       // indicator(noised >= 0)
    double mix = 0;        // n, uniform selector
    double value = 0;      // final gate d
    bool train = false;
};

// Dual gate of the relevance score. Training draws eps ~ Logistic(0,1) and
// n ~ Uniform(0,1); inference uses eps = 0 and the hard gate.
GateDecision gate_decision(double r, bool train, double eps, double n);
GateDecision sample_gate(double r, bool train, RngStream& eps_stream, RngStream& uniform_stream);

// d(soft)/dr; the hard path and the hard-selected mix propagate zero.
double gate_value_grad(const GateDecision& d);

struct SkipReport {
    struct Row {
        int layer = 0;
        double skip_percent = 0;
        int64_t samples = 0;
    };
    std::vector<Row> rows;
};

// Skip percentage per layer over an inference trace. Throws "empty-trace".
SkipReport collect_skip_stats(const std::vector<GateDecision>& trace, int num_layers);
std::string skip_report_csv(const SkipReport& report);

}  // namespace gvd
