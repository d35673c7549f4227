#include "gvd/grad_check.hpp"

#include <cmath>
#include <functional>
#include <unordered_map>

#include "gvd/dgn.hpp"
#include "gvd/ops.hpp"
#include "gvd/rng.hpp"
#include "gvd/stgl.hpp"

namespace gvd {

namespace {

using Forward = std::function<Tensor(const std::vector<Tensor>&)>;
using Vjp = std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)>;

struct Op {
    Forward fwd;
    Vjp vjp;  // empty when the op has no backward
};

MlpWeights mlp_weights(const std::vector<Tensor>& in) {
    return MlpWeights{in[1], in[2], in[3], in[4]};
}

// STGA probe: parameters come from a seeded store sized off the inputs, with
// gamma overridden by the probed input.
struct StgaProbe {
    ParamStore ps;
    StgaLayer layer;
    StgaProbe(int width, int dgw) {
        ps.set_init_seed(0x57a6);
        layer = make_stga(ps, "probe", width, dgw, Stage::stga);
    }
};

Tensor stga_probe_fwd(const std::vector<Tensor>& in) {
    StgaProbe probe(static_cast<int>(in[0].cols()), static_cast<int>(in[1].cols()));
    probe.ps.at(probe.layer.gamma).value = in[2];
    return stga_forward(probe.ps, probe.layer, in[0], in[1], 1.0, 0.7, false, nullptr);
}

std::vector<Tensor> stga_probe_vjp(const std::vector<Tensor>& in, const Tensor& cot) {
    StgaProbe probe(static_cast<int>(in[0].cols()), static_cast<int>(in[1].cols()));
    probe.ps.at(probe.layer.gamma).value = in[2];
    StgaCache cache;
    stga_forward(probe.ps, probe.layer, in[0], in[1], 1.0, 0.7, false, &cache);
    Tensor dg(in[1].shape);
    Tensor dz = stga_backward(probe.ps, probe.layer, cache, cot, &dg, nullptr);
    return {dz, dg, probe.ps.grad(probe.layer.gamma)};
}

const Op* find_op(const std::string& name) {
    static const std::unordered_map<std::string, Op> ops = {
        {"softmax",
         {[](const std::vector<Tensor>& in) { return softmax(in[0]); },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              return std::vector<Tensor>{softmax_vjp(softmax(in[0]), cot)};
          }}},
        {"linear",
         {[](const std::vector<Tensor>& in) { return linear_forward(in[0], in[1], in[2]); },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              LinearGrads g = linear_vjp(in[0], in[1], cot);
              return std::vector<Tensor>{g.dx, g.dw, g.db};
          }}},
        {"mlp",
         {[](const std::vector<Tensor>& in) { return mlp_forward(in[0], mlp_weights(in)); },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              MlpGrads g = mlp_vjp(in[0], mlp_weights(in), cot);
              return std::vector<Tensor>{g.dx, g.dw1, g.db1, g.dw2, g.db2};
          }}},
        {"layer-norm",
         {[](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              LayerNormGrads g = layer_norm_vjp(in[0], in[1], in[2], cot);
              return std::vector<Tensor>{g.dx, g.dscale, g.dshift};
          }}},
        {"attention",
         {[](const std::vector<Tensor>& in) {
              return scaled_dot_attention(in[0], in[1], in[2]);
          },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              Tensor attn;
              scaled_dot_attention(in[0], in[1], in[2], nullptr, &attn);
              AttentionGrads g = scaled_dot_attention_vjp(in[0], in[1], in[2], nullptr, attn, cot);
              return std::vector<Tensor>{g.dq, g.dk, g.dv};
          }}},
        {"attention-bias",
         {[](const std::vector<Tensor>& in) {
              return scaled_dot_attention(in[0], in[1], in[2], &in[3]);
          },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              Tensor attn;
              scaled_dot_attention(in[0], in[1], in[2], &in[3], &attn);
              AttentionGrads g = scaled_dot_attention_vjp(in[0], in[1], in[2], &in[3], attn, cot);
              return std::vector<Tensor>{g.dq, g.dk, g.dv, g.dbias};
          }}},
        {"soft-gate",
         {[](const std::vector<Tensor>& in) {
              Tensor y(in[0].shape);
              for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = sigmoid(in[0].data[i]);
              return y;
          },
          [](const std::vector<Tensor>& in, const Tensor& cot) {
              Tensor dr(in[0].shape);
              for (size_t i = 0; i < dr.data.size(); ++i) {
                  const double s = sigmoid(in[0].data[i]);
                  dr.data[i] = cot.data[i] * s * (1.0 - s);
              }
              return std::vector<Tensor>{dr};
          }}},
        {"stga", {stga_probe_fwd, stga_probe_vjp}},
        {"hard-gate",
         {[](const std::vector<Tensor>& in) {
              Tensor y(in[0].shape);
              for (size_t i = 0; i < y.data.size(); ++i)
                  y.data[i] = in[0].data[i] >= 0.0 ? 1.0 : 0.0;
              return y;
          },
          Vjp{}}},
    };
    auto it = ops.find(name);
    return it == ops.end() ? nullptr : &it->second;
}

}  // namespace

double grad_check(const std::string& op_name, const std::vector<Tensor>& inputs, double h) {
    const Op* op = find_op(op_name);
    if (!op || !op->vjp) fail("no-backward", "op '" + op_name + "' has no analytic backward");

    const Tensor out = op->fwd(inputs);
    RngStream rng(0xC07A, RngStream::hash_string(op_name));
    Tensor cot(out.shape);
    for (double& v : cot.data) v = rng.normal();

    const std::vector<Tensor> analytic = op->vjp(inputs, cot);
    auto project = [&](const std::vector<Tensor>& in) { return dot(op->fwd(in), cot); };

    double max_rel = 0.0;
    std::vector<Tensor> pert = inputs;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            const double orig = pert[i].data[j];
            pert[i].data[j] = orig + h;
            const double fp = project(pert);
            pert[i].data[j] = orig - h;
            const double fm = project(pert);
            pert[i].data[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i].data[j];
            const double rel =
                std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace gvd
