#include "nnc/kernels.hpp"

#include <stdexcept>

namespace nnc::kernels {

using hlir::Attrs;
using hlir::Node;
using hlir::OpKind;
using hlir::Padding;

int64_t window_out_extent(int64_t in, int64_t k, int64_t stride, Padding padding) {
    if (padding == Padding::Same) return (in + stride - 1) / stride;
    if (in < k) throw std::invalid_argument("window_out_extent: input smaller than kernel");
    return (in - k) / stride + 1;
}

ConvGeom conv_geometry(const std::vector<int64_t>& x, const Attrs& a) {
    if (x.size() != 4) throw std::invalid_argument("conv_geometry: rank-4 NHWC input required");
    ConvGeom gm{};
    gm.n = x[0];
    gm.ih = x[1];
    gm.iw = x[2];
    gm.ci = x[3];
    gm.co = a.out_channels;
    gm.kh = a.kernel[0];
    gm.kw = a.kernel[1];
    gm.sh = a.stride[0];
    gm.sw = a.stride[1];
    gm.oh = window_out_extent(gm.ih, gm.kh, gm.sh, a.padding);
    gm.ow = window_out_extent(gm.iw, gm.kw, gm.sw, a.padding);
    if (a.padding == Padding::Same) {
        gm.pad_top = std::max<int64_t>((gm.oh - 1) * gm.sh + gm.kh - gm.ih, 0) / 2;
        gm.pad_left = std::max<int64_t>((gm.ow - 1) * gm.sw + gm.kw - gm.iw, 0) / 2;
    }
    return gm;
}

PoolGeom pool_geometry(const std::vector<int64_t>& x, const Attrs& a) {
    if (x.size() != 4) throw std::invalid_argument("pool_geometry: rank-4 NHWC input required");
    PoolGeom gm{};
    gm.n = x[0];
    gm.ih = x[1];
    gm.iw = x[2];
    gm.c = x[3];
    gm.kh = a.kernel[0];
    gm.kw = a.kernel[1];
    gm.sh = a.stride[0];
    gm.sw = a.stride[1];
    gm.oh = window_out_extent(gm.ih, gm.kh, gm.sh, Padding::Valid);
    gm.ow = window_out_extent(gm.iw, gm.kw, gm.sw, Padding::Valid);
    return gm;
}

namespace {

template <typename T>
const T* ptr(const Tensor& t);
template <>
const float* ptr<float>(const Tensor& t) { return t.f32(); }
template <>
const double* ptr<double>(const Tensor& t) { return t.f64(); }

template <typename T>
T* ptr(Tensor& t);
template <>
float* ptr<float>(Tensor& t) { return t.f32(); }
template <>
double* ptr<double>(Tensor& t) { return t.f64(); }

template <typename T>
std::vector<Tensor> eval_typed(const Node& n, const std::vector<const Tensor*>& in,
                               const std::vector<const Tensor*>& w, DType dt) {
    const Attrs& a = n.attrs;
    auto dims = [&](size_t i) -> const std::vector<int64_t>& { return in[i]->dims(); };
    auto make = [&](std::vector<int64_t> d) { return Tensor(dt, std::move(d)); };

    switch (n.op) {
        case OpKind::Identity: {
            Tensor y = make(dims(0));
            copy(ptr<T>(*in[0]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::ReLU: {
            Tensor y = make(dims(0));
            relu(ptr<T>(*in[0]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::ReluGrad: {
            Tensor y = make(dims(0));
            relu_grad(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::Add: {
            Tensor y = make(dims(0));
            add(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::Mul: {
            Tensor y = make(dims(0));
            mul(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::CumSum: {
            Tensor y = make(dims(0));
            cumsum(ptr<T>(*in[0]), ptr<T>(y), dims(0), a.axis, a.exclusive, a.reverse);
            return {std::move(y)};
        }
        case OpKind::Flatten: {
            const auto& d = dims(0);
            int64_t rest = 1;
            for (size_t i = 1; i < d.size(); ++i) rest *= d[i];
            Tensor y = make({d[0], rest});
            copy(ptr<T>(*in[0]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::Unflatten: {
            std::vector<int64_t> d{dims(0)[0]};
            d.insert(d.end(), a.fwd_dims.begin(), a.fwd_dims.end());
            Tensor y = make(std::move(d));
            copy(ptr<T>(*in[0]), ptr<T>(y), in[0]->elements());
            return {std::move(y)};
        }
        case OpKind::Dense: {
            int64_t batch = dims(0)[0], infe = dims(0)[1];
            Tensor y = make({batch, a.out_features});
            const T* bias = a.has_bias ? ptr<T>(*w[1]) : nullptr;
            dense(ptr<T>(*in[0]), ptr<T>(*w[0]), bias, ptr<T>(y), batch, infe, a.out_features);
            return {std::move(y)};
        }
        case OpKind::DenseGradInput: {
            int64_t batch = dims(0)[0], out = dims(0)[1];
            int64_t infe = w[0]->dims()[0];
            Tensor y = make({batch, infe});
            dense_grad_input(ptr<T>(*in[0]), ptr<T>(*w[0]), ptr<T>(y), batch, infe, out);
            return {std::move(y)};
        }
        case OpKind::DenseGradWeight: {
            int64_t batch = dims(0)[0], infe = dims(0)[1], out = dims(1)[1];
            Tensor y = make({infe, out});
            dense_grad_weight(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), batch, infe, out);
            return {std::move(y)};
        }
        case OpKind::SumCols: {
            int64_t batch = dims(0)[0], out = dims(0)[1];
            Tensor y = make({out});
            sum_cols(ptr<T>(*in[0]), ptr<T>(y), batch, out);
            return {std::move(y)};
        }
        case OpKind::Conv2D: {
            ConvGeom gm = conv_geometry(dims(0), a);
            Tensor y = make({gm.n, gm.oh, gm.ow, gm.co});
            const T* bias = a.has_bias ? ptr<T>(*w[1]) : nullptr;
            conv2d(ptr<T>(*in[0]), ptr<T>(*w[0]), bias, ptr<T>(y), gm);
            return {std::move(y)};
        }
        case OpKind::Conv2DGradInput: {
            // input: g [n,oh,ow,co]; fwd_dims carries [ih,iw,ci].
            std::vector<int64_t> xd{dims(0)[0], a.fwd_dims[0], a.fwd_dims[1], a.fwd_dims[2]};
            ConvGeom gm = conv_geometry(xd, a);
            Tensor y = make(xd);
            conv2d_grad_input(ptr<T>(*in[0]), ptr<T>(*w[0]), ptr<T>(y), gm);
            return {std::move(y)};
        }
        case OpKind::Conv2DGradWeight: {
            // inputs: x, g
            ConvGeom gm = conv_geometry(dims(0), a);
            Tensor y = make({gm.kh, gm.kw, gm.ci, gm.co});
            conv2d_grad_weight(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), gm);
            return {std::move(y)};
        }
        case OpKind::SumNHW: {
            const auto& d = dims(0);
            Tensor y = make({d[3]});
            sum_nhw(ptr<T>(*in[0]), ptr<T>(y), d[0], d[1], d[2], d[3]);
            return {std::move(y)};
        }
        case OpKind::MaxPool2D: {
            PoolGeom gm = pool_geometry(dims(0), a);
            Tensor y = make({gm.n, gm.oh, gm.ow, gm.c});
            if (n.outputs.size() == 2) {
                Tensor idx = make({gm.n, gm.oh, gm.ow, gm.c});
                maxpool2d(ptr<T>(*in[0]), ptr<T>(y), ptr<T>(idx), gm);
                return {std::move(y), std::move(idx)};
            }
            maxpool2d(ptr<T>(*in[0]), ptr<T>(y), static_cast<T*>(nullptr), gm);
            return {std::move(y)};
        }
        case OpKind::MaxPool2DGrad: {
            // inputs: idx [n,oh,ow,c], g [n,oh,ow,c]; fwd_dims = [ih,iw].
            std::vector<int64_t> xd{dims(0)[0], a.fwd_dims[0], a.fwd_dims[1], dims(0)[3]};
            PoolGeom gm = pool_geometry(xd, a);
            Tensor y = make(xd);
            maxpool2d_grad(ptr<T>(*in[0]), ptr<T>(*in[1]), ptr<T>(y), gm);
            return {std::move(y)};
        }
        case OpKind::AdaptiveAvgPool2D: {
            const auto& d = dims(0);
            Tensor y = make({d[0], a.out_hw[0], a.out_hw[1], d[3]});
            adaptive_avg_pool2d(ptr<T>(*in[0]), ptr<T>(y), d[0], d[1], d[2], d[3], a.out_hw[0],
                                a.out_hw[1]);
            return {std::move(y)};
        }
        case OpKind::AdaptiveAvgPool2DGrad: {
            // input: g [n,oh,ow,c]; fwd_dims = [ih,iw].
            const auto& d = dims(0);
            Tensor y = make({d[0], a.fwd_dims[0], a.fwd_dims[1], d[3]});
            adaptive_avg_pool2d_grad(ptr<T>(*in[0]), ptr<T>(y), d[0], a.fwd_dims[0], a.fwd_dims[1],
                                     d[3], d[1], d[2]);
            return {std::move(y)};
        }
        case OpKind::Const: {
            return {*w[0]};
        }
        case OpKind::Input:
            throw std::logic_error("eval_node: Input nodes are bound externally");
    }
    throw std::logic_error("eval_node: unhandled op");
}

} // namespace

std::vector<Tensor> eval_node(const Node& n, const std::vector<const Tensor*>& inputs,
                              const std::vector<const Tensor*>& weights) {
    DType dt = !inputs.empty() ? inputs[0]->dtype()
                               : (!weights.empty() ? weights[0]->dtype() : DType::F32);
    if (dt == DType::F32) return eval_typed<float>(n, inputs, weights, dt);
    return eval_typed<double>(n, inputs, weights, dt);
}

std::map<std::string, Tensor> eval_graph(const hlir::Graph& g,
                                         const std::map<std::string, Tensor>& inputs,
                                         const std::map<std::string, Tensor>* weight_override) {
    std::map<std::string, Tensor> values = inputs;
    auto weight = [&](const std::string& name) -> const Tensor& {
        if (weight_override) {
            auto it = weight_override->find(name);
            if (it != weight_override->end()) return it->second;
        }
        return g.initializers.at(name);
    };
    // Initializer values may be consumed directly.
    for (const auto& [name, t] : g.initializers) {
        if (!values.count(name)) values.emplace(name, weight(name));
    }

    for (const std::string& node_name : hlir::topo_order(g)) {
        const Node& n = *g.find_node(node_name);
        if (n.op == OpKind::Input) {
            if (!values.count(n.outputs[0]))
                throw std::invalid_argument("eval_graph: missing input " + n.outputs[0]);
            continue;
        }
        std::vector<const Tensor*> ins, ws;
        for (const std::string& v : n.inputs) ins.push_back(&values.at(v));
        for (const std::string& w : n.weights) ws.push_back(&weight(w));
        auto outs = eval_node(n, ins, ws);
        for (size_t i = 0; i < n.outputs.size(); ++i)
            values[n.outputs[i]] = std::move(outs[i]);
    }
    return values;
}

} // namespace nnc::kernels
