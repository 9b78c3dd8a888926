#include "nnc/ingest.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "nnc/error.hpp"
#include "nnc/kernels.hpp"

namespace nnc::ingest {

using hlir::Attrs;
using hlir::Dim;
using hlir::GraphBuilder;
using hlir::Layout;
using hlir::OpKind;
using hlir::Padding;
using hlir::Shape;
using hlir::TensorType;
using json = nlohmann::json;

const char* dialect_name(Dialect d) { return d == Dialect::DLA ? "dla" : "dlb"; }

/* ------------------------------------------------------------------ */
/*  Deterministic initialization                                       */
/* ------------------------------------------------------------------ */

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

InitStream::InitStream(uint64_t document_seed, const std::string& tensor_name)
    : state_(document_seed ^ fnv1a64(tensor_name)) {
    state_ = state_ * 6364136223846793005ull + 1442695040888963407ull;
}

double InitStream::uniform(double lo, double hi) {
    state_ = state_ * 6364136223846793005ull + 1442695040888963407ull;
    double u = static_cast<double>(state_ >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

namespace {

Tensor random_init(DType dt, const std::vector<int64_t>& dims, int64_t fan_in, uint64_t seed,
                   const std::string& name) {
    Tensor t(dt, dims);
    InitStream rng(seed, name);
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    int64_t n = t.elements();
    if (dt == DType::F32) {
        float* p = t.f32();
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
    } else {
        double* p = t.f64();
        for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
    }
    return t;
}

/* ------------------------------------------------------------------ */
/*  Document helpers                                                   */
/* ------------------------------------------------------------------ */

[[noreturn]] void bad(const std::string& msg) { throw Error(Error::Code::BadDocument, msg); }

std::array<int64_t, 2> pair_attr(const json& attrs, const char* key, bool required,
                                 std::array<int64_t, 2> fallback = {0, 0}) {
    if (!attrs.contains(key)) {
        if (required) bad(std::string("missing attribute ") + key);
        return fallback;
    }
    const json& v = attrs.at(key);
    if (v.is_number_integer()) {
        int64_t k = v.get<int64_t>();
        return {k, k};
    }
    if (v.is_array() && v.size() == 2) return {v[0].get<int64_t>(), v[1].get<int64_t>()};
    bad(std::string(key) + " must be an integer or a pair");
}

Padding padding_attr(const json& attrs) {
    std::string p = attrs.value("padding", "valid");
    if (p == "same") return Padding::Same;
    if (p == "valid") return Padding::Valid;
    bad("padding must be \"same\" or \"valid\"");
}

// NCHW document axis -> canonical NHWC axis, for rank-4 operands.
int64_t remap_nchw_axis(int64_t axis) {
    switch (axis) {
        case 0: return 0;
        case 1: return 3;
        case 2: return 1;
        case 3: return 2;
    }
    bad("axis out of range for rank-4 operand");
}

std::vector<int64_t> nchw_to_nhwc(const std::vector<int64_t>& d) {
    return {d[0], d[2], d[3], d[1]};
}

// Per-value info tracked while converting, all at seed extents.
struct ValueInfo {
    std::vector<int64_t> dims;
    OpKind producer = OpKind::Input;
    std::vector<int64_t> producer_input_dims;  // for Flatten: the rank-4 source dims
};

struct Converter {
    Dialect dialect;
    DType dtype;
    uint64_t seed;
    const WeightStore* store;
    GraphBuilder builder;
    std::map<std::string, ValueInfo> values;

    Converter(Dialect d, DType dt, uint64_t s, const WeightStore* w)
        : dialect(d), dtype(dt), seed(s), store(w), builder(dt) {}

    const ValueInfo& info(const std::string& node, const std::string& value) {
        auto it = values.find(value);
        if (it == values.end()) bad(node + ": unknown input " + value);
        return it->second;
    }

    /// Fetches a weight from the store (validating the dialect-layout
    /// dims and converting to canonical layout) or initializes it.
    Tensor fetch_weight(const std::string& name, const std::vector<int64_t>& canonical_dims,
                        const std::vector<int64_t>& dialect_dims, int64_t fan_in,
                        const std::function<Tensor(const Tensor&)>& to_canonical) {
        if (store && store->has(name)) {
            const Tensor& raw = store->at(name);
            if (raw.dims() != dialect_dims)
                throw Error(Error::Code::ShapeMismatch,
                            name + ": expected " + dims_to_string(dialect_dims) + ", got " +
                                dims_to_string(raw.dims()));
            Tensor canonical = to_canonical(raw.cast(dtype));
            return canonical;
        }
        return random_init(dtype, canonical_dims, fan_in, seed, name);
    }

    void add_conv(const std::string& name, const std::string& in, int64_t out_channels,
                  std::array<int64_t, 2> kernel, std::array<int64_t, 2> stride, Padding padding,
                  bool has_bias) {
        const ValueInfo& vi = info(name, in);
        if (vi.dims.size() != 4) bad(name + ": conv2d input must be rank 4");
        int64_t ci = vi.dims[3];

        Attrs a;
        a.out_channels = out_channels;
        a.kernel = kernel;
        a.stride = stride;
        a.padding = padding;
        a.has_bias = has_bias;

        std::vector<int64_t> canonical{kernel[0], kernel[1], ci, out_channels};
        std::vector<int64_t> dialect_dims =
            dialect == Dialect::DLA
                ? std::vector<int64_t>{out_channels, ci, kernel[0], kernel[1]}
                : canonical;
        int64_t fan_in = kernel[0] * kernel[1] * ci;
        Tensor w = fetch_weight(name + ".weight", canonical, dialect_dims, fan_in,
                                [&](const Tensor& raw) {
                                    if (dialect == Dialect::DLB) return raw;
                                    // [O,I,kh,kw] -> [kh,kw,I,O]
                                    Tensor out(raw.dtype(), canonical);
                                    int64_t O = out_channels, I = ci, KH = kernel[0],
                                            KW = kernel[1];
                                    for (int64_t o = 0; o < O; ++o)
                                        for (int64_t i = 0; i < I; ++i)
                                            for (int64_t dh = 0; dh < KH; ++dh)
                                                for (int64_t dw = 0; dw < KW; ++dw)
                                                    out.set(((dh * KW + dw) * I + i) * O + o,
                                                            raw.get(((o * I + i) * KH + dh) * KW +
                                                                    dw));
                                    return out;
                                });
        std::vector<std::string> weight_names{name + ".weight"};
        builder.initializer(name + ".weight", std::move(w));
        if (has_bias) {
            Tensor b = fetch_weight(name + ".bias", {out_channels}, {out_channels}, fan_in,
                                    [](const Tensor& raw) { return raw; });
            builder.initializer(name + ".bias", std::move(b));
            weight_names.push_back(name + ".bias");
        }
        builder.node(name, OpKind::Conv2D, {in}, a, weight_names);

        auto gm = kernels::conv_geometry(vi.dims, a);
        values[name] = {{gm.n, gm.oh, gm.ow, gm.co}, OpKind::Conv2D, vi.dims};
    }

    void add_dense(const std::string& name, const std::string& in, int64_t out_features,
                   bool has_bias) {
        const ValueInfo& vi = info(name, in);
        if (vi.dims.size() != 2) bad(name + ": dense input must be rank 2");
        int64_t in_features = vi.dims[1];

        Attrs a;
        a.out_features = out_features;
        a.has_bias = has_bias;

        // DLA stores [out,in]; rows additionally follow the NCHW
        // flattening when the input came from a rank-4 flatten, so they
        // are permuted CHW -> HWC on the way in.
        bool permute_rows = dialect == Dialect::DLA && vi.producer == OpKind::Flatten &&
                            vi.producer_input_dims.size() == 4;
        std::vector<int64_t> canonical{in_features, out_features};
        std::vector<int64_t> dialect_dims = dialect == Dialect::DLA
                                                ? std::vector<int64_t>{out_features, in_features}
                                                : canonical;
        Tensor w = fetch_weight(
            name + ".weight", canonical, dialect_dims, in_features, [&](const Tensor& raw) {
                if (dialect == Dialect::DLB) return raw;
                Tensor out(raw.dtype(), canonical);
                int64_t H = permute_rows ? vi.producer_input_dims[1] : 0;
                int64_t W = permute_rows ? vi.producer_input_dims[2] : 0;
                int64_t C = permute_rows ? vi.producer_input_dims[3] : 0;
                for (int64_t r = 0; r < in_features; ++r) {
                    int64_t q = r;
                    if (permute_rows) {
                        int64_t c = r % C, w_ = (r / C) % W, h = r / (C * W);
                        q = c * H * W + h * W + w_;
                    }
                    for (int64_t o = 0; o < out_features; ++o)
                        out.set(r * out_features + o, raw.get(o * in_features + q));
                }
                return out;
            });
        std::vector<std::string> weight_names{name + ".weight"};
        builder.initializer(name + ".weight", std::move(w));
        if (has_bias) {
            Tensor b = fetch_weight(name + ".bias", {out_features}, {out_features}, in_features,
                                    [](const Tensor& raw) { return raw; });
            builder.initializer(name + ".bias", std::move(b));
            weight_names.push_back(name + ".bias");
        }
        builder.node(name, OpKind::Dense, {in}, a, weight_names);
        values[name] = {{vi.dims[0], out_features}, OpKind::Dense, vi.dims};
    }

    void add_node(const json& jn) {
        std::string name = jn.at("name").get<std::string>();
        std::string op = jn.at("op").get<std::string>();
        std::vector<std::string> ins = jn.value("inputs", std::vector<std::string>{});
        json attrs = jn.value("attrs", json::object());
        if (values.count(name)) bad("duplicate node name " + name);

        auto one_input = [&]() -> const std::string& {
            if (ins.size() != 1) bad(name + ": " + op + " takes exactly one input");
            return ins[0];
        };
        auto two_inputs = [&]() {
            if (ins.size() != 2) bad(name + ": " + op + " takes exactly two inputs");
        };

        bool dla = dialect == Dialect::DLA;
        if (op == "conv2d") {
            int64_t out_channels = dla ? attrs.at("out_channels").get<int64_t>()
                                       : attrs.at("filters").get<int64_t>();
            auto kernel = pair_attr(attrs, dla ? "kernel" : "kernel_size", true);
            auto stride = pair_attr(attrs, dla ? "stride" : "strides", false, {1, 1});
            bool bias = dla ? attrs.value("bias", true) : attrs.value("use_bias", true);
            add_conv(name, one_input(), out_channels, kernel, stride, padding_attr(attrs), bias);
            return;
        }
        if ((dla && op == "max_pool2d") || (!dla && op == "max_pooling2d")) {
            auto kernel = pair_attr(attrs, dla ? "kernel" : "pool_size", true);
            auto stride = pair_attr(attrs, dla ? "stride" : "strides", false, kernel);
            const std::string& in = one_input();
            const ValueInfo& vi = info(name, in);
            if (vi.dims.size() != 4) bad(name + ": pooling input must be rank 4");
            Attrs a;
            a.kernel = kernel;
            a.stride = stride;
            builder.node(name, OpKind::MaxPool2D, {in}, a);
            auto gm = kernels::pool_geometry(vi.dims, a);
            values[name] = {{gm.n, gm.oh, gm.ow, gm.c}, OpKind::MaxPool2D, vi.dims};
            return;
        }
        if (dla && op == "adaptive_avg_pool2d") {
            auto out_hw = pair_attr(attrs, "output_size", true);
            const std::string& in = one_input();
            const ValueInfo& vi = info(name, in);
            if (vi.dims.size() != 4) bad(name + ": pooling input must be rank 4");
            Attrs a;
            a.out_hw = out_hw;
            builder.node(name, OpKind::AdaptiveAvgPool2D, {in}, a);
            values[name] = {{vi.dims[0], out_hw[0], out_hw[1], vi.dims[3]},
                            OpKind::AdaptiveAvgPool2D,
                            vi.dims};
            return;
        }
        if (!dla && op == "global_avg_pool2d") {
            const std::string& in = one_input();
            const ValueInfo& vi = info(name, in);
            if (vi.dims.size() != 4) bad(name + ": pooling input must be rank 4");
            Attrs a;
            a.out_hw = {1, 1};
            builder.node(name, OpKind::AdaptiveAvgPool2D, {in}, a);
            values[name] = {{vi.dims[0], 1, 1, vi.dims[3]}, OpKind::AdaptiveAvgPool2D, vi.dims};
            return;
        }
        if ((dla && op == "linear") || (!dla && op == "dense")) {
            int64_t out = dla ? attrs.at("out_features").get<int64_t>()
                              : attrs.at("units").get<int64_t>();
            bool bias = dla ? attrs.value("bias", true) : attrs.value("use_bias", true);
            add_dense(name, one_input(), out, bias);
            return;
        }
        if (op == "relu" || op == "identity" || op == "flatten") {
            const std::string& in = one_input();
            const ValueInfo& vi = info(name, in);
            OpKind kind = op == "relu" ? OpKind::ReLU
                                       : (op == "identity" ? OpKind::Identity : OpKind::Flatten);
            builder.node(name, kind, {in});
            if (kind == OpKind::Flatten) {
                if (vi.dims.size() < 2) bad(name + ": flatten input must be rank >= 2");
                int64_t rest = 1;
                for (size_t i = 1; i < vi.dims.size(); ++i) rest *= vi.dims[i];
                values[name] = {{vi.dims[0], rest}, OpKind::Flatten, vi.dims};
            } else {
                values[name] = {vi.dims, kind, vi.dims};
            }
            return;
        }
        if (op == "add" || op == "mul") {
            two_inputs();
            const ValueInfo& a = info(name, ins[0]);
            const ValueInfo& b = info(name, ins[1]);
            if (a.dims != b.dims) bad(name + ": operand shapes differ");
            builder.node(name, op == "add" ? OpKind::Add : OpKind::Mul, {ins[0], ins[1]});
            values[name] = {a.dims, op == "add" ? OpKind::Add : OpKind::Mul, a.dims};
            return;
        }
        if (op == "cumsum") {
            const std::string& in = one_input();
            const ValueInfo& vi = info(name, in);
            int64_t rank = static_cast<int64_t>(vi.dims.size());
            Attrs a;
            if (dla) {
                int64_t dim = attrs.at("dim").get<int64_t>();
                if (dim < 0) dim += rank;
                if (dim < 0 || dim >= rank) bad(name + ": cumsum dim out of range");
                a.axis = rank == 4 ? remap_nchw_axis(dim) : dim;
                // DLA cumsums are inclusive-forward only.
            } else {
                int64_t axis = attrs.at("axis").get<int64_t>();
                if (axis < 0) axis += rank;
                if (axis < 0 || axis >= rank) bad(name + ": cumsum axis out of range");
                a.axis = axis;
                a.exclusive = attrs.value("exclusive", false);
                a.reverse = attrs.value("reverse", false);
            }
            builder.node(name, OpKind::CumSum, {in}, a);
            values[name] = {vi.dims, OpKind::CumSum, vi.dims};
            return;
        }
        if (op == "const") {
            if (!ins.empty()) bad(name + ": const takes no inputs");
            if (!attrs.contains("shape")) bad(name + ": const requires a shape attribute");
            std::vector<int64_t> dims = attrs.at("shape").get<std::vector<int64_t>>();
            if (dla && dims.size() == 4) dims = nchw_to_nhwc(dims);
            std::string weight_name = name + ".value";
            Tensor payload =
                fetch_weight(weight_name, dims,
                             dla && dims.size() == 4
                                 ? std::vector<int64_t>{dims[0], dims[3], dims[1], dims[2]}
                                 : dims,
                             std::max<int64_t>(element_count(dims), 1),
                             [&](const Tensor& raw) {
                                 if (dla && dims.size() == 4) {
                                     Tensor out(raw.dtype(), dims);
                                     int64_t N = dims[0], H = dims[1], W = dims[2], C = dims[3];
                                     for (int64_t n = 0; n < N; ++n)
                                         for (int64_t c = 0; c < C; ++c)
                                             for (int64_t h = 0; h < H; ++h)
                                                 for (int64_t w = 0; w < W; ++w)
                                                     out.set(((n * H + h) * W + w) * C + c,
                                                             raw.get(((n * C + c) * H + h) * W +
                                                                     w));
                                     return out;
                                 }
                                 return raw;
                             });
            builder.initializer(weight_name, std::move(payload));
            builder.node(name, OpKind::Const, {}, {}, {weight_name});
            values[name] = {dims, OpKind::Const, {}};
            return;
        }
        throw Error(Error::Code::UnknownOp,
                    name + ": unknown op \"" + op + "\" in dialect " + dialect_name(dialect));
    }
};

} // namespace

Model parse_model(const std::string& document, const WeightStore* weights) {
    json j;
    try {
        j = json::parse(document);
    } catch (const json::exception& e) {
        bad(std::string("invalid JSON: ") + e.what());
    }
    if (!j.contains("dialect")) bad("missing dialect tag");
    std::string dialect_tag = j.at("dialect").get<std::string>();
    Dialect dialect;
    if (dialect_tag == "dla")
        dialect = Dialect::DLA;
    else if (dialect_tag == "dlb")
        dialect = Dialect::DLB;
    else
        bad("unknown dialect \"" + dialect_tag + "\"");

    uint64_t seed = j.value("seed", 0ull);
    std::string name = j.value("name", "model");

    if (!j.contains("inputs") || j.at("inputs").empty()) bad("model declares no inputs");
    DType dtype = DType::F32;
    {
        std::string dt = j.at("inputs")[0].value("dtype", "f32");
        if (dt == "f64")
            dtype = DType::F64;
        else if (dt != "f32")
            bad("dtype must be f32 or f64");
    }

    Converter cv(dialect, dtype, seed, weights);
    int32_t next_sym = 0;

    for (const json& ji : j.at("inputs")) {
        std::string in_name = ji.at("name").get<std::string>();
        std::string dt = ji.value("dtype", "f32");
        if ((dt == "f64") != (dtype == DType::F64)) bad("all inputs must share one dtype");
        const json& shape_j = ji.at("shape");
        std::vector<std::optional<int64_t>> doc_shape;
        for (const json& d : shape_j)
            doc_shape.push_back(d.is_null() ? std::nullopt
                                            : std::optional<int64_t>(d.get<int64_t>()));
        std::vector<int64_t> doc_seed;
        if (ji.contains("seed_shape")) doc_seed = ji.at("seed_shape").get<std::vector<int64_t>>();

        // DLA rank-4 inputs are declared NCHW; canonical is NHWC.
        std::vector<size_t> order(doc_shape.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        if (dialect == Dialect::DLA && doc_shape.size() == 4) order = {0, 2, 3, 1};

        Shape shape;
        shape.layout = doc_shape.size() == 4 ? Layout::NHWC
                                             : (doc_shape.size() == 2 ? Layout::FLAT : Layout::RAW);
        std::vector<int64_t> seed_dims;
        for (size_t canon = 0; canon < order.size(); ++canon) {
            size_t src = order[canon];
            if (doc_shape[src].has_value()) {
                shape.dims.push_back(Dim::fixed(*doc_shape[src]));
                seed_dims.push_back(*doc_shape[src]);
            } else {
                if (src >= doc_seed.size())
                    throw Error(Error::Code::MissingSeed,
                                in_name + ": axis " + std::to_string(src) +
                                    " is dynamic but seed_shape is missing");
                shape.dims.push_back(Dim::sym(next_sym++, doc_seed[src]));
                seed_dims.push_back(doc_seed[src]);
            }
        }
        cv.builder.input(in_name, TensorType{shape, dtype}, /*materialize_node=*/true);
        cv.values[in_name] = {seed_dims, OpKind::Input, {}};
    }
    cv.builder.graph().next_sym_id = next_sym;

    for (const json& jn : j.value("nodes", json::array())) cv.add_node(jn);

    if (!j.contains("outputs") || j.at("outputs").empty()) bad("model declares no outputs");
    for (const json& jo : j.at("outputs")) cv.builder.output(jo.get<std::string>());

    Model model;
    model.graph = cv.builder.build();
    model.name = name;
    model.dialect = dialect;
    model.seed = seed;
    model.weights_file = j.value("weights_file", "");

    auto diags = hlir::validate(model.graph);
    if (!diags.empty())
        bad("document produced an invalid graph: " + diags[0].node + ": " + diags[0].message);
    return model;
}

Model load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Error::Code::BadDocument, "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();

    // Peek at weights_file so initializers resolve against it.
    WeightStore store;
    const WeightStore* store_ptr = nullptr;
    try {
        json j = json::parse(buf.str());
        if (j.contains("weights_file")) {
            auto wf = std::filesystem::path(path).parent_path() /
                      j.at("weights_file").get<std::string>();
            store = load_weights_file(wf.string());
            store_ptr = &store;
        }
    } catch (const json::exception&) {
        // parse_model reports the malformed document
    }
    return parse_model(buf.str(), store_ptr);
}

} // namespace nnc::ingest
