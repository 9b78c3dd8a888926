#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nnc/hlir.hpp"

namespace nnc::ingest {

/* ------------------------------------------------------------------ */
/*  Dialects                                                           */
/* ------------------------------------------------------------------ */

/// The two ingestion formats modeling incompatible framework
/// conventions.
///
///   DLA ("torch-like"):  NCHW layout; conv kernel [O,I,kh,kw]; dense
///       weight [out,in]; adaptive_avg_pool2d{output_size};
///       cumsum{dim} inclusive-forward only; dense op name "linear".
///   DLB ("keras-like"):  NHWC layout; conv kernel [kh,kw,I,O]; dense
///       weight [in,out]; global_avg_pool2d (no attrs, maps to
///       AdaptiveAvgPool2D{1,1}); cumsum{axis,exclusive,reverse};
///       pooling op name "max_pooling2d".
///
/// Both lower into the canonical NHWC HLIR; DLA tensors, weights and
/// axis attributes are permuted on the way in.
enum class Dialect : uint8_t { DLA = 0, DLB = 1 };

const char* dialect_name(Dialect d);

/* ------------------------------------------------------------------ */
/*  Weight container (SOLW)                                            */
/* ------------------------------------------------------------------ */

/// Binary container: 16-byte header (magic "SOLW", u32 version=1,
/// u32 tensor count, u32 reserved=0), then per tensor: u32 name
/// length, name bytes, u8 dtype code (0=f32, 1=f64), u32 rank,
/// rank x u64 dims, raw little-endian data.
struct WeightStore {
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& at(const std::string& name) const { return tensors.at(name); }
};

WeightStore load_weights(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> save_weights(const WeightStore& store);
WeightStore load_weights_file(const std::string& path);
void save_weights_file(const WeightStore& store, const std::string& path);

/* ------------------------------------------------------------------ */
/*  Model documents                                                    */
/* ------------------------------------------------------------------ */

struct Model {
    hlir::Graph graph;
    std::string name;        // document "name", default "model"
    Dialect dialect = Dialect::DLB;
    uint64_t seed = 0;
    std::string weights_file;  // as written in the document, may be empty
};

/// Parses a model document (UTF-8 JSON) into a validated canonical
/// NHWC graph. Missing initializers are created deterministically:
/// uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a 64-bit LCG
/// stream keyed by (document seed XOR fnv1a64(tensor name)).
Model parse_model(const std::string& document, const WeightStore* weights = nullptr);

/// Reads the document and, when it names a weights_file, the container
/// next to it.
Model load_model_file(const std::string& path);

/// The deterministic initializer stream, exposed so tests and docs can
/// pin it. Advances state once before the first draw.
class InitStream {
public:
    InitStream(uint64_t document_seed, const std::string& tensor_name);
    double uniform(double lo, double hi);

private:
    uint64_t state_;
};

uint64_t fnv1a64(const std::string& text);

/* ------------------------------------------------------------------ */
/*  Summaries                                                          */
/* ------------------------------------------------------------------ */

struct SummaryRow {
    std::string layer;
    std::string type;
    std::string output_shape;   // "(None, 56, 56, 64)"; input rows bracketed
    int64_t params = 0;
};

/// Rows in topological order (Input nodes included); total is the sum
/// of all initializer element counts. Requires inferred shapes.
std::pair<std::vector<SummaryRow>, int64_t> count_params(const hlir::Graph& g);

/// Keras-style fixed-width table; byte-stable for golden tests.
std::string render_summary(const std::string& model_name, const hlir::Graph& g);

std::string format_with_commas(int64_t value);

} // namespace nnc::ingest
