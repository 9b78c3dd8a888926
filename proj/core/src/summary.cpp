#include <sstream>

#include "nnc/error.hpp"
#include "nnc/ingest.hpp"
#include "nnc/passes.hpp"

namespace nnc::ingest {

using hlir::Dim;
using hlir::Graph;
using hlir::Node;
using hlir::OpKind;

namespace {

const char* display_type(OpKind op) {
    switch (op) {
        case OpKind::Input: return "InputLayer";
        case OpKind::MaxPool2D: return "MaxPooling2D";
        default: return hlir::op_name(op);
    }
}

std::string shape_string(const hlir::Shape& s, bool bracketed) {
    std::ostringstream os;
    if (bracketed) os << '[';
    os << '(';
    for (size_t i = 0; i < s.dims.size(); ++i) {
        if (i) os << ", ";
        if (s.dims[i].is_sym())
            os << "None";
        else
            os << s.dims[i].seed_extent();
    }
    os << ')';
    if (bracketed) os << ']';
    return os.str();
}

// Keras-style fixed-width row: fields truncated/padded at columns
// 29/55/65, previous column's last char turned into the separator
// space, trailing whitespace stripped.
std::string format_row(const std::string& c0, const std::string& c1, const std::string& c2) {
    const size_t positions[3] = {29, 55, 65};
    const std::string* fields[3] = {&c0, &c1, &c2};
    std::string line;
    for (int i = 0; i < 3; ++i) {
        if (i > 0 && !line.empty()) line.back() = ' ';
        line += *fields[i];
        if (line.size() > positions[i]) line.resize(positions[i]);
        line.append(positions[i] - line.size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    return line;
}

} // namespace

std::string format_with_commas(int64_t value) {
    std::string digits = std::to_string(value);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        ++count;
    }
    return {out.rbegin(), out.rend()};
}

std::pair<std::vector<SummaryRow>, int64_t> count_params(const Graph& g) {
    if (g.value_types.empty() && !g.nodes.empty())
        throw Error(Error::Code::BadDocument, "count_params requires inferred shapes");

    std::vector<SummaryRow> rows;
    for (const std::string& name : hlir::topo_order(g)) {
        const Node& n = *g.find_node(name);
        const hlir::TensorType* t = g.type_of(n.outputs[0]);
        SummaryRow row;
        row.layer = n.name;
        row.type = display_type(n.op);
        row.output_shape = t ? shape_string(t->shape, n.op == OpKind::Input) : "?";
        for (const std::string& w : n.weights) {
            auto it = g.initializers.find(w);
            if (it != g.initializers.end()) row.params += it->second.elements();
        }
        rows.push_back(std::move(row));
    }
    int64_t total = 0;
    for (const auto& [name, t] : g.initializers) total += t.elements();
    return {std::move(rows), total};
}

std::string render_summary(const std::string& model_name, const Graph& g) {
    const Graph* gp = &g;
    Graph annotated;
    if (g.value_types.empty() && !g.nodes.empty()) {
        annotated = passes::infer_shapes(g).graph;
        gp = &annotated;
    }
    auto [rows, total] = count_params(*gp);

    std::string bar_thin(65, '_');
    std::string bar_thick(65, '=');
    std::ostringstream os;
    os << "Model: \"" << model_name << "\"\n";
    os << bar_thin << '\n';
    os << format_row("Layer (type)", "Output Shape", "Param #") << '\n';
    os << bar_thick << '\n';
    for (const SummaryRow& r : rows)
        os << format_row(r.layer + " (" + r.type + ")", r.output_shape,
                         std::to_string(r.params))
           << '\n';
    os << bar_thick << '\n';
    os << "Total params: " << format_with_commas(total) << '\n';
    os << "Trainable params: " << format_with_commas(total) << '\n';
    os << "Non-trainable params: 0\n";
    os << bar_thin << '\n';
    return os.str();
}

} // namespace nnc::ingest
