#pragma once

#include <map>
#include <string>
#include <vector>

#include "nnc/hlir.hpp"

namespace nnc::autodiff {

/// The three execution versions derived from one optimized graph.
///
/// train_fwd is the input graph plus taps: MaxPool2D nodes feeding the
/// backward pass grow an argmax output, and every SaveSet value is
/// appended to the graph outputs. train_bwd takes the saved values and
/// one "d.<output>" gradient per graph output, and produces one
/// gradient value per trainable initializer.
struct VersionSet {
    hlir::Graph inference;
    hlir::Graph train_fwd;
    hlir::Graph train_bwd;

    /// Values retained between forward and backward, in forward
    /// production order. Each is consumed by train_bwd (no dead saves).
    std::vector<std::string> save_set;
    /// Backward inputs carrying loss gradients, "d.<output>", in graph
    /// output order.
    std::vector<std::string> output_grads;
    /// Trainable initializer -> backward output value holding its
    /// gradient.
    std::map<std::string, std::string> weight_grads;
    /// Graph input -> gradient value (only when requested).
    std::map<std::string, std::string> input_grads;
};

struct DeriveOptions {
    bool input_gradients = false;
};

/// Initializers referenced through Conv2D/Dense weight lists; Const
/// payloads are not trainable.
std::vector<std::string> trainable_weights(const hlir::Graph& g);

VersionSet derive_versions(const hlir::Graph& g, const DeriveOptions& opts = {});

/// Compares every trainable-weight gradient against central finite
/// differences (step h) of the scalar loss sum|y - t| with fixed
/// random targets. Requires f64 and fully fixed shapes. Returns the
/// max elementwise relative error (denominators clamped at 1e-8).
double grad_check(const hlir::Graph& g, uint64_t seed, double h = 1e-5);

} // namespace nnc::autodiff
