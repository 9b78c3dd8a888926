#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nnc::plan {
struct ExecutionPlan;
struct VersionPlans;
} // namespace nnc::plan

namespace nnc::schedule {

enum class MemCategory : uint8_t {
    Parameter = 0,
    Input = 1,
    Output = 2,
    Intermediate = 3,
    Saved = 4,
};

const char* category_name(MemCategory c);

inline int64_t align_bytes(int64_t bytes, int64_t alignment) {
    return (bytes + alignment - 1) / alignment * alignment;
}

/// One allocation-schedule entry. Step 0 is the plan prologue
/// (parameters and inputs); step k >= 1 is the k-th group. Every Alloc
/// has exactly one later Free except plan-resident values (parameters,
/// outputs, forward-saved tensors and gradient buffers).
struct MemoryEvent {
    int32_t step = 0;
    enum class Kind : uint8_t { Alloc = 0, Free = 1 } kind = Kind::Alloc;
    std::string value;
    int64_t bytes = 0;      // aligned
    MemCategory category = MemCategory::Intermediate;
};

struct MemoryTimeline {
    std::vector<MemoryEvent> events;
    std::vector<std::string> step_labels;           // index 0 = prologue
    std::vector<int64_t> step_peak;                 // within-step running peak
    std::vector<std::map<MemCategory, int64_t>> step_breakdown;  // at the step's peak
    int64_t peak_bytes = 0;
    int32_t peak_step = 0;
    int64_t resident_end_bytes = 0;
};

/// Prefix-sum replay of an event list.
MemoryTimeline build_timeline(std::vector<MemoryEvent> events, std::vector<std::string> labels);

std::string memory_report_text(const MemoryTimeline& t);
std::string memory_report_csv(const MemoryTimeline& t);

/* ------------------------------------------------------------------ */
/*  Peak estimation over compiled plans                                */
/* ------------------------------------------------------------------ */

struct PeakEstimate {
    int64_t inference_bytes = 0;
    int64_t training_bytes = 0;
};

/// Timeline of one plan at the given alignment; free symbols take
/// their binding when provided, else their seeds.
MemoryTimeline plan_timeline(const plan::ExecutionPlan& p, int64_t alignment,
                             const std::map<int32_t, int64_t>* bindings = nullptr);

/// Concatenated train_fwd + train_bwd timeline. SaveSet values and the
/// shared parameters stay live across the boundary; gradient buffers
/// survive to the end.
MemoryTimeline training_timeline(const plan::VersionPlans& plans, int64_t alignment,
                                 const std::map<int32_t, int64_t>* bindings = nullptr);

PeakEstimate estimate_peak(const plan::VersionPlans& plans, int64_t alignment,
                           const std::map<int32_t, int64_t>* bindings = nullptr);

/// The two-line block: "Inference: ~XMB" / "Training:  ~YMB", MB
/// rounded half-up at 1 MB (2^20 bytes) granularity.
std::string render_peak_block(const PeakEstimate& e);

} // namespace nnc::schedule
