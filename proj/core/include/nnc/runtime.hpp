#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nnc/ingest.hpp"
#include "nnc/plan.hpp"

namespace nnc::runtime {

/* ------------------------------------------------------------------ */
/*  Host model                                                         */
/* ------------------------------------------------------------------ */

/// Host-resident weights with per-tensor version stamps. Stamps are
/// monotone and bump on every mutation, including no-op updates.
struct HostModel {
    std::map<std::string, Tensor> weights;
    std::map<std::string, uint64_t> stamps;

    static HostModel from_graph(const hlir::Graph& g);
    static HostModel from_store(const ingest::WeightStore& store);
    ingest::WeightStore to_store() const;

    bool has(const std::string& name) const { return weights.count(name) != 0; }
    const Tensor& tensor(const std::string& name) const;
    uint64_t stamp(const std::string& name) const;
    void set(const std::string& name, Tensor value);   // bumps the stamp
    void bump(const std::string& name);
};

/* ------------------------------------------------------------------ */
/*  Offload device                                                     */
/* ------------------------------------------------------------------ */

struct SyncStats {
    uint64_t h2d_bytes = 0;
    uint64_t d2h_bytes = 0;
    uint64_t weight_bytes = 0;                        // h2d spent on weights
    std::map<std::string, uint64_t> weight_transfers; // per-weight copy counts
};

/// Simulated accelerator: a separate byte store with a version-stamped
/// weight cache. Kernels only touch device buffers; all host<->device
/// traffic runs through the copy counters.
class OffloadDevice {
public:
    struct CachedWeight {
        std::vector<uint8_t> bytes;    // aligned device buffer
        uint64_t stamp = 0;
    };

    /// Returns the device buffer for a weight, copying from the host
    /// only when the cached stamp is stale.
    uint8_t* sync_weight(const std::string& name, const Tensor& host, uint64_t stamp,
                         int64_t aligned_bytes);

    void count_h2d(int64_t bytes) { stats_.h2d_bytes += static_cast<uint64_t>(bytes); }
    void count_d2h(int64_t bytes) { stats_.d2h_bytes += static_cast<uint64_t>(bytes); }

    SyncStats sync_stats(bool reset = false);

    /// Marks a weight as already device-resident (persisted cache state).
    void preseed(const std::string& name, const Tensor& host, uint64_t stamp,
                 int64_t aligned_bytes);
    const std::map<std::string, CachedWeight>& cache() const { return cache_; }

private:
    std::map<std::string, CachedWeight> cache_;
    SyncStats stats_;
};

/* ------------------------------------------------------------------ */
/*  Execution                                                          */
/* ------------------------------------------------------------------ */

struct ExecOptions {
    int64_t alignment = 64;
    std::map<int32_t, int64_t> bindings;            // vdim id -> extent
    std::vector<std::string>* trace = nullptr;      // phase/kernel log
    /// When set, only these outputs are copied back to host tensors.
    const std::set<std::string>* materialize = nullptr;
};

/// Live value buffers plus exact byte accounting. One context runs one
/// plan at a time; a training step shares one context across forward
/// and backward so saved tensors stay in place.
class ExecutionContext {
public:
    explicit ExecutionContext(int64_t alignment = 64) : alignment_(alignment) {}

    int64_t current_bytes() const { return current_; }
    int64_t high_water() const { return high_; }
    int64_t alignment() const { return alignment_; }
    /// Arena capacity; checked when >= 0 (ArenaOverflow).
    int64_t capacity = -1;

    bool live(const std::string& name) const { return buffers_.count(name) != 0; }
    uint8_t* data(const std::string& name);

    uint8_t* alloc(const std::string& name, int64_t bytes);
    /// Accounts for an externally owned buffer (device weight cache).
    void adopt(const std::string& name, uint8_t* ptr, int64_t bytes);
    void release(const std::string& name);
    void release_all();

private:
    struct Buffer {
        std::vector<uint8_t> owned;
        uint8_t* ptr = nullptr;
        int64_t bytes = 0;
    };
    std::map<std::string, Buffer> buffers_;
    int64_t alignment_;
    int64_t current_ = 0;
    int64_t high_ = 0;
};

/// Runs a plan. Inputs bind free vdims (explicit bindings win on
/// conflict -> ShapeMismatch); weights come from the model, through the
/// device cache when offloaded. Returns materialized outputs by name.
std::map<std::string, Tensor> execute(const plan::ExecutionPlan& p,
                                      const std::map<std::string, Tensor>& inputs,
                                      const HostModel& model, OffloadDevice* device = nullptr,
                                      const ExecOptions& opts = {},
                                      ExecutionContext* shared_ctx = nullptr);

/* ------------------------------------------------------------------ */
/*  Framework-side kernels                                             */
/* ------------------------------------------------------------------ */

struct L1Result {
    double loss = 0;
    Tensor grad;   // d loss / d pred, sign(pred - target) / N with sign(0) = 0
};

L1Result l1_loss(const Tensor& pred, const Tensor& target);

/// w <- w - lr * g elementwise; stamps bump even at lr = 0.
void sgd_step(HostModel& model, const std::map<std::string, Tensor>& grads, double lr);

/// One forward / loss / backward / update cycle; returns the loss.
/// The model must expose exactly one prediction output. A caller-owned
/// context exposes the shared forward+backward instrumentation.
double train_step(const plan::VersionPlans& plans, const std::map<std::string, Tensor>& inputs,
                  const Tensor& target, HostModel& model, double lr,
                  OffloadDevice* device = nullptr, const ExecOptions& opts = {},
                  ExecutionContext* shared_ctx = nullptr);

} // namespace nnc::runtime
