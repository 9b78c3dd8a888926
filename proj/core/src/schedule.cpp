#include "nnc/schedule.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nnc/error.hpp"
#include "nnc/plan.hpp"

namespace nnc::schedule {

const char* category_name(MemCategory c) {
    switch (c) {
        case MemCategory::Parameter: return "parameter";
        case MemCategory::Input: return "input";
        case MemCategory::Output: return "output";
        case MemCategory::Intermediate: return "intermediate";
        case MemCategory::Saved: return "saved";
    }
    return "?";
}

MemoryTimeline build_timeline(std::vector<MemoryEvent> events, std::vector<std::string> labels) {
    MemoryTimeline t;
    t.events = std::move(events);
    t.step_labels = std::move(labels);

    int32_t max_step = static_cast<int32_t>(t.step_labels.size()) - 1;
    for (const MemoryEvent& e : t.events) max_step = std::max(max_step, e.step);
    while (static_cast<int32_t>(t.step_labels.size()) <= max_step)
        t.step_labels.push_back("step" + std::to_string(t.step_labels.size()));

    size_t steps = t.step_labels.size();
    t.step_peak.assign(steps, 0);
    t.step_breakdown.assign(steps, {});

    int64_t total = 0;
    std::map<MemCategory, int64_t> running;
    size_t ei = 0;
    for (size_t s = 0; s < steps; ++s) {
        int64_t peak_here = total;
        std::map<MemCategory, int64_t> snap = running;
        while (ei < t.events.size() && t.events[ei].step == static_cast<int32_t>(s)) {
            const MemoryEvent& e = t.events[ei];
            int64_t delta = e.kind == MemoryEvent::Kind::Alloc ? e.bytes : -e.bytes;
            total += delta;
            running[e.category] += delta;
            if (total > peak_here) {
                peak_here = total;
                snap = running;
            }
            ++ei;
        }
        t.step_peak[s] = peak_here;
        t.step_breakdown[s] = snap;
        if (peak_here > t.peak_bytes) {
            t.peak_bytes = peak_here;
            t.peak_step = static_cast<int32_t>(s);
        }
    }
    t.resident_end_bytes = total;
    return t;
}

/* ------------------------------------------------------------------ */
/*  Reports                                                            */
/* ------------------------------------------------------------------ */

namespace {

int64_t cat(const std::map<MemCategory, int64_t>& m, MemCategory c) {
    auto it = m.find(c);
    return it == m.end() ? 0 : it->second;
}

std::string rjust(const std::string& s, size_t w) {
    return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

std::string ljust(std::string s, size_t w) {
    if (s.size() > w) s.resize(w);
    while (s.size() < w) s.push_back(' ');
    return s;
}

} // namespace

std::string memory_report_text(const MemoryTimeline& t) {
    std::ostringstream os;
    os << ljust("step", 5) << ljust("group", 28) << rjust("param", 12) << rjust("input", 10)
       << rjust("output", 10) << rjust("interm", 10) << rjust("saved", 10) << rjust("total", 12)
       << "  usage\n";
    const int bar_width = 24;
    for (size_t s = 0; s < t.step_labels.size(); ++s) {
        const auto& b = t.step_breakdown[s];
        int bar = t.peak_bytes > 0
                      ? static_cast<int>((t.step_peak[s] * bar_width + t.peak_bytes - 1) /
                                         t.peak_bytes)
                      : 0;
        os << ljust(std::to_string(s), 5) << ljust(t.step_labels[s], 28)
           << rjust(std::to_string(cat(b, MemCategory::Parameter)), 12)
           << rjust(std::to_string(cat(b, MemCategory::Input)), 10)
           << rjust(std::to_string(cat(b, MemCategory::Output)), 10)
           << rjust(std::to_string(cat(b, MemCategory::Intermediate)), 10)
           << rjust(std::to_string(cat(b, MemCategory::Saved)), 10)
           << rjust(std::to_string(t.step_peak[s]), 12) << "  " << std::string(bar, '#') << '\n';
    }
    os << "peak: " << t.peak_bytes << " bytes at step " << t.peak_step << " ("
       << t.step_labels[t.peak_step] << ")\n";
    return os.str();
}

std::string memory_report_csv(const MemoryTimeline& t) {
    std::ostringstream os;
    os << "step,group,parameter,input,output,intermediate,saved,total\n";
    for (size_t s = 0; s < t.step_labels.size(); ++s) {
        const auto& b = t.step_breakdown[s];
        os << s << ',' << t.step_labels[s] << ',' << cat(b, MemCategory::Parameter) << ','
           << cat(b, MemCategory::Input) << ',' << cat(b, MemCategory::Output) << ','
           << cat(b, MemCategory::Intermediate) << ',' << cat(b, MemCategory::Saved) << ','
           << t.step_peak[s] << '\n';
    }
    return os.str();
}

/* ------------------------------------------------------------------ */
/*  Peak estimation                                                    */
/* ------------------------------------------------------------------ */

namespace {

std::vector<MemoryEvent> materialize_events(const plan::BoundPlan& bp) {
    const plan::ExecutionPlan& p = *bp.plan;
    std::vector<MemoryEvent> out;
    out.reserve(p.events.size());
    for (const plan::PlanEvent& e : p.events) {
        MemoryEvent m;
        m.step = e.step;
        m.kind = e.alloc ? MemoryEvent::Kind::Alloc : MemoryEvent::Kind::Free;
        m.value = p.values[e.slot].name;
        m.bytes = bp.values[e.slot].bytes;
        m.category = p.values[e.slot].category;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<std::string> plan_labels(const plan::ExecutionPlan& p) {
    std::vector<std::string> labels{"init"};
    for (const auto& es : p.exec_steps) labels.push_back(es.label);
    return labels;
}

} // namespace

MemoryTimeline plan_timeline(const plan::ExecutionPlan& p, int64_t alignment,
                             const std::map<int32_t, int64_t>* bindings) {
    plan::BoundPlan bp = plan::bind_plan(p, alignment, bindings, /*allow_seed_fallback=*/true);
    return build_timeline(materialize_events(bp), plan_labels(p));
}

MemoryTimeline training_timeline(const plan::VersionPlans& plans, int64_t alignment,
                                 const std::map<int32_t, int64_t>* bindings) {
    plan::BoundPlan fwd = plan::bind_plan(plans.train_fwd, alignment, bindings, true);
    plan::BoundPlan bwd = plan::bind_plan(plans.train_bwd, alignment, bindings, true);

    std::vector<MemoryEvent> events = materialize_events(fwd);
    std::vector<std::string> labels = plan_labels(plans.train_fwd);
    int32_t offset = static_cast<int32_t>(labels.size());

    // Values carried across the boundary (parameters, SaveSet) are not
    // re-allocated by the backward portion.
    std::unordered_set<std::string> live;
    for (const MemoryEvent& e : events) {
        if (e.kind == MemoryEvent::Kind::Alloc)
            live.insert(e.value);
        else
            live.erase(e.value);
    }
    labels.push_back("backward-init");
    for (const auto& es : plans.train_bwd.exec_steps) labels.push_back(es.label);

    for (const MemoryEvent& e : materialize_events(bwd)) {
        MemoryEvent m = e;
        m.step += offset;
        if (m.kind == MemoryEvent::Kind::Alloc) {
            if (live.count(m.value)) continue;
            live.insert(m.value);
        } else {
            live.erase(m.value);
        }
        events.push_back(std::move(m));
    }
    return build_timeline(std::move(events), std::move(labels));
}

PeakEstimate estimate_peak(const plan::VersionPlans& plans, int64_t alignment,
                           const std::map<int32_t, int64_t>* bindings) {
    PeakEstimate e;
    e.inference_bytes = plan_timeline(plans.inference, alignment, bindings).peak_bytes;
    e.training_bytes = training_timeline(plans, alignment, bindings).peak_bytes;
    return e;
}

std::string render_peak_block(const PeakEstimate& e) {
    auto mb = [](int64_t bytes) {
        return (bytes + (1 << 19)) >> 20;  // half-up at 1 MB granularity
    };
    std::ostringstream os;
    os << "Estimated Peak Memory Consumption:\n";
    os << "Inference: ~" << mb(e.inference_bytes) << "MB\n";
    os << "Training:  ~" << mb(e.training_bytes) << "MB\n";
    return os.str();
}

} // namespace nnc::schedule
