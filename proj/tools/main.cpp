#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cli_support.hpp"
#include "nnc/autodiff.hpp"
#include "nnc/backends.hpp"
#include "nnc/error.hpp"
#include "nnc/ingest.hpp"
#include "nnc/plan.hpp"
#include "nnc/runtime.hpp"
#include "nnc/schedule.hpp"

namespace fs = std::filesystem;
using namespace nnc;

namespace {

struct AssignPolicy {
    std::string cost_model_file;   // CSV node,backend,cost -> injected tuning
    bool measured = false;

    backends::BackendAssignment operator()(const hlir::Graph& g) const {
        if (!cost_model_file.empty())
            return backends::tune(g, load_injected(g, cost_model_file));
        if (measured) return backends::tune(g, backends::CostModel::measured());
        return backends::default_assignment(g);
    }

    static backends::CostModel load_injected(const hlir::Graph& g, const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(Error::Code::BadDocument, "cannot open cost model " + path);
        std::map<std::pair<std::string, backends::BackendId>, double> costs;
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (first && line.rfind("node,", 0) == 0) {
                first = false;
                continue;  // header
            }
            first = false;
            std::istringstream ls(line);
            std::string node, backend, cost;
            if (!std::getline(ls, node, ',') || !std::getline(ls, backend, ',') ||
                !std::getline(ls, cost, ','))
                throw Error(Error::Code::BadDocument, "cost model: bad line \"" + line + "\"");
            backends::BackendId id;
            if (!backends::parse_backend(backend, id))
                throw Error(Error::Code::BadDocument, "cost model: unknown backend " + backend);
            costs[{node, id}] = std::stod(cost);
        }
        (void)g;
        return backends::CostModel::injected_from(std::move(costs));
    }
};

struct CompiledModel {
    ingest::Model model;
    passes::OptimizeResult optimized;
    autodiff::VersionSet versions;
    plan::VersionPlans plans;
};

CompiledModel compile_model(const std::string& path, const passes::VdimBinding& binding,
                            const AssignPolicy& policy) {
    CompiledModel out;
    out.model = ingest::load_model_file(path);
    out.optimized = passes::optimize(out.model.graph, binding);
    out.versions = autodiff::derive_versions(out.optimized.graph);
    out.plans = plan::compile_version_set(out.versions, policy);
    return out;
}

runtime::HostModel model_for_plan(const plan::ExecutionPlan& p, const std::string& plan_path,
                                  const std::string& weights_override) {
    std::string weights = weights_override;
    if (weights.empty() && !p.weights_file.empty())
        weights = (fs::path(plan_path).parent_path() / p.weights_file).string();
    if (weights.empty())
        throw Error(Error::Code::BadDocument, "plan names no weights file; pass --weights");
    return runtime::HostModel::from_store(ingest::load_weights_file(weights));
}

int cmd_inspect(const std::string& model_path) {
    ingest::Model m = ingest::load_model_file(model_path);
    std::cout << ingest::render_summary(m.name, m.graph);
    return 0;
}

int cmd_optimize(const std::string& model_path, const std::string& out_plan,
                 const std::string& vdims, const AssignPolicy& policy) {
    auto binding = cli::parse_vdims_flag(vdims);
    CompiledModel cm = compile_model(model_path, binding, policy);
    std::cout << cm.optimized.report.render();

    // The plan references weights by name; ship them next to it.
    fs::path plan_path(out_plan);
    fs::path weights_path = plan_path;
    weights_path.replace_extension(".solw");
    ingest::WeightStore store;
    store.tensors = cm.optimized.graph.initializers;
    ingest::save_weights_file(store, weights_path.string());

    plan::ExecutionPlan inference = cm.plans.inference;
    inference.weights_file = weights_path.filename().string();
    plan::save_plan_file(inference, out_plan);
    std::cout << "plan: " << out_plan << " (" << inference.values.size() << " values, "
              << inference.groups.size() << " kernels)\n";
    std::cout << "weights: " << weights_path.string() << "\n";
    return 0;
}

int cmd_tune(const std::string& model_path, const std::string& report_path,
             const AssignPolicy& policy) {
    ingest::Model m = ingest::load_model_file(model_path);
    auto optimized = passes::optimize(m.graph, {});
    backends::CostModel cost = policy.cost_model_file.empty()
                                   ? backends::CostModel::measured()
                                   : AssignPolicy::load_injected(optimized.graph,
                                                                 policy.cost_model_file);
    auto report = backends::tune_with_report(optimized.graph, cost);
    std::cout << report.render_text();
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw Error(Error::Code::BadDocument, "cannot write " + report_path);
        out << report.render_csv();
    }
    return 0;
}

int cmd_memory(const std::string& model_path, int64_t batch, int64_t align,
               const std::string& format, const AssignPolicy& policy) {
    passes::VdimBinding binding;
    if (batch > 0) binding.items[0] = {passes::VdimBinding::Action::Override, batch};
    CompiledModel cm = compile_model(model_path, binding, policy);

    if (!cm.plans.inference.vdims.empty())
        std::cerr << "warning: unbound dynamic dims evaluated at their seed extents\n";
    auto estimate = schedule::estimate_peak(cm.plans, align);
    auto inference_tl = schedule::plan_timeline(cm.plans.inference, align);
    auto training_tl = schedule::training_timeline(cm.plans, align);
    if (format == "csv") {
        std::cout << schedule::memory_report_csv(training_tl);
    } else {
        std::cout << schedule::render_peak_block(estimate) << "\n";
        std::cout << "Inference timeline:\n"
                  << schedule::memory_report_text(inference_tl) << "\n";
        std::cout << "Training timeline:\n" << schedule::memory_report_text(training_tl);
    }
    return 0;
}

int cmd_run(const std::string& plan_path, const std::string& input_path,
            const std::string& output_path, const std::string& device_kind,
            const std::string& device_state, const std::string& weights_override,
            int64_t align) {
    plan::ExecutionPlan p = plan::load_plan_file(plan_path);
    runtime::HostModel model = model_for_plan(p, plan_path, weights_override);

    std::map<std::string, Tensor> inputs;
    for (const auto& [name, t] : ingest::load_weights_file(input_path).tensors)
        inputs.emplace(name, t);

    runtime::ExecOptions opts;
    opts.alignment = align;

    std::map<std::string, Tensor> outputs;
    if (device_kind == "offload") {
        runtime::OffloadDevice device;
        if (!device_state.empty()) {
            auto state = cli::load_device_state(device_state);
            for (const std::string& w : p.weight_names) {
                auto it = state.find(w);
                if (it == state.end() || !model.has(w)) continue;
                const Tensor& t = model.tensor(w);
                if (cli::weight_content_hash(t) == it->second)
                    device.preseed(w, t, model.stamp(w),
                                   schedule::align_bytes(t.byte_size(), align));
            }
        }
        outputs = runtime::execute(p, inputs, model, &device, opts);
        auto stats = device.sync_stats();
        std::cerr << "sync: weight_bytes=" << stats.weight_bytes << " h2d=" << stats.h2d_bytes
                  << " d2h=" << stats.d2h_bytes << "\n";
        if (!device_state.empty()) cli::save_device_state(device_state, model);
    } else if (device_kind == "host") {
        outputs = runtime::execute(p, inputs, model, nullptr, opts);
    } else {
        throw CLI::ValidationError("--device must be host or offload");
    }

    ingest::WeightStore out_store;
    out_store.tensors = outputs;
    ingest::save_weights_file(out_store, output_path);
    return 0;
}

int cmd_train(const std::string& model_path, const std::string& data_path, int epochs, double lr,
              const std::string& out_weights, const AssignPolicy& policy) {
    CompiledModel cm = compile_model(model_path, {}, policy);
    if (cm.optimized.graph.inputs.size() != 1)
        throw Error(Error::Code::BadDocument, "train expects a single-input model");

    auto data = ingest::load_weights_file(data_path);
    const std::string& in_name = cm.optimized.graph.inputs[0].name;
    if (!data.has(in_name) || !data.has("target"))
        throw Error(Error::Code::BadDocument,
                    "data file must hold \"" + in_name + "\" and \"target\"");
    std::map<std::string, Tensor> feed{{in_name, data.at(in_name)}};
    Tensor target = data.at("target");

    runtime::HostModel model = runtime::HostModel::from_graph(cm.optimized.graph);
    for (int e = 0; e < epochs; ++e) {
        double loss = runtime::train_step(cm.plans, feed, target, model, lr);
        std::cout << "epoch " << e << " loss " << loss << "\n";
    }
    ingest::save_weights_file(model.to_store(), out_weights);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"miniature neural-network compiler and runtime"};
    app.require_subcommand(1);

    std::string model_path, plan_path, input_path, output_path, weights_path, data_path;
    std::string vdims, report_path, format = "text";
    std::string device_kind = "host", device_state;
    int64_t batch = 0, align = 64;
    int epochs = 100;
    double lr = 0.1;
    AssignPolicy policy;

    auto* inspect = app.add_subcommand("inspect", "print the layer summary table");
    inspect->add_option("model", model_path, "model document (JSON)")->required();

    auto add_policy = [&](CLI::App* cmd) {
        cmd->add_option("--cost-model", policy.cost_model_file,
                        "CSV (node,backend,cost) for injected tuning");
        cmd->add_flag("--tune-measured", policy.measured, "autotune with wall-clock timings");
    };

    auto* optimize = app.add_subcommand("optimize", "compile a model into a plan");
    optimize->add_option("model", model_path)->required();
    optimize->add_option("-o,--out", plan_path, "output plan file")->required();
    optimize->add_option("--vdims", vdims, "dynamic dims, e.g. \"#0=true,#1=8\"");
    add_policy(optimize);

    auto* deploy = app.add_subcommand("deploy", "alias of optimize for deployment");
    deploy->add_option("model", model_path)->required();
    deploy->add_option("-o,--out", plan_path)->required();
    deploy->add_option("--vdims", vdims);
    add_policy(deploy);

    auto* tune = app.add_subcommand("tune", "report per-layer backend costs");
    tune->add_option("model", model_path)->required();
    tune->add_option("--report", report_path, "write CSV report here");
    tune->add_option("--cost-model", policy.cost_model_file);

    auto* memory = app.add_subcommand("memory", "estimate peak memory");
    memory->add_option("model", model_path)->required();
    memory->add_option("--batch", batch, "override vdim #0");
    memory->add_option("--align", align, "allocation alignment (bytes)");
    memory->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));
    add_policy(memory);

    auto* run = app.add_subcommand("run", "execute a compiled plan");
    run->add_option("plan", plan_path)->required();
    run->add_option("--input", input_path, "input tensors (SOLW)")->required();
    run->add_option("--output", output_path, "output tensors (SOLW)")->required();
    run->add_option("--device", device_kind)->check(CLI::IsMember({"host", "offload"}));
    run->add_option("--device-state", device_state, "persist the offload weight cache");
    run->add_option("--weights", weights_path, "override the plan's weight container");
    run->add_option("--align", align);

    auto* exec = app.add_subcommand("exec", "alias of run");
    exec->add_option("plan", plan_path)->required();
    exec->add_option("--input", input_path)->required();
    exec->add_option("--output", output_path)->required();
    exec->add_option("--device", device_kind)->check(CLI::IsMember({"host", "offload"}));
    exec->add_option("--device-state", device_state);
    exec->add_option("--weights", weights_path);
    exec->add_option("--align", align);

    auto* train = app.add_subcommand("train", "L1/SGD training loop");
    train->add_option("model", model_path)->required();
    train->add_option("--data", data_path, "batch tensors (SOLW)")->required();
    train->add_option("--epochs", epochs);
    train->add_option("--lr", lr);
    train->add_option("--out", weights_path, "trained weights (SOLW)")->required();
    add_policy(train);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors are exit 1; --help is 0
    }

    try {
        if (*inspect) return cmd_inspect(model_path);
        if (*optimize) return cmd_optimize(model_path, plan_path, vdims, policy);
        if (*deploy) return cmd_optimize(model_path, plan_path, vdims, policy);
        if (*tune) return cmd_tune(model_path, report_path, policy);
        if (*memory) return cmd_memory(model_path, batch, align, format, policy);
        if (*run) return cmd_run(plan_path, input_path, output_path, device_kind, device_state,
                                 weights_path, align);
        if (*exec) return cmd_run(plan_path, input_path, output_path, device_kind, device_state,
                                  weights_path, align);
        if (*train) return cmd_train(model_path, data_path, epochs, lr, weights_path, policy);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
