#include "sparsekit/tuner.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

namespace sparsekit {

std::vector<DataflowConfig> default_space() {
    std::vector<DataflowConfig> space;
    DataflowConfig c;
    c.kind = DataflowKind::gather_gemm_scatter;
    space.push_back(c);
    c.kind = DataflowKind::fetch_on_demand;
    space.push_back(c);
    for (int s = 0; s <= 4; ++s) {
        for (const TilePreset& tile : {tile_small(), tile_large()}) {
            DataflowConfig ig;
            ig.kind = DataflowKind::implicit_gemm;
            ig.splits = s;
            ig.tile = tile;
            space.push_back(ig);
        }
    }
    return space;
}

const char* to_string(BindingScheme s) {
    return s == BindingScheme::workload_pattern ? "workload_pattern" : "sparse_mapping";
}

BindingScheme binding_scheme_from_string(const std::string& s) {
    if (s == "workload_pattern" || s == "workload") return BindingScheme::workload_pattern;
    if (s == "sparse_mapping" || s == "mapping") return BindingScheme::sparse_mapping;
    throw ValidationError("unknown binding scheme: " + s);
}

bool config_valid_for_group(const DataflowConfig& cfg, const LayerGroup& g) {
    // relational maps have no dense offset grid to sort or split over
    return !(g.graph && cfg.kind == DataflowKind::implicit_gemm);
}

RunnerProbe::RunnerProbe(NetworkRunner& runner, std::vector<SparseTensor> samples,
                         int warmup, int runs)
    : runner_(runner), samples_(std::move(samples)), warmup_(warmup), runs_(runs) {
    if (samples_.empty()) throw ValidationError("probe needs at least one sample input");
    if (runs_ < 1) throw ValidationError("probe needs at least one timed run");
}

double RunnerProbe::measure_ms(const GroupAssignment& asg, const PhaseMask& mask) {
    double sum = 0;
    for (const SparseTensor& s : samples_) {
        for (int i = 0; i < warmup_; ++i) runner_.measure_ms(s, asg, mask);
        std::vector<double> times(runs_);
        for (int i = 0; i < runs_; ++i) times[i] = runner_.measure_ms(s, asg, mask);
        std::nth_element(times.begin(), times.begin() + runs_ / 2, times.end());
        sum += times[runs_ / 2];
    }
    return sum / static_cast<double>(samples_.size());
}

double RunnerProbe::modeled_traffic(int group, const DataflowConfig& cfg) {
    return runner_.modeled_group_traffic(group, cfg);
}

GroupAssignment TuneResult::assignment() const {
    GroupAssignment asg(groups.size());
    for (const GroupChoice& g : groups) {
        GroupConfig gc;
        gc.forward = g.forward;
        gc.dgrad = g.dgrad.value_or(g.forward);
        gc.wgrad = g.wgrad.value_or(g.forward);
        asg[g.id] = gc;
    }
    return asg;
}

namespace {

// Applies a candidate config to the phases a pass is tuning.
using Binder = void (*)(GroupConfig&, const DataflowConfig&);

// One greedy pass. Mutates `current` group by group; returns the winning
// measurement of the last group, i.e. the measured latency of the final
// assignment restricted to this pass's phases.
double greedy_pass(const std::vector<LayerGroup>& groups,
                   const std::vector<DataflowConfig>& space, LatencyProbe& probe,
                   const PhaseMask& mask, Binder bind, int pass,
                   GroupAssignment& current, std::vector<MeasurementRecord>& log,
                   std::vector<DataflowConfig>& winners) {
    double pass_latency = 0;
    for (const LayerGroup& g : groups) {
        double best_ms = std::numeric_limits<double>::infinity();
        double best_traffic = std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (size_t si = 0; si < space.size(); ++si) {
            const DataflowConfig& cfg = space[si];
            if (!config_valid_for_group(cfg, g)) continue;
            GroupAssignment trial = current;
            bind(trial[g.id], cfg);
            double ms = probe.measure_ms(trial, mask);
            log.push_back({pass, g.id, cfg, ms});
            double traffic = probe.modeled_traffic(g.id, cfg);
            if (ms < best_ms ||
                (ms == best_ms && traffic < best_traffic)) {
                best_ms = ms;
                best_traffic = traffic;
                best_idx = static_cast<int>(si);
            }
        }
        if (best_idx < 0)
            throw ValidationError("no valid config in the design space for group " +
                                  std::to_string(g.id));
        bind(current[g.id], space[best_idx]);
        winners[g.id] = space[best_idx];
        pass_latency = best_ms;
    }
    return pass_latency;
}

void check_space(const std::vector<DataflowConfig>& space) {
    if (space.empty()) throw ValidationError("design space is empty");
    for (const DataflowConfig& c : space) validate(c);
}

std::vector<std::string> names_of(const NetworkSpec& net, const LayerGroup& g) {
    std::vector<std::string> out;
    for (int l : g.layers) out.push_back(net.layers[l].name);
    return out;
}

}  // namespace

TuneResult tune_inference(const NetworkSpec& net,
                          const std::vector<DataflowConfig>& space,
                          LatencyProbe& measure, uint64_t seed) {
    check_space(space);
    auto t0 = std::chrono::steady_clock::now();
    std::vector<LayerGroup> groups = partition_groups(net);
    GroupAssignment current(groups.size());
    std::vector<DataflowConfig> winners(groups.size());

    TuneResult res;
    res.seed = seed;
    res.latency_ms = greedy_pass(
        groups, space, measure, PhaseMask{true, false, false},
        [](GroupConfig& gc, const DataflowConfig& c) { gc.forward = c; }, 0, current,
        res.log, winners);

    for (const LayerGroup& g : groups) {
        GroupChoice gc;
        gc.id = g.id;
        gc.layer_names = names_of(net, g);
        gc.forward = winners[g.id];
        res.groups.push_back(std::move(gc));
    }
    res.tuning_wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count();
    return res;
}

TuneResult tune_training(const NetworkSpec& net,
                         const std::vector<DataflowConfig>& space,
                         BindingScheme scheme, LatencyProbe& measure, uint64_t seed) {
    check_space(space);
    auto t0 = std::chrono::steady_clock::now();
    std::vector<LayerGroup> groups = partition_groups(net);
    GroupAssignment current(groups.size());
    std::vector<DataflowConfig> pass1(groups.size()), pass2(groups.size());

    TuneResult res;
    res.seed = seed;

    double lat1, lat2;
    if (scheme == BindingScheme::workload_pattern) {
        lat1 = greedy_pass(
            groups, space, measure, PhaseMask{true, true, false},
            [](GroupConfig& gc, const DataflowConfig& c) {
                gc.forward = c;
                gc.dgrad = c;
            },
            0, current, res.log, pass1);
        lat2 = greedy_pass(
            groups, space, measure, PhaseMask{false, false, true},
            [](GroupConfig& gc, const DataflowConfig& c) { gc.wgrad = c; }, 1, current,
            res.log, pass2);
    } else {
        lat1 = greedy_pass(
            groups, space, measure, PhaseMask{true, false, false},
            [](GroupConfig& gc, const DataflowConfig& c) { gc.forward = c; }, 0, current,
            res.log, pass1);
        lat2 = greedy_pass(
            groups, space, measure, PhaseMask{false, true, true},
            [](GroupConfig& gc, const DataflowConfig& c) {
                gc.dgrad = c;
                gc.wgrad = c;
            },
            1, current, res.log, pass2);
    }
    res.latency_ms = lat1 + lat2;

    for (const LayerGroup& g : groups) {
        GroupChoice gc;
        gc.id = g.id;
        gc.layer_names = names_of(net, g);
        if (scheme == BindingScheme::workload_pattern) {
            gc.forward = pass1[g.id];
            gc.dgrad = pass1[g.id];
            gc.wgrad = pass2[g.id];
        } else {
            gc.forward = pass1[g.id];
            gc.dgrad = pass2[g.id];
            gc.wgrad = pass2[g.id];
        }
        res.groups.push_back(std::move(gc));
    }
    res.tuning_wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace sparsekit
