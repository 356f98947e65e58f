#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparsekit/network.hpp"

namespace sparsekit {

// {gather_gemm_scatter, fetch_on_demand} with the default tile, plus
// implicit_gemm x splits {0..4} x tiles {small, large}; reorder offline
// everywhere. 12 entries.
std::vector<DataflowConfig> default_space();

enum class BindingScheme { workload_pattern, sparse_mapping };

const char* to_string(BindingScheme s);
BindingScheme binding_scheme_from_string(const std::string& s);

// Latency source the tuner searches over. The production probe wraps a
// NetworkRunner and sample inputs; tests inject synthetic oracles.
// modeled_traffic is only consulted to break measurement ties.
class LatencyProbe {
public:
    virtual ~LatencyProbe() = default;
    virtual double measure_ms(const GroupAssignment& asg, const PhaseMask& mask) = 0;
    virtual double modeled_traffic(int group, const DataflowConfig& cfg) {
        (void)group; (void)cfg;
        return 0.0;
    }
};

// Median of `runs` timed calls after `warmup` untimed ones, averaged over the
// samples. Warmups absorb one-time map building so candidates compare on
// steady-state kernel time.
class RunnerProbe : public LatencyProbe {
public:
    RunnerProbe(NetworkRunner& runner, std::vector<SparseTensor> samples,
                int warmup = 2, int runs = 5);
    double measure_ms(const GroupAssignment& asg, const PhaseMask& mask) override;
    double modeled_traffic(int group, const DataflowConfig& cfg) override;

private:
    NetworkRunner& runner_;
    std::vector<SparseTensor> samples_;
    int warmup_;
    int runs_;
};

struct MeasurementRecord {
    int pass = 0;  // 0 = first tuning pass, 1 = second (training only)
    int group = 0;
    DataflowConfig cfg;
    double ms = 0;
};

struct GroupChoice {
    int id = 0;
    std::vector<std::string> layer_names;
    DataflowConfig forward;
    std::optional<DataflowConfig> dgrad;
    std::optional<DataflowConfig> wgrad;
};

struct TuneResult {
    std::vector<GroupChoice> groups;
    double latency_ms = 0;      // measured latency of the returned assignment
    double tuning_wall_ms = 0;
    uint64_t seed = 0;
    std::vector<MeasurementRecord> log;

    GroupAssignment assignment() const;
};

bool config_valid_for_group(const DataflowConfig& cfg, const LayerGroup& g);

// Greedy pass over groups in first-appearance order: groups before the one
// under test keep their tuned config, groups after it stay at the default
// (gather_gemm_scatter). Exactly (#groups) x |space| probe calls; ties break
// on (modeled traffic, space order).
TuneResult tune_inference(const NetworkSpec& net,
                          const std::vector<DataflowConfig>& space,
                          LatencyProbe& measure, uint64_t seed = 0);

// Two greedy passes, 2 x (#groups) x |space| probe calls.
// workload_pattern: pass 1 tunes a bound (forward, dgrad) pair timing those
// phases; pass 2 tunes wgrad. sparse_mapping: pass 1 tunes forward alone;
// pass 2 tunes a bound (dgrad, wgrad) pair.
TuneResult tune_training(const NetworkSpec& net,
                         const std::vector<DataflowConfig>& space,
                         BindingScheme scheme, LatencyProbe& measure,
                         uint64_t seed = 0);

}  // namespace sparsekit
