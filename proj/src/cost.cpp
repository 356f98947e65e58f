#include "sparsekit/cost.hpp"

#include <sstream>

namespace sparsekit {

std::pair<int64_t, int64_t> count_macs(const KernelMapOS& map, const TilePreset& tile,
                                       int c_in, int c_out) {
    const int64_t unit = static_cast<int64_t>(c_in) * c_out;
    const int w = tile.warp_rows;
    int64_t effective = map.nonsentinel_entries() * unit;
    int64_t charged = 0;
    for (const auto& sp : map.splits) {
        const int width = sp.width();
        const int n_warps = (sp.n_rows + w - 1) / w;
        for (int wi = 0; wi < n_warps; ++wi) {
            const int r0 = wi * w;
            const int r1 = std::min(sp.n_rows, r0 + w);
            for (int j = 0; j < width; ++j) {
                bool active = false;
                for (int r = r0; r < r1 && !active; ++r)
                    active = sp.entry(r, j) != kSentinel;
                // a lockstep lane with no work still burns cycles, pad rows
                // and missing tail lanes included
                if (active) charged += static_cast<int64_t>(w) * unit;
            }
        }
    }
    return {effective, charged - effective};
}

namespace {

int64_t mapping_ops_for(const KernelMapOS& raw, const KernelMapOS* prepared) {
    // element touches: one per OS cell built, plus bitmask + permutation
    // touches per split and pad-row writes
    int64_t ops = static_cast<int64_t>(raw.n_out) * raw.num_offsets;
    if (prepared) {
        for (const auto& sp : prepared->splits)
            ops += 2ll * sp.n_rows * sp.width();
    }
    return ops;
}

}  // namespace

CostReport traffic_model(const KernelMapOS& raw_map, const DataflowConfig& cfg,
                         int c_in, int c_out, int elem_bytes) {
    validate(cfg);
    const int64_t pairs = raw_map.nonsentinel_entries();
    const int64_t n_out = raw_map.n_out;
    const int64_t kd = raw_map.num_offsets;
    const int64_t unit = static_cast<int64_t>(c_in) * c_out;
    const int64_t wbytes_unit = elem_bytes;

    CostReport r;
    switch (cfg.kind) {
        case DataflowKind::gather_gemm_scatter: {
            r.effective_macs = pairs * unit;
            r.redundant_macs = 0;
            r.dram_write_bytes = (pairs * c_in + pairs * c_out + n_out * c_out) * wbytes_unit;
            r.dram_read_bytes = (2 * pairs * c_in + kd * unit + pairs * c_out +
                                 n_out * c_out) * wbytes_unit;
            r.mapping_ops = mapping_ops_for(raw_map, nullptr);
            break;
        }
        case DataflowKind::fetch_on_demand: {
            r.effective_macs = pairs * unit;
            r.redundant_macs = 0;
            r.dram_write_bytes = pairs * c_out * wbytes_unit;
            r.dram_read_bytes = (pairs * c_in + kd * unit + pairs * c_out) * wbytes_unit;
            r.mapping_ops = mapping_ops_for(raw_map, nullptr);
            break;
        }
        case DataflowKind::implicit_gemm: {
            KernelMapOS prepared = prepare_os_map(raw_map, cfg);
            auto [eff, red] = count_macs(prepared, cfg.tile, c_in, c_out);
            r.effective_macs = eff;
            r.redundant_macs = red;
            const int64_t s_eff = std::max<size_t>(1, prepared.splits.size());
            const int64_t reduction = s_eff > 1 ? 1 : 0;
            r.dram_write_bytes = (s_eff * n_out + reduction * n_out) * c_out * wbytes_unit;
            int64_t a_tile_loads = 0;  // sentinel rows load a zero row, charged too
            for (const auto& sp : prepared.splits)
                a_tile_loads += static_cast<int64_t>(sp.n_rows) * sp.width() * c_in;
            r.dram_read_bytes = (a_tile_loads + kd * unit +
                                 reduction * s_eff * n_out * c_out) * wbytes_unit;
            r.mapping_ops = mapping_ops_for(raw_map, &prepared);
            break;
        }
    }
    return r;
}

std::vector<SplitSweepRow> split_sweep(const KernelMapOS& raw_map,
                                       const std::vector<int>& split_range,
                                       const TilePreset& tile, int c_in, int c_out,
                                       int elem_bytes) {
    std::vector<SplitSweepRow> rows;
    for (int s : split_range) {
        DataflowConfig cfg;
        cfg.kind = DataflowKind::implicit_gemm;
        cfg.splits = s;
        cfg.tile = tile;
        SplitSweepRow row;
        row.splits = s;
        row.report = traffic_model(raw_map, cfg, c_in, c_out, elem_bytes);
        rows.push_back(row);
    }
    return rows;
}

std::string cost_csv_header() {
    return "layer,dataflow,splits,effective_macs,redundant_macs,read_bytes,"
           "write_bytes,mapping_ops";
}

std::string cost_csv_row(const std::string& layer, const DataflowConfig& cfg,
                         const CostReport& r) {
    std::ostringstream os;
    os << layer << ',' << to_string(cfg.kind) << ',' << cfg.splits << ','
       << r.effective_macs << ',' << r.redundant_macs << ',' << r.dram_read_bytes
       << ',' << r.dram_write_bytes << ',' << r.mapping_ops;
    return os.str();
}

}  // namespace sparsekit
