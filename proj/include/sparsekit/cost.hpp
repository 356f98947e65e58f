#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsekit/exec.hpp"
#include "sparsekit/kmap.hpp"

namespace sparsekit {

// Warp-level MAC accounting and first-order DRAM traffic model. Counts are in
// scalar MACs (pair count x C_in x C_out). Pure functions over immutable maps.
//
// Modeled DRAM bytes, elem_bytes per scalar:
//   gather_gemm_scatter  write: (sum|M| * C_in + sum|M| * C_out + N_out * C_out)
//                        read:  (sum|M| * C_in        [feature gather]
//                              + sum|M| * C_in        [gather buffer into GEMM]
//                              + K^D * C_in * C_out   [weights]
//                              + sum|M| * C_out       [GEMM output into scatter]
//                              + N_out * C_out)       [scatter read-modify-write]
//   fetch_on_demand      write: sum|M| * C_out        [accumulating output writes]
//                        read:  (sum|M| * C_in + K^D * C_in * C_out
//                              + sum|M| * C_out)      [output read-modify-write]
//   implicit_gemm (s splits, s=0 counts as one execution split)
//                        write: (s_eff * N_out + [s_eff>1] * N_out) * C_out
//                        read:  (sum_splits padded_rows * split_width * C_in
//                                         [A tile via map, zero rows charged]
//                              + K^D * C_in * C_out
//                              + [s_eff>1] * s_eff * N_out * C_out)  [reduction]
struct CostReport {
    int64_t effective_macs = 0;
    int64_t redundant_macs = 0;
    int64_t dram_read_bytes = 0;
    int64_t dram_write_bytes = 0;
    int64_t mapping_ops = 0;  // map build/sort/pad element touches
};

// Lockstep MAC accounting over a prepared OS map: rows grouped into warps of
// `warp_rows` consecutive rows per split (pad rows included); a warp is
// charged warp_rows * C_in * C_out for every split offset where any of its
// rows has a neighbor.
std::pair<int64_t, int64_t> count_macs(const KernelMapOS& map, const TilePreset& tile,
                                       int c_in, int c_out);

CostReport traffic_model(const KernelMapOS& raw_map, const DataflowConfig& cfg,
                         int c_in, int c_out, int elem_bytes);

struct SplitSweepRow {
    int splits = 0;
    CostReport report;
};

std::vector<SplitSweepRow> split_sweep(const KernelMapOS& raw_map,
                                       const std::vector<int>& split_range,
                                       const TilePreset& tile, int c_in, int c_out,
                                       int elem_bytes = 4);

// CSV: layer,dataflow,splits,effective_macs,redundant_macs,read_bytes,write_bytes,mapping_ops
std::string cost_csv_header();
std::string cost_csv_row(const std::string& layer, const DataflowConfig& cfg,
                         const CostReport& r);

}  // namespace sparsekit
