#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "golden.hpp"
#include "sparsekit/cost.hpp"

using namespace sparsekit;

namespace {

KernelMapOS fig_os() {
    return build_kmap_os(golden::fig_in(), golden::fig_out(), {1, 1, 1},
                         OffsetSet(2, 3));
}

TilePreset warp4() {
    TilePreset t = tile_small();
    t.cta_m = 4;
    t.warp_rows = 4;
    return t;
}

// Independent recount: walk every (warp, offset column) and charge
// warp_rows * C_in * C_out when any lane is active.
int64_t charged_oracle(const KernelMapOS& map, int w, int c_in, int c_out) {
    int64_t charged = 0;
    for (const auto& sp : map.splits) {
        for (int r0 = 0; r0 < sp.n_rows; r0 += w) {
            for (int j = 0; j < sp.width(); ++j) {
                bool active = false;
                for (int r = r0; r < std::min(sp.n_rows, r0 + w); ++r)
                    active = active || sp.entry(r, j) != kSentinel;
                if (active) charged += static_cast<int64_t>(w) * c_in * c_out;
            }
        }
    }
    return charged;
}

}  // namespace

TEST_CASE("toy instance MAC counts: 22 effective; 34/26/22 redundant") {
    KernelMapOS raw = fig_os();
    TilePreset t = warp4();

    auto [eff0, red0] = count_macs(pad_map(split_and_sort(raw, 0), 4), t, 1, 1);
    CHECK(eff0 == golden::kFigEffectiveMacs);
    CHECK(red0 == golden::kFigRedundantUnsorted);

    auto [eff1, red1] = count_macs(pad_map(split_and_sort(raw, 1), 4), t, 1, 1);
    CHECK(eff1 == golden::kFigEffectiveMacs);
    CHECK(red1 == golden::kFigRedundantS1);

    auto [eff3, red3] = count_macs(pad_map(split_and_sort(raw, 3), 4), t, 1, 1);
    CHECK(eff3 == golden::kFigEffectiveMacs);
    CHECK(red3 == golden::kFigRedundantS3);
}

TEST_CASE("count_macs agrees with an independent warp recount") {
    for (uint64_t seed : {3u, 4u, 5u}) {
        auto inst = golden::make_random_instance(seed, 500, 3, 7, 1, Precision::f64);
        for (int s : {0, 1, 2, 4}) {
            DataflowConfig cfg;
            cfg.kind = DataflowKind::implicit_gemm;
            cfg.splits = s;
            KernelMapOS prepared = prepare_os_map(inst.os, cfg);
            auto [eff, red] = count_macs(prepared, cfg.tile, 3, 7);
            CHECK(eff == inst.os.nonsentinel_entries() * 21);
            CHECK(eff + red == charged_oracle(prepared, cfg.tile.warp_rows, 3, 7));
            CHECK(red >= 0);
        }
    }
}

TEST_CASE("traffic ratio identity: fod writes / igemm(s=1) writes = pairs/N_out") {
    for (uint64_t seed : {10u, 11u}) {
        auto inst = golden::make_random_instance(seed, 600, 4, 4, 1, Precision::f32);
        DataflowConfig fod;
        fod.kind = DataflowKind::fetch_on_demand;
        DataflowConfig ig1;
        ig1.kind = DataflowKind::implicit_gemm;
        ig1.splits = 1;
        CostReport rf = traffic_model(inst.os, fod, 4, 4, 4);
        CostReport ri = traffic_model(inst.os, ig1, 4, 4, 4);
        // both sides integer byte counts; the ratio is exactly sum|M|/N_out
        CHECK(rf.dram_write_bytes * inst.os.n_out ==
              inst.os.nonsentinel_entries() * ri.dram_write_bytes);
    }
}

TEST_CASE("traffic model scales with element width and config") {
    auto inst = golden::make_random_instance(20, 400, 2, 3, 1, Precision::f32);
    const int64_t pairs = inst.os.nonsentinel_entries();
    const int64_t n_out = inst.os.n_out;

    DataflowConfig ggs;
    CostReport r4 = traffic_model(inst.os, ggs, 2, 3, 4);
    CostReport r8 = traffic_model(inst.os, ggs, 2, 3, 8);
    CHECK(r8.dram_read_bytes == 2 * r4.dram_read_bytes);
    CHECK(r4.dram_write_bytes == (pairs * 2 + pairs * 3 + n_out * 3) * 4);
    CHECK(r4.effective_macs == pairs * 6);
    CHECK(r4.redundant_macs == 0);

    DataflowConfig fod;
    fod.kind = DataflowKind::fetch_on_demand;
    CHECK(traffic_model(inst.os, fod, 2, 3, 4).dram_write_bytes == pairs * 3 * 4);

    // one split writes each output once; s splits add one partial write per
    // split plus the reduction pass
    DataflowConfig ig;
    ig.kind = DataflowKind::implicit_gemm;
    ig.splits = 1;
    CHECK(traffic_model(inst.os, ig, 2, 3, 4).dram_write_bytes == n_out * 3 * 4);
    ig.splits = 3;
    CHECK(traffic_model(inst.os, ig, 2, 3, 4).dram_write_bytes == (3 + 1) * n_out * 3 * 4);
}

TEST_CASE("implicit GEMM redundant MACs come from the prepared map") {
    KernelMapOS raw = fig_os();
    DataflowConfig ig;
    ig.kind = DataflowKind::implicit_gemm;
    ig.splits = 1;
    ig.tile = warp4();
    CostReport r = traffic_model(raw, ig, 1, 1, 4);
    CHECK(r.effective_macs == golden::kFigEffectiveMacs);
    CHECK(r.redundant_macs == golden::kFigRedundantS1);
    CHECK(r.mapping_ops > 0);
}

TEST_CASE("split_sweep covers the requested split range") {
    auto inst = golden::make_random_instance(30, 400, 1, 1, 1, Precision::f32);
    auto rows = split_sweep(inst.os, {0, 1, 2, 3}, tile_small(), 1, 1);
    REQUIRE(rows.size() == 4);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].splits == static_cast<int>(i));
        CHECK(rows[i].report.effective_macs == inst.os.nonsentinel_entries());
    }
    // sorting with one split never hurts the lockstep model
    CHECK(rows[1].report.redundant_macs <= rows[0].report.redundant_macs);
}

TEST_CASE("cost CSV layout") {
    CHECK(cost_csv_header() ==
          "layer,dataflow,splits,effective_macs,redundant_macs,read_bytes,"
          "write_bytes,mapping_ops");
    DataflowConfig cfg;
    cfg.kind = DataflowKind::implicit_gemm;
    cfg.splits = 2;
    CostReport r;
    r.effective_macs = 10;
    r.redundant_macs = 3;
    r.dram_read_bytes = 100;
    r.dram_write_bytes = 50;
    r.mapping_ops = 7;
    CHECK(cost_csv_row("conv1", cfg, r) == "conv1,implicit_gemm,2,10,3,100,50,7");
}

TEST_CASE("empty maps cost nothing") {
    KernelMapWS ws;
    ws.dims = 3;
    ws.num_offsets = 27;
    ws.pairs.resize(27);
    KernelMapOS os = ws_to_os(ws);
    DataflowConfig ig;
    ig.kind = DataflowKind::implicit_gemm;
    ig.splits = 1;
    CostReport r = traffic_model(os, ig, 4, 4, 4);
    CHECK(r.effective_macs == 0);
    CHECK(r.redundant_macs == 0);
    CHECK(r.dram_write_bytes == 0);
}
