// Wall-clock comparison of the serial reference against the OpenMP dataflow
// kernels. Regression-tracking numbers only; no external targets.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsekit/cost.hpp"
#include "sparsekit/exec.hpp"
#include "sparsekit/gen.hpp"
#include "sparsekit/kmap.hpp"
#include "sparsekit/tensor.hpp"
#include "sparsekit/tuner.hpp"

using namespace sparsekit;

namespace {

template <class F>
double median_ms(F&& fn, int warmup, int runs) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> t(runs);
    for (int i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        t[i] = std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0).count();
    }
    std::nth_element(t.begin(), t.begin() + runs / 2, t.end());
    return t[runs / 2];
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparsekit benchmark harness"};
    int n = 100000, channels = 16, threads = 0, runs = 5;
    uint64_t seed = 7;
    double voxel = 0.02;
    app.add_option("--n", n, "raw point count");
    app.add_option("--channels", channels, "C_in = C_out");
    app.add_option("--threads", threads, "worker count (0 = auto)");
    app.add_option("--runs", runs, "timed runs per kernel");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--voxel", voxel, "voxel edge length");
    CLI11_PARSE(app, argc, argv);

    std::vector<double> raw = gen_cloud(CloudKind::planar_patches, n, seed, 1.0);
    VoxelParams vp;
    vp.voxel_size = {voxel, voxel, voxel};
    SparseTensor coords = quantize(raw, 3, {}, 0, vp, DedupRule::first, Precision::f32);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> feats(static_cast<size_t>(coords.n()) * channels);
    for (double& v : feats) v = g(rng);
    SparseTensor in(3, coords.coords(),
                    Features::from_f64(coords.n(), channels, std::move(feats),
                                       Precision::f32));

    std::array<int, 3> stride{1, 1, 1};
    SparseTensor out = build_out_coords(in, stride);
    OffsetSet offs(3, 3);
    KernelMapWS ws = build_kmap_ws(in, out, stride, offs);
    KernelMapOS os = ws_to_os(ws);

    std::vector<double> wv(static_cast<size_t>(offs.size()) * channels * channels);
    for (double& v : wv) v = g(rng);
    WeightTensor w(offs.size(), channels, channels, std::move(wv), Precision::f32);

    ExecContext ctx;
    ctx.threads = threads;
    const int nthreads = resolve_threads(threads);
    printf("points=%d voxels=%d pairs=%lld C=%d threads=%d\n", n, in.n(),
           static_cast<long long>(ws.total_pairs()), channels, nthreads);
    printf("%-28s %10s %10s\n", "kernel", "ms", "vs ref");

    double ref_ms = median_ms([&] { conv_ref(in.feats(), w, ws); }, 1, runs);
    printf("%-28s %10.2f %10s\n", "conv_ref (serial)", ref_ms, "1.00x");

    for (const DataflowConfig& cfg : default_space()) {
        KernelMapOS prepared;
        const KernelMapOS* osp = nullptr;
        if (cfg.kind == DataflowKind::implicit_gemm) {
            prepared = prepare_os_map(os, cfg);
            osp = &prepared;
        }
        double ms = median_ms(
            [&] { conv_forward(in.feats(), w, &ws, osp, cfg, ctx); }, 1, runs);
        printf("%-28s %10.2f %9.2fx\n", cfg.name().c_str(), ms, ref_ms / ms);
    }
    return 0;
}
