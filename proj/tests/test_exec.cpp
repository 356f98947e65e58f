#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "golden.hpp"
#include "sparsekit/exec.hpp"
#include "sparsekit/tuner.hpp"

using namespace sparsekit;
using golden::bit_equal;
using golden::max_rel_err;

namespace {

Features fig_features_c1() {
    return Features::from_f64(5, 1, {1, 2, 3, 4, 5}, Precision::f64);
}

WeightTensor fig_weights_c1() {
    return WeightTensor(9, 1, 1, {1, 2, 3, 4, 5, 6, 7, 8, 9}, Precision::f64);
}

KernelMapWS fig_ws() {
    return build_kmap_ws(golden::fig_in(), golden::fig_out(), {1, 1, 1},
                         OffsetSet(2, 3));
}

std::vector<DataflowConfig> all_configs() {
    std::vector<DataflowConfig> cfgs = default_space();
    for (DataflowConfig c : default_space()) {
        if (c.kind == DataflowKind::implicit_gemm) {
            c.reorder = ReorderMode::online;
            cfgs.push_back(c);
        }
    }
    return cfgs;
}

Features run_config(const golden::RandomInstance& inst, const DataflowConfig& cfg,
                    const ExecContext& ctx) {
    KernelMapOS prepared;
    const KernelMapOS* osp = nullptr;
    if (cfg.kind == DataflowKind::implicit_gemm) {
        if (cfg.reorder == ReorderMode::offline) {
            prepared = prepare_os_map(inst.os, cfg);
            osp = &prepared;
        } else {
            osp = &inst.os;
        }
    }
    return conv_forward(inst.in.feats(), inst.w, &inst.ws, osp, cfg, ctx);
}

}  // namespace

TEST_CASE("conv_ref reproduces the frozen toy outputs, one channel") {
    Features y = conv_ref(fig_features_c1(), fig_weights_c1(), fig_ws());
    auto want = golden::fig_conv_c1();
    std::vector<double> got = y.to_f64();
    REQUIRE(got.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("conv_ref reproduces the frozen toy outputs, two channels") {
    std::vector<double> x;
    for (int j = 0; j < 5; ++j) {
        x.push_back(j + 1.0);
        x.push_back(2.0 * j);
    }
    std::vector<double> w;
    for (int k = 0; k < 9; ++k) {
        w.push_back(k + 1.0);
        w.push_back(0.5);
        w.push_back(-1.0);
        w.push_back(k);
    }
    Features y = conv_ref(Features::from_f64(5, 2, x, Precision::f64),
                          WeightTensor(9, 2, 2, w, Precision::f64), fig_ws());
    auto want = golden::fig_conv_c2();
    std::vector<double> got = y.to_f64();
    for (int i = 0; i < 6; ++i) {
        CHECK(got[2 * i] == want[i][0]);
        CHECK(got[2 * i + 1] == want[i][1]);
    }
}

TEST_CASE("every dataflow matches conv_ref") {
    ExecContext det;
    det.deterministic = true;
    ExecContext par;
    par.threads = 4;
    int case_idx = 0;
    for (uint64_t seed : {11u, 12u, 13u}) {
        for (int stride : {1, 2}) {
            int cin = (case_idx % 3 == 0) ? 1 : (case_idx % 3 == 1 ? 4 : 16);
            int cout = (case_idx % 2) ? 4 : 16;
            ++case_idx;
            for (Precision prec : {Precision::f64, Precision::f32}) {
                auto inst = golden::make_random_instance(seed, 300, cin, cout, stride,
                                                         prec);
                std::vector<double> ref = conv_ref(inst.in.feats(), inst.w, inst.ws)
                                              .to_f64();
                for (const DataflowConfig& cfg : all_configs()) {
                    CAPTURE(cfg.name());
                    if (prec == Precision::f64) {
                        CHECK(bit_equal(run_config(inst, cfg, det).to_f64(), ref));
                    } else {
                        CHECK(max_rel_err(run_config(inst, cfg, par).to_f64(), ref)
                              <= 1e-4);
                    }
                }
            }
        }
    }
}

TEST_CASE("split counts 0..K^D give bit-identical deterministic outputs") {
    ExecContext det;
    det.deterministic = true;
    auto inst = golden::make_random_instance(42, 400, 3, 5, 1, Precision::f64);
    DataflowConfig cfg;
    cfg.kind = DataflowKind::implicit_gemm;
    std::vector<double> base;
    for (int s : {0, 1, 2, 3, 5, 9, 14, 27}) {
        cfg.splits = s;
        KernelMapOS prepared = prepare_os_map(inst.os, cfg);
        std::vector<double> y =
            conv_implicit_gemm(inst.in.feats(), inst.w, prepared, cfg, det).to_f64();
        if (base.empty())
            base = y;
        else
            CHECK(bit_equal(y, base));
    }
}

TEST_CASE("pad_map leaves outputs bit-identical") {
    ExecContext det;
    det.deterministic = true;
    auto inst = golden::make_random_instance(7, 350, 2, 3, 1, Precision::f64);
    DataflowConfig cfg;
    cfg.kind = DataflowKind::implicit_gemm;
    cfg.splits = 2;
    KernelMapOS sorted = split_and_sort(inst.os, 2);
    std::vector<double> base;
    for (int mult : {1, 4, 32, 50}) {
        KernelMapOS padded = pad_map(sorted, mult);
        std::vector<double> y =
            conv_implicit_gemm(inst.in.feats(), inst.w, padded, cfg, det).to_f64();
        if (base.empty())
            base = y;
        else
            CHECK(bit_equal(y, base));
    }
}

TEST_CASE("offline and online reorder agree bit-exactly") {
    ExecContext det;
    det.deterministic = true;
    auto inst = golden::make_random_instance(8, 350, 2, 2, 2, Precision::f64);
    for (int s : {0, 1, 3}) {
        DataflowConfig off;
        off.kind = DataflowKind::implicit_gemm;
        off.splits = s;
        DataflowConfig onl = off;
        onl.reorder = ReorderMode::online;
        KernelMapOS prepared = prepare_os_map(inst.os, off);
        CHECK(bit_equal(
            conv_implicit_gemm(inst.in.feats(), inst.w, prepared, off, det).to_f64(),
            conv_implicit_gemm(inst.in.feats(), inst.w, inst.os, onl, det).to_f64()));
    }
}

TEST_CASE("deterministic mode is invariant to the worker count") {
    auto inst = golden::make_random_instance(21, 500, 4, 4, 1, Precision::f64);
    for (const DataflowConfig& cfg : all_configs()) {
        CAPTURE(cfg.name());
        std::vector<double> base;
        for (int threads : {1, 2, 5}) {
            ExecContext ctx;
            ctx.deterministic = true;
            ctx.threads = threads;
            std::vector<double> y = run_config(inst, cfg, ctx).to_f64();
            if (base.empty())
                base = y;
            else
                CHECK(bit_equal(y, base));
        }
    }
}

TEST_CASE("linearity holds exactly on dyadic data") {
    // all values are small multiples of 1/16 so every product and partial sum
    // is exactly representable; linearity then holds bitwise
    auto inst = golden::make_random_instance(31, 200, 2, 2, 1, Precision::f64);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> di(-32, 32);
    auto dyadic = [&](size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = di(rng) / 16.0;
        return v;
    };
    const size_t nx = static_cast<size_t>(inst.in.n()) * 2;
    std::vector<double> x1 = dyadic(nx), x2 = dyadic(nx);
    std::vector<double> wv = dyadic(27 * 2 * 2);
    WeightTensor w(27, 2, 2, wv, Precision::f64);
    const double alpha = 1.5, beta = -2.25;

    std::vector<double> mix(nx);
    for (size_t i = 0; i < nx; ++i) mix[i] = alpha * x1[i] + beta * x2[i];
    auto F = [&](const std::vector<double>& v) {
        return conv_ref(Features::from_f64(inst.in.n(), 2, v, Precision::f64), w,
                        inst.ws).to_f64();
    };
    std::vector<double> lhs = F(mix), y1 = F(x1), y2 = F(x2);
    for (size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs[i] == alpha * y1[i] + beta * y2[i]);
}

TEST_CASE("dgrad and wgrad match central finite differences") {
    ExecContext det;
    det.deterministic = true;
    const double eps = 1e-6;
    for (uint64_t seed : {61u, 62u}) {
        auto inst = golden::make_random_instance(seed, 30, 2, 3, 1, Precision::f64);
        std::mt19937_64 rng(seed + 1);
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> r(static_cast<size_t>(inst.out.n()) * 3);
        for (double& v : r) v = g(rng);

        auto loss = [&](const std::vector<double>& xv, const std::vector<double>& wv) {
            Features y = conv_ref(
                Features::from_f64(inst.in.n(), 2, xv, Precision::f64),
                WeightTensor(27, 2, 3, wv, Precision::f64), inst.ws);
            std::vector<double> yv = y.to_f64();
            double s = 0;
            for (size_t i = 0; i < yv.size(); ++i) s += yv[i] * r[i];
            return s;
        };

        std::vector<double> x0 = inst.in.feats().to_f64();
        std::vector<double> w0 = inst.w.as_f64();
        Features dy = Features::from_f64(inst.out.n(), 3, r, Precision::f64);
        std::vector<double> dx =
            conv_dgrad(dy, inst.w, inst.ws, DataflowConfig{}, det).to_f64();
        std::vector<double> dw =
            conv_wgrad(inst.in.feats(), dy, inst.ws, DataflowConfig{}, det).as_f64();

        for (size_t i = 0; i < x0.size(); ++i) {
            std::vector<double> xp = x0, xm = x0;
            xp[i] += eps;
            xm[i] -= eps;
            double fd = (loss(xp, w0) - loss(xm, w0)) / (2 * eps);
            CHECK(std::abs(dx[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
        for (size_t i = 0; i < w0.size(); i += 7) {  // sampled, full sweep in acceptance
            std::vector<double> wp = w0, wm = w0;
            wp[i] += eps;
            wm[i] -= eps;
            double fd = (loss(x0, wp) - loss(x0, wm)) / (2 * eps);
            CHECK(std::abs(dw[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("backward passes agree across dataflow configs") {
    ExecContext det;
    det.deterministic = true;
    auto inst = golden::make_random_instance(71, 250, 3, 2, 2, Precision::f64);
    std::mt19937_64 rng(72);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> r(static_cast<size_t>(inst.out.n()) * 2);
    for (double& v : r) v = g(rng);
    Features dy = Features::from_f64(inst.out.n(), 2, r, Precision::f64);

    std::vector<double> dx_base, dw_base;
    for (const DataflowConfig& cfg : default_space()) {
        CAPTURE(cfg.name());
        std::vector<double> dx = conv_dgrad(dy, inst.w, inst.ws, cfg, det).to_f64();
        std::vector<double> dw =
            conv_wgrad(inst.in.feats(), dy, inst.ws, cfg, det).as_f64();
        if (dx_base.empty()) {
            dx_base = dx;
            dw_base = dw;
        } else {
            CHECK(bit_equal(dx, dx_base));
            CHECK(bit_equal(dw, dw_base));
        }
    }
}

TEST_CASE("graph maps run through the pair-list dataflows") {
    std::vector<std::array<int32_t, 3>> edges = {
        {0, 0, 0}, {1, 0, 0}, {2, 0, 1}, {0, 1, 1}, {1, 1, 1}, {2, 1, 0}, {0, 1, 0}};
    KernelMapWS g = kmap_from_edges(edges, 2, 3, 2);
    Features x = Features::from_f64(3, 2, {1, 2, 3, 4, 5, 6}, Precision::f64);
    WeightTensor w(2, 2, 1, {1, -1, 0.5, 2}, Precision::f64);
    ExecContext det;
    det.deterministic = true;
    std::vector<double> ref = conv_ref(x, w, g).to_f64();
    DataflowConfig ggs;
    DataflowConfig fod;
    fod.kind = DataflowKind::fetch_on_demand;
    CHECK(bit_equal(conv_gather_scatter(x, w, g, ggs, det).to_f64(), ref));
    CHECK(bit_equal(conv_fetch_on_demand(x, w, g, fod, det).to_f64(), ref));
}

TEST_CASE("reduce_partials sums buffers in order and checks shapes") {
    std::vector<std::vector<double>> bufs = {{1, 2}, {10, 20}, {100, 200}};
    CHECK(reduce_partials(bufs) == std::vector<double>{111, 222});
    bufs.push_back({1});
    CHECK_THROWS_AS(reduce_partials(bufs), ContractError);
    CHECK_THROWS_AS(reduce_partials<double>({}), ContractError);
}

TEST_CASE("offline implicit GEMM rejects unprepared maps") {
    auto inst = golden::make_random_instance(5, 100, 1, 1, 1, Precision::f64);
    DataflowConfig cfg;
    cfg.kind = DataflowKind::implicit_gemm;
    cfg.splits = 2;
    CHECK_THROWS_AS(conv_implicit_gemm(inst.in.feats(), inst.w, inst.os, cfg,
                                       ExecContext{}),
                    ContractError);
}

TEST_CASE("weight transpose is an involution") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> wv(27 * 3 * 5);
    for (double& v : wv) v = g(rng);
    WeightTensor w(27, 3, 5, wv, Precision::f64);
    WeightTensor wtt = w.transposed().transposed();
    CHECK(wtt.as_f64() == wv);
    CHECK(w.transposed().c_in() == 5);
    CHECK(w.transposed().c_out() == 3);
}

TEST_CASE("tile preset and config validation") {
    CHECK(tile_small().cta_m == 32);
    CHECK(tile_large().load_width == 8);
    DataflowConfig bad;
    bad.tile.cta_m = 30;  // not a multiple of warp_rows
    CHECK_THROWS_AS(validate(bad), ValidationError);
    bad = DataflowConfig{};
    bad.splits = -2;
    CHECK_THROWS_AS(validate(bad), ValidationError);
}
