#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "golden.hpp"
#include "sparsekit/gen.hpp"
#include "sparsekit/io.hpp"
#include "sparsekit/network.hpp"

using namespace sparsekit;
using golden::bit_equal;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("sparsekit_test_" + name))
        .string();
}

NetworkSpec toy_unet() {
    NetworkSpec net;
    net.dims = 3;
    net.layers = {
        {"c1", LayerKind::conv, 1, 4, 3, 1, {}, ""},
        {"c2", LayerKind::conv, 4, 4, 3, 1, {"c1"}, ""},
        {"down", LayerKind::conv, 4, 8, 3, 2, {"c2"}, ""},
        {"mid", LayerKind::conv, 8, 8, 3, 1, {"down"}, ""},
        {"up", LayerKind::conv_transposed, 8, 4, 3, 2, {"mid"}, "down"},
        {"head", LayerKind::conv, 4, 2, 3, 1, {"up", "c2"}, ""},
    };
    return net;
}

std::vector<WeightTensor> random_weights(const NetworkSpec& net, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.2);
    std::vector<WeightTensor> ws;
    for (const LayerSpec& l : net.layers) {
        int kd = 1;
        for (int d = 0; d < net.dims; ++d) kd *= l.kernel;
        std::vector<double> v(static_cast<size_t>(kd) * l.c_in * l.c_out);
        for (double& x : v) x = g(rng);
        ws.emplace_back(kd, l.c_in, l.c_out, std::move(v), Precision::f64);
    }
    return ws;
}

SparseTensor sample_cloud(uint64_t seed, int n = 3000) {
    std::vector<double> raw = gen_cloud(CloudKind::planar_patches, n, seed, 1.0);
    VoxelParams vp;
    vp.voxel_size = {0.05, 0.05, 0.05};
    return quantize(raw, 3, {}, 0, vp, DedupRule::first, Precision::f64);
}

}  // namespace

TEST_CASE("network validation catches structural errors") {
    NetworkSpec net = toy_unet();
    CHECK_NOTHROW(net.validate());

    NetworkSpec bad = net;
    bad.layers[1].c_in = 3;  // mismatched channels
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = net;
    bad.layers[1].inputs = {"nope"};
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = net;
    bad.layers[4].transpose_of = "mid";  // stride-1 layer
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = net;
    bad.layers[4].kernel = 5;  // must match the downsample layer
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = net;
    bad.layers[0].name = "c2";  // duplicate
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("group partition: submanifold chains share, strided layers split") {
    NetworkSpec net;
    net.layers = {
        {"a", LayerKind::conv, 1, 4, 3, 1, {}, ""},
        {"b", LayerKind::conv, 4, 4, 3, 1, {"a"}, ""},
        {"c", LayerKind::conv, 4, 4, 3, 1, {"b"}, ""},
    };
    auto groups = partition_groups(net);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].layers == std::vector<int>{0, 1, 2});

    net.layers.push_back({"d", LayerKind::conv, 4, 8, 3, 2, {"c"}, ""});
    net.layers.push_back({"e", LayerKind::conv, 8, 8, 3, 1, {"d"}, ""});
    groups = partition_groups(net);
    REQUIRE(groups.size() == 3);  // stride-1 on S0, the downsample, stride-1 on S1
    CHECK(groups[1].layers == std::vector<int>{3});
    CHECK(groups[2].layers == std::vector<int>{4});
}

TEST_CASE("group partition: transposed decoder joins its encoder, non-consecutive") {
    auto groups = partition_groups(toy_unet());
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].layers == std::vector<int>{0, 1, 5});  // c1, c2, head
    CHECK(groups[1].layers == std::vector<int>{2, 4});     // down, up (not consecutive)
    CHECK(groups[2].layers == std::vector<int>{3});        // mid
}

TEST_CASE("different kernel sizes never share a group") {
    NetworkSpec net;
    net.layers = {
        {"a", LayerKind::conv, 1, 4, 3, 1, {}, ""},
        {"b", LayerKind::conv, 4, 4, 5, 1, {"a"}, ""},
    };
    CHECK(partition_groups(net).size() == 2);
}

TEST_CASE("identity single-layer network reproduces its input") {
    NetworkSpec net;
    net.layers = {{"id", LayerKind::conv, 2, 2, 1, 1, {}, ""}};
    // K=1: a single center offset; identity weights copy features through
    std::vector<WeightTensor> w;
    w.emplace_back(1, 2, 2, std::vector<double>{1, 0, 0, 1}, Precision::f64);
    ExecContext ctx;
    ctx.deterministic = true;
    NetworkRunner runner(net, std::move(w), ctx);
    SparseTensor in = sample_cloud(1, 800);
    std::vector<double> feats(static_cast<size_t>(in.n()) * 2);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : feats) v = g(rng);
    SparseTensor in2(3, in.coords(),
                     Features::from_f64(in.n(), 2, feats, Precision::f64));
    SparseTensor out = runner.forward(in2, runner.default_assignment());
    CHECK(out.n() == in2.n());
    CHECK(out.feats().to_f64() == feats);
}

TEST_CASE("network outputs do not depend on the group assignment") {
    NetworkSpec net = toy_unet();
    ExecContext ctx;
    ctx.deterministic = true;
    NetworkRunner runner(net, random_weights(net, 3), ctx);
    SparseTensor in = sample_cloud(4);

    std::vector<double> base;
    GroupAssignment asg = runner.default_assignment();
    std::vector<DataflowConfig> variants;
    DataflowConfig c;
    c.kind = DataflowKind::fetch_on_demand;
    variants.push_back(c);
    c.kind = DataflowKind::implicit_gemm;
    c.splits = 2;
    variants.push_back(c);
    c.splits = 0;
    c.reorder = ReorderMode::online;
    variants.push_back(c);

    base = runner.forward(in, asg).feats().to_f64();
    for (const DataflowConfig& v : variants) {
        for (auto& gc : asg) gc.forward = v;
        CHECK(bit_equal(runner.forward(in, asg).feats().to_f64(), base));
    }
    // repeated runs are bit-identical and reuse cached maps
    size_t builds = runner.map_build_count();
    CHECK(bit_equal(runner.forward(in, asg).feats().to_f64(), base));
    CHECK(runner.map_build_count() == builds);
}

TEST_CASE("runner timing separates mapping from kernels") {
    NetworkSpec net = toy_unet();
    NetworkRunner runner(net, random_weights(net, 5), ExecContext{});
    SparseTensor in = sample_cloud(6);
    RunStats stats;
    runner.forward(in, runner.default_assignment(), &stats);
    REQUIRE(stats.groups.size() == 3);
    double mapping = 0, kernel = 0;
    for (const auto& g : stats.groups) {
        mapping += g.mapping_ms;
        kernel += g.kernel_ms;
    }
    CHECK(mapping > 0);
    CHECK(kernel > 0);
    CHECK(stats.total_ms == doctest::Approx(mapping + kernel));

    // second run hits the caches; mapping time collapses
    RunStats again;
    runner.forward(in, runner.default_assignment(), &again);
    double mapping2 = 0;
    for (const auto& g : again.groups) mapping2 += g.mapping_ms;
    CHECK(mapping2 < mapping * 0.5);
}

TEST_CASE("measure_ms covers backward phases and modeled traffic is positive") {
    NetworkSpec net = toy_unet();
    NetworkRunner runner(net, random_weights(net, 7), ExecContext{});
    SparseTensor in = sample_cloud(8, 2000);
    GroupAssignment asg = runner.default_assignment();
    double fwd = runner.measure_ms(in, asg, PhaseMask{true, false, false});
    double all = runner.measure_ms(in, asg, PhaseMask{true, true, true});
    CHECK(fwd > 0);
    CHECK(all > 0);
    DataflowConfig ig;
    ig.kind = DataflowKind::implicit_gemm;
    ig.splits = 1;
    for (int g = 0; g < 3; ++g) {
        CHECK(runner.modeled_group_traffic(g, asg[g].forward) > 0);
        CHECK(runner.modeled_group_traffic(g, ig) > 0);
    }
}

TEST_CASE("point cloud text and binary formats round-trip byte-identically") {
    PointCloudFile pc;
    pc.dims = 3;
    pc.channels = 2;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 50; ++i) {
        for (int d = 0; d < 3; ++d) pc.coords.push_back(u(rng));
        pc.feats.push_back(u(rng));
        pc.feats.push_back(u(rng));
    }
    std::string p1 = tmp_path("pts.txt"), p2 = tmp_path("pts2.txt");
    write_points_text(p1, pc);
    PointCloudFile rd = read_points_text(p1);
    write_points_text(p2, rd);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(rd.n() == 50);
    CHECK(rd.channels == 2);

    std::string b1 = tmp_path("pts.tspt"), b2 = tmp_path("pts2.tspt");
    write_tspt(b1, pc);
    PointCloudFile rb = read_tspt(b1);
    write_tspt(b2, rb);
    CHECK(read_file(b1) == read_file(b2));
    CHECK(read_points(b1).n() == 50);  // extension dispatch

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(b1.c_str());
    std::remove(b2.c_str());
}

TEST_CASE("weights file round-trips byte-identically") {
    NetworkSpec net = toy_unet();
    std::vector<WeightTensor> w = random_weights(net, 9);
    std::string p1 = tmp_path("w.tspw"), p2 = tmp_path("w2.tspw");
    write_tspw(p1, w);
    std::vector<WeightTensor> rd = read_tspw(p1, Precision::f64);
    REQUIRE(rd.size() == w.size());
    CHECK(rd[0].num_offsets() == 27);
    write_tspw(p2, rd);
    CHECK(read_file(p1) == read_file(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("corrupt binary files fail with parse errors") {
    std::string p = tmp_path("bad.tspw");
    write_file(p, "TSPWxxxx");
    CHECK_THROWS_AS(read_tspw(p, Precision::f64), ValidationError);
    write_file(p, "NOPE");
    CHECK_THROWS_AS(read_tspw(p, Precision::f64), ValidationError);
    CHECK_THROWS_AS(read_tspt(p), ValidationError);
    std::remove(p.c_str());
}

TEST_CASE("network JSON round-trips and validates") {
    NetworkSpec net = toy_unet();
    std::string text = network_to_json(net);
    NetworkSpec rd = network_from_json(text);
    CHECK(network_to_json(rd) == text);
    CHECK(rd.layers.size() == 6);
    CHECK(rd.layers[4].kind == LayerKind::conv_transposed);
    CHECK(rd.layers[4].transpose_of == "down");
    CHECK_THROWS_AS(network_from_json("{not json"), ValidationError);
    CHECK_THROWS_AS(network_from_json("{\"layers\":[]}"), ValidationError);
}

TEST_CASE("tune result JSON round-trips") {
    TuneResult res;
    GroupChoice g;
    g.id = 0;
    g.layer_names = {"c1", "c2"};
    g.forward.kind = DataflowKind::implicit_gemm;
    g.forward.splits = 3;
    g.forward.tile = tile_large();
    DataflowConfig d;
    d.kind = DataflowKind::fetch_on_demand;
    g.dgrad = d;
    res.groups.push_back(g);
    res.latency_ms = 12.5;
    res.seed = 42;
    res.log.push_back({0, 0, g.forward, 3.25});

    std::string text = tune_result_to_json(res);
    TuneResult rd = tune_result_from_json(text);
    CHECK(tune_result_to_json(rd) == text);
    CHECK(rd.groups[0].forward == g.forward);
    CHECK(rd.groups[0].dgrad.has_value());
    CHECK_FALSE(rd.groups[0].wgrad.has_value());
    CHECK(rd.seed == 42);
    REQUIRE(rd.log.size() == 1);
    CHECK(rd.log[0].ms == 3.25);

    GroupAssignment asg = rd.assignment();
    REQUIRE(asg.size() == 1);
    CHECK(asg[0].forward == g.forward);
    CHECK(asg[0].dgrad == d);
    CHECK(asg[0].wgrad == g.forward);  // falls back to forward
}

TEST_CASE("generated clouds are deterministic per seed") {
    auto a = gen_cloud(CloudKind::planar_patches, 1000, 5, 1.0);
    auto b = gen_cloud(CloudKind::planar_patches, 1000, 5, 1.0);
    auto c = gen_cloud(CloudKind::planar_patches, 1000, 6, 1.0);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.size() == 3000);
    CHECK(gen_cloud(CloudKind::uniform, 0, 1, 1.0).empty());
    CHECK_THROWS_AS(cloud_kind_from_string("nope"), ValidationError);
}
