#include <cmath>
#include <cstring>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsekit/cost.hpp"
#include "sparsekit/exec.hpp"
#include "sparsekit/gen.hpp"
#include "sparsekit/io.hpp"
#include "sparsekit/kmap.hpp"
#include "sparsekit/network.hpp"
#include "sparsekit/tensor.hpp"
#include "sparsekit/tuner.hpp"

using namespace sparsekit;
using nlohmann::json;

namespace {

struct Manifest {
    std::string net_path;
    std::string weights_path;
    std::string input_path;
    std::string precision = "f64";
    uint64_t seed = 0;
    bool deterministic = false;
    int threads = 0;
    std::string tune_result_path;
    double voxel = 0.05;
};

Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ValidationError("precision must be f32 or f64");
}

ExecContext make_ctx(const Manifest& m) {
    ExecContext ctx;
    ctx.threads = m.threads;
    ctx.deterministic = m.deterministic;
    return ctx;
}

SparseTensor load_input(const Manifest& m, int dims) {
    if (m.input_path.empty()) throw ValidationError("--input is required");
    PointCloudFile pc = read_points(m.input_path);
    if (pc.dims != dims)
        throw ValidationError("input dims " + std::to_string(pc.dims) +
                              " does not match network dims " + std::to_string(dims));
    VoxelParams vp;
    vp.voxel_size = {m.voxel, m.voxel, m.voxel};
    return quantize(pc.coords, pc.dims, pc.feats, pc.channels, vp, DedupRule::first,
                    parse_precision(m.precision));
}

std::vector<WeightTensor> random_weights(const NetworkSpec& net, uint64_t seed,
                                         Precision prec) {
    std::mt19937_64 rng(seed ^ 0x7718f5ull);
    std::vector<WeightTensor> ws;
    for (const LayerSpec& l : net.layers) {
        int kd = 1;
        for (int d = 0; d < net.dims; ++d) kd *= l.kernel;
        std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(kd) * l.c_in));
        std::vector<double> vals(static_cast<size_t>(kd) * l.c_in * l.c_out);
        for (double& v : vals) v = g(rng);
        ws.emplace_back(kd, l.c_in, l.c_out, std::move(vals), prec);
    }
    return ws;
}

std::vector<WeightTensor> load_weights(const Manifest& m, const NetworkSpec& net,
                                       Precision prec) {
    if (!m.weights_path.empty()) return read_tspw(m.weights_path, prec);
    std::cerr << "note: no --weights given, using seeded random weights\n";
    return random_weights(net, m.seed, prec);
}

void write_output(const std::string& path, const SparseTensor& t) {
    PointCloudFile pc;
    pc.dims = t.dims();
    pc.channels = t.channels();
    pc.coords.reserve(static_cast<size_t>(t.n()) * t.dims());
    for (const Coord& c : t.coords())
        for (int d = 0; d < t.dims(); ++d) pc.coords.push_back(c.x[d]);
    pc.feats = t.feats().to_f64();
    write_tspt(path, pc);
}

GroupAssignment assignment_for(const NetworkRunner& runner, const Manifest& m) {
    if (m.tune_result_path.empty()) {
        std::cerr << "note: no --tune-result given, using default configs\n";
        return runner.default_assignment();
    }
    TuneResult tr = read_tune_result(m.tune_result_path);
    GroupAssignment asg = tr.assignment();
    if (asg.size() != runner.groups().size())
        throw ValidationError("tune result has " + std::to_string(asg.size()) +
                              " groups, network has " +
                              std::to_string(runner.groups().size()));
    return asg;
}

int cmd_run(const Manifest& m, const std::string& out_path,
            const std::string& timing_path) {
    NetworkSpec net = read_network(m.net_path);
    Precision prec = parse_precision(m.precision);
    NetworkRunner runner(net, load_weights(m, net, prec), make_ctx(m));
    SparseTensor input = load_input(m, net.dims);
    GroupAssignment asg = assignment_for(runner, m);

    RunStats stats;
    SparseTensor out = runner.forward(input, asg, &stats);
    write_output(out_path, out);

    json j;
    j["output"] = out_path;
    j["n_out"] = out.n();
    j["channels"] = out.channels();
    j["groups"] = json::array();
    json timing;
    timing["total_ms"] = stats.total_ms;
    timing["groups"] = json::array();
    for (const LayerGroup& g : runner.groups()) {
        json jg;
        jg["id"] = g.id;
        json names = json::array();
        for (int l : g.layers) names.push_back(net.layers[l].name);
        jg["layers"] = names;
        jg["forward"] = json::parse(dataflow_config_to_json(asg[g.id].forward));
        j["groups"].push_back(jg);
        timing["groups"].push_back({{"id", g.id},
                                    {"mapping_ms", stats.groups[g.id].mapping_ms},
                                    {"kernel_ms", stats.groups[g.id].kernel_ms}});
    }
    j["timing"] = timing;  // timing fields stay under one key so they can be masked
    if (!timing_path.empty()) write_file(timing_path, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_tune(const Manifest& m, const std::string& mode, std::string scheme,
             int tune_samples, int tune_points, const std::string& out_path) {
    NetworkSpec net = read_network(m.net_path);
    Precision prec = parse_precision(m.precision);
    NetworkRunner runner(net, load_weights(m, net, prec), make_ctx(m));

    std::vector<SparseTensor> samples;
    if (!m.input_path.empty()) {
        samples.push_back(load_input(m, net.dims));
    } else {
        VoxelParams vp;
        vp.voxel_size = {m.voxel, m.voxel, m.voxel};
        for (int i = 0; i < tune_samples; ++i) {
            std::vector<double> raw =
                gen_cloud(CloudKind::planar_patches, tune_points, m.seed + i, 1.0);
            samples.push_back(
                quantize(raw, 3, {}, 0, vp, DedupRule::first, prec));
        }
        if (net.layers.front().c_in != 1)
            throw ValidationError(
                "synthetic tuning inputs have 1 channel; pass --input for nets with "
                "c_in != 1");
    }
    RunnerProbe probe(runner, std::move(samples));

    TuneResult res;
    if (mode == "inference") {
        res = tune_inference(net, default_space(), probe, m.seed);
    } else if (mode == "training") {
        if (scheme.empty()) {
            std::cerr << "note: no --scheme given, defaulting to sparse_mapping\n";
            scheme = "mapping";
        }
        res = tune_training(net, default_space(), binding_scheme_from_string(scheme),
                            probe, m.seed);
    } else {
        throw ValidationError("mode must be inference or training");
    }

    std::cout << "group  layers                          forward\n";
    for (const GroupChoice& g : res.groups) {
        std::string names;
        for (const std::string& n : g.layer_names)
            names += (names.empty() ? "" : ",") + n;
        if (names.size() > 30) names = names.substr(0, 27) + "...";
        printf("%-6d %-31s %s\n", g.id, names.c_str(), g.forward.name().c_str());
        if (g.dgrad) printf("       %-31s dgrad: %s\n", "", g.dgrad->name().c_str());
        if (g.wgrad) printf("       %-31s wgrad: %s\n", "", g.wgrad->name().c_str());
    }
    printf("latency %.3f ms, tuned in %.0f ms, %zu measurements\n", res.latency_ms,
           res.tuning_wall_ms, res.log.size());
    if (!out_path.empty()) write_tune_result(out_path, res);
    return 0;
}

int cmd_cost(const Manifest& m, int max_splits) {
    NetworkSpec net = read_network(m.net_path);
    Precision prec = parse_precision(m.precision);
    NetworkRunner runner(net, load_weights(m, net, prec), make_ctx(m));
    SparseTensor input = load_input(m, net.dims);
    runner.forward(input, runner.default_assignment());

    const int eb = prec == Precision::f32 ? 4 : 8;
    std::cout << cost_csv_header() << ",neighbor_ratio\n";
    for (size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        auto raw = runner.layer_raw_os(static_cast<int>(li));
        double ratio = raw->n_out > 0 ? double(raw->nonsentinel_entries()) / raw->n_out
                                      : 0.0;
        std::vector<DataflowConfig> cfgs;
        DataflowConfig c;
        c.kind = DataflowKind::gather_gemm_scatter;
        cfgs.push_back(c);
        c.kind = DataflowKind::fetch_on_demand;
        cfgs.push_back(c);
        for (int s = 0; s <= max_splits; ++s) {
            c.kind = DataflowKind::implicit_gemm;
            c.splits = s;
            cfgs.push_back(c);
        }
        for (const DataflowConfig& cfg : cfgs) {
            CostReport r = traffic_model(*raw, cfg, l.c_in, l.c_out, eb);
            printf("%s,%.6g\n", cost_csv_row(l.name, cfg, r).c_str(), ratio);
        }
    }
    return 0;
}

// Differential check of every design-space config against the brute-force
// reference, on seeded random instances (plus the manifest input if given).
int cmd_check(const Manifest& m) {
    Precision prec = parse_precision(m.precision);
    ExecContext ctx = make_ctx(m);
    ExecContext det = ctx;
    det.deterministic = true;

    int failures = 0;
    auto check_instance = [&](const std::string& label, const SparseTensor& in,
                              int c_out, int stride) {
        std::array<int, 3> s{stride, stride, stride};
        SparseTensor out = build_out_coords(in, s);
        OffsetSet offs(3, 3);
        KernelMapWS ws = build_kmap_ws(in, out, s, offs);
        KernelMapOS os = ws_to_os(ws);

        std::mt19937_64 rng(m.seed ^ std::hash<std::string>{}(label));
        std::normal_distribution<double> g(0.0, 0.3);
        std::vector<double> wv(static_cast<size_t>(offs.size()) * in.channels() * c_out);
        for (double& v : wv) v = g(rng);
        WeightTensor w(offs.size(), in.channels(), c_out, std::move(wv), prec);

        Features ref = conv_ref(in.feats(), w, ws);
        std::vector<double> ref64 = ref.to_f64();
        for (const DataflowConfig& cfg : default_space()) {
            ExecContext use = prec == Precision::f64 ? det : ctx;
            const KernelMapOS* osp = nullptr;
            KernelMapOS prepared;
            if (cfg.kind == DataflowKind::implicit_gemm) {
                prepared = prepare_os_map(os, cfg);
                osp = &prepared;
            }
            Features y = conv_forward(in.feats(), w, &ws, osp, cfg, use);
            std::vector<double> y64 = y.to_f64();
            bool ok = true;
            double worst = 0;
            for (size_t i = 0; i < y64.size(); ++i) {
                if (prec == Precision::f64) {
                    if (std::memcmp(&y64[i], &ref64[i], 8) != 0) ok = false;
                } else {
                    double denom = std::max(std::abs(ref64[i]), 1e-30);
                    worst = std::max(worst, std::abs(y64[i] - ref64[i]) / denom);
                }
            }
            if (prec == Precision::f32 && worst > 1e-4) ok = false;
            printf("%-24s %-28s %s\n", label.c_str(), cfg.name().c_str(),
                   ok ? "pass" : "FAIL");
            if (!ok) ++failures;
        }
    };

    if (!m.input_path.empty()) {
        SparseTensor in = load_input(m, 3);
        check_instance("input", in, 4, 1);
    }
    for (int i = 0; i < 10; ++i) {
        uint64_t seed = m.seed + 1000 + i;
        int n = 200 + 60 * i;
        int cin = (i % 3 == 0) ? 1 : (i % 3 == 1 ? 4 : 16);
        int cout = (i % 2) ? 4 : 16;
        int stride = (i % 2) + 1;
        std::vector<double> raw = gen_cloud(CloudKind::gaussian_clusters, n, seed, 20.0);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 1.0);
        VoxelParams vp;
        vp.voxel_size = {1.0, 1.0, 1.0};
        // features per deduplicated voxel, derived after quantization
        SparseTensor coords = quantize(raw, 3, {}, 0, vp, DedupRule::first, prec);
        std::vector<double> feats(static_cast<size_t>(coords.n()) * cin);
        for (double& v : feats) v = g(rng);
        SparseTensor in(3, coords.coords(),
                        Features::from_f64(coords.n(), cin, std::move(feats), prec));
        check_instance("random-" + std::to_string(i), in, cout, stride);
    }
    if (failures) {
        std::cerr << failures << " mismatches\n";
        return 2;
    }
    std::cout << "all checks passed\n";
    return 0;
}

int cmd_gen(const std::string& kind, int n, uint64_t seed, double extent,
            const std::string& out_path) {
    std::vector<double> raw = gen_cloud(cloud_kind_from_string(kind), n, seed, extent);
    PointCloudFile pc;
    pc.dims = 3;
    pc.channels = 0;
    pc.coords = std::move(raw);
    write_points_text(out_path, pc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse convolution engine with dataflow autotuning"};
    app.require_subcommand(1);

    Manifest m;
    auto add_common = [&](CLI::App* sub, bool need_net) {
        auto* net = sub->add_option("--net", m.net_path, "network spec JSON");
        if (need_net) net->required();
        sub->add_option("--weights", m.weights_path, "TSPW weights file");
        sub->add_option("--input", m.input_path, "point cloud (.tspt or text)");
        sub->add_option("--precision", m.precision, "f32 or f64")
            ->check(CLI::IsMember({"f32", "f64"}));
        sub->add_option("--seed", m.seed, "random seed");
        sub->add_flag("--deterministic", m.deterministic, "bit-reproducible accumulation");
        sub->add_option("--threads", m.threads, "worker count (0 = auto)");
        sub->add_option("--tune-result", m.tune_result_path, "tuned configs JSON");
        sub->add_option("--voxel", m.voxel, "voxel edge length for quantization");
    };

    std::string out_path = "out.tspt", timing_path, mode = "inference", scheme;
    std::string tune_out = "tune.json", gen_kind = "planar_patches", gen_out = "cloud.txt";
    int max_splits = 4, tune_samples = 4, tune_points = 20000, gen_n = 20000;
    uint64_t gen_seed = 0;
    double gen_extent = 1.0;

    CLI::App* run = app.add_subcommand("run", "run a network over an input cloud");
    add_common(run, true);
    run->add_option("--output", out_path, "output features file (TSPT)");
    run->add_option("--timing", timing_path, "also write the JSON summary here");

    CLI::App* tune = app.add_subcommand("tune", "autotune per-group dataflows");
    add_common(tune, true);
    tune->add_option("--mode", mode, "inference or training")
        ->check(CLI::IsMember({"inference", "training"}));
    tune->add_option("--scheme", scheme, "workload or mapping (training)");
    tune->add_option("--tune-samples", tune_samples, "synthetic sample count");
    tune->add_option("--tune-points", tune_points, "points per synthetic sample");
    tune->add_option("--output", tune_out, "tune result JSON path");

    CLI::App* cost = app.add_subcommand("cost", "emit the per-layer cost table");
    add_common(cost, true);
    cost->add_option("--splits", max_splits, "max split count for the sweep")
        ->check(CLI::Range(0, 27));

    CLI::App* check = app.add_subcommand("check", "differential check vs the reference");
    add_common(check, false);

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic point cloud");
    gen->add_option("--kind", gen_kind, "uniform, planar_patches or gaussian_clusters");
    gen->add_option("--n", gen_n, "point count");
    gen->add_option("--seed", gen_seed, "random seed");
    gen->add_option("--extent", gen_extent, "world-space extent");
    gen->add_option("--output", gen_out, "output text file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) return cmd_run(m, out_path, timing_path);
        if (tune->parsed())
            return cmd_tune(m, mode, scheme, tune_samples, tune_points, tune_out);
        if (cost->parsed()) return cmd_cost(m, max_splits);
        if (check->parsed()) return cmd_check(m);
        if (gen->parsed()) return cmd_gen(gen_kind, gen_n, gen_seed, gen_extent, gen_out);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
