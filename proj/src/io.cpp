#include "sparsekit/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace sparsekit {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << text;
    if (!out) throw ValidationError("write failed: " + path);
}

// --- point clouds ------------------------------------------------------------

PointCloudFile read_points_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    PointCloudFile pc;
    pc.dims = 3;
    pc.channels = -1;  // inferred from the first data line
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        std::istringstream ls(line);
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (!ls.eof())
            throw ValidationError(path + ":" + std::to_string(lineno) + ": bad number");
        if (vals.size() < 3)
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected at least 3 columns");
        int ch = static_cast<int>(vals.size()) - 3;
        if (pc.channels < 0) pc.channels = ch;
        if (ch != pc.channels)
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": inconsistent column count");
        pc.coords.insert(pc.coords.end(), vals.begin(), vals.begin() + 3);
        pc.feats.insert(pc.feats.end(), vals.begin() + 3, vals.end());
    }
    if (pc.channels < 0) pc.channels = 0;
    return pc;
}

void write_points_text(const std::string& path, const PointCloudFile& pc) {
    std::ostringstream out;
    out.precision(17);
    out << "# " << pc.n() << " points, dims=" << pc.dims
        << ", channels=" << pc.channels << "\n";
    for (int i = 0; i < pc.n(); ++i) {
        for (int d = 0; d < pc.dims; ++d)
            out << (d ? " " : "") << pc.coords[static_cast<size_t>(i) * pc.dims + d];
        for (int c = 0; c < pc.channels; ++c)
            out << ' ' << pc.feats[static_cast<size_t>(i) * pc.channels + c];
        out << "\n";
    }
    write_file(path, out.str());
}

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::string& s, uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                 static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    s.append(b, 4);
}

void put_f32(std::string& s, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(s, u);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    std::string path;

    uint32_t u32() {
        if (pos + 4 > buf.size()) throw ValidationError(path + ": truncated file");
        uint32_t v = static_cast<uint8_t>(buf[pos]) |
                     static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 1])) << 8 |
                     static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 2])) << 16 |
                     static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 3])) << 24;
        pos += 4;
        return v;
    }

    float f32() {
        uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }

    void magic(const char* m) {
        if (pos + 4 > buf.size() || std::memcmp(buf.data() + pos, m, 4) != 0)
            throw ValidationError(path + ": bad magic, expected " + std::string(m));
        pos += 4;
    }
};

}  // namespace

PointCloudFile read_tspt(const std::string& path) {
    std::string buf = read_file(path);
    Reader r{buf, 0, path};
    r.magic("TSPT");
    if (r.u32() != kVersion) throw ValidationError(path + ": unsupported version");
    uint32_t n = r.u32(), d = r.u32(), c = r.u32();
    if (d != 2 && d != 3) throw ValidationError(path + ": dims must be 2 or 3");
    PointCloudFile pc;
    pc.dims = static_cast<int>(d);
    pc.channels = static_cast<int>(c);
    pc.coords.resize(static_cast<size_t>(n) * d);
    pc.feats.resize(static_cast<size_t>(n) * c);
    for (double& v : pc.coords) v = r.f32();
    for (double& v : pc.feats) v = r.f32();
    if (r.pos != buf.size()) throw ValidationError(path + ": trailing bytes");
    return pc;
}

void write_tspt(const std::string& path, const PointCloudFile& pc) {
    std::string out;
    out += "TSPT";
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(pc.n()));
    put_u32(out, static_cast<uint32_t>(pc.dims));
    put_u32(out, static_cast<uint32_t>(pc.channels));
    for (double v : pc.coords) put_f32(out, static_cast<float>(v));
    for (double v : pc.feats) put_f32(out, static_cast<float>(v));
    write_file(path, out);
}

PointCloudFile read_points(const std::string& path) {
    if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".tspt") == 0)
        return read_tspt(path);
    return read_points_text(path);
}

// --- weights -----------------------------------------------------------------

std::vector<WeightTensor> read_tspw(const std::string& path, Precision prec) {
    std::string buf = read_file(path);
    Reader r{buf, 0, path};
    r.magic("TSPW");
    if (r.u32() != kVersion) throw ValidationError(path + ": unsupported version");
    uint32_t layers = r.u32();
    std::vector<WeightTensor> out;
    out.reserve(layers);
    for (uint32_t i = 0; i < layers; ++i) {
        uint32_t kd = r.u32(), cin = r.u32(), cout = r.u32();
        if (kd == 0 || cin == 0 || cout == 0)
            throw ValidationError(path + ": zero-sized weight tensor");
        std::vector<double> vals(static_cast<size_t>(kd) * cin * cout);
        for (double& v : vals) v = r.f32();
        out.emplace_back(static_cast<int>(kd), static_cast<int>(cin),
                         static_cast<int>(cout), std::move(vals), prec);
    }
    if (r.pos != buf.size()) throw ValidationError(path + ": trailing bytes");
    return out;
}

void write_tspw(const std::string& path, const std::vector<WeightTensor>& layers) {
    std::string out;
    out += "TSPW";
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(layers.size()));
    for (const WeightTensor& w : layers) {
        put_u32(out, static_cast<uint32_t>(w.num_offsets()));
        put_u32(out, static_cast<uint32_t>(w.c_in()));
        put_u32(out, static_cast<uint32_t>(w.c_out()));
        for (double v : w.as_f64()) put_f32(out, static_cast<float>(v));
    }
    write_file(path, out);
}

// --- network spec ------------------------------------------------------------

NetworkSpec network_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("network spec parse error: ") + e.what());
    }
    NetworkSpec net;
    try {
        net.dims = j.value("dims", 3);
        for (const json& jl : j.at("layers")) {
            LayerSpec l;
            l.name = jl.at("name").get<std::string>();
            l.kind = layer_kind_from_string(jl.value("kind", std::string("conv")));
            l.c_in = jl.at("c_in").get<int>();
            l.c_out = jl.at("c_out").get<int>();
            l.kernel = jl.value("kernel", 3);
            l.stride = jl.value("stride", 1);
            if (jl.contains("inputs"))
                l.inputs = jl.at("inputs").get<std::vector<std::string>>();
            l.transpose_of = jl.value("transpose_of", std::string());
            net.layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("network spec: ") + e.what());
    }
    net.validate();
    return net;
}

std::string network_to_json(const NetworkSpec& net) {
    json j;
    j["dims"] = net.dims;
    j["layers"] = json::array();
    for (const LayerSpec& l : net.layers) {
        json jl;
        jl["name"] = l.name;
        jl["kind"] = to_string(l.kind);
        jl["c_in"] = l.c_in;
        jl["c_out"] = l.c_out;
        jl["kernel"] = l.kernel;
        jl["stride"] = l.stride;
        jl["inputs"] = l.inputs;
        if (!l.transpose_of.empty()) jl["transpose_of"] = l.transpose_of;
        j["layers"].push_back(std::move(jl));
    }
    return j.dump(2) + "\n";
}

NetworkSpec read_network(const std::string& path) {
    return network_from_json(read_file(path));
}

void write_network(const std::string& path, const NetworkSpec& net) {
    write_file(path, network_to_json(net));
}

// --- dataflow configs and tune results ---------------------------------------

namespace {

json config_to_jobj(const DataflowConfig& cfg) {
    json j;
    j["kind"] = to_string(cfg.kind);
    j["splits"] = cfg.splits;
    j["tile"] = {{"cta_m", cfg.tile.cta_m},
                 {"cta_n", cfg.tile.cta_n},
                 {"cta_k", cfg.tile.cta_k},
                 {"warp_rows", cfg.tile.warp_rows},
                 {"load_width", cfg.tile.load_width}};
    j["reorder"] = to_string(cfg.reorder);
    return j;
}

DataflowConfig config_from_jobj(const json& j) {
    DataflowConfig cfg;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "gather_gemm_scatter") cfg.kind = DataflowKind::gather_gemm_scatter;
    else if (kind == "fetch_on_demand") cfg.kind = DataflowKind::fetch_on_demand;
    else if (kind == "implicit_gemm") cfg.kind = DataflowKind::implicit_gemm;
    else throw ValidationError("unknown dataflow kind: " + kind);
    cfg.splits = j.value("splits", 0);
    if (j.contains("tile")) {
        const json& t = j.at("tile");
        cfg.tile.cta_m = t.value("cta_m", cfg.tile.cta_m);
        cfg.tile.cta_n = t.value("cta_n", cfg.tile.cta_n);
        cfg.tile.cta_k = t.value("cta_k", cfg.tile.cta_k);
        cfg.tile.warp_rows = t.value("warp_rows", cfg.tile.warp_rows);
        cfg.tile.load_width = t.value("load_width", cfg.tile.load_width);
    }
    std::string reorder = j.value("reorder", std::string("offline"));
    if (reorder == "offline") cfg.reorder = ReorderMode::offline;
    else if (reorder == "online") cfg.reorder = ReorderMode::online;
    else throw ValidationError("unknown reorder mode: " + reorder);
    validate(cfg);
    return cfg;
}

}  // namespace

std::string dataflow_config_to_json(const DataflowConfig& cfg) {
    return config_to_jobj(cfg).dump(2) + "\n";
}

DataflowConfig dataflow_config_from_json(const std::string& text) {
    try {
        return config_from_jobj(json::parse(text));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
}

std::string tune_result_to_json(const TuneResult& res) {
    json j;
    j["groups"] = json::array();
    for (const GroupChoice& g : res.groups) {
        json jg;
        jg["id"] = g.id;
        jg["layers"] = g.layer_names;
        jg["forward"] = config_to_jobj(g.forward);
        if (g.dgrad) jg["dgrad"] = config_to_jobj(*g.dgrad);
        if (g.wgrad) jg["wgrad"] = config_to_jobj(*g.wgrad);
        j["groups"].push_back(std::move(jg));
    }
    j["latency_ms"] = res.latency_ms;
    j["tuning_wall_ms"] = res.tuning_wall_ms;
    j["seed"] = res.seed;
    j["log"] = json::array();
    for (const MeasurementRecord& m : res.log) {
        json jm;
        jm["pass"] = m.pass;
        jm["group"] = m.group;
        jm["config"] = config_to_jobj(m.cfg);
        jm["ms"] = m.ms;
        j["log"].push_back(std::move(jm));
    }
    return j.dump(2) + "\n";
}

TuneResult tune_result_from_json(const std::string& text) {
    TuneResult res;
    try {
        json j = json::parse(text);
        for (const json& jg : j.at("groups")) {
            GroupChoice g;
            g.id = jg.at("id").get<int>();
            g.layer_names = jg.value("layers", std::vector<std::string>{});
            g.forward = config_from_jobj(jg.at("forward"));
            if (jg.contains("dgrad")) g.dgrad = config_from_jobj(jg.at("dgrad"));
            if (jg.contains("wgrad")) g.wgrad = config_from_jobj(jg.at("wgrad"));
            res.groups.push_back(std::move(g));
        }
        res.latency_ms = j.value("latency_ms", 0.0);
        res.tuning_wall_ms = j.value("tuning_wall_ms", 0.0);
        res.seed = j.value("seed", 0ull);
        if (j.contains("log")) {
            for (const json& jm : j.at("log")) {
                MeasurementRecord m;
                m.pass = jm.value("pass", 0);
                m.group = jm.at("group").get<int>();
                m.cfg = config_from_jobj(jm.at("config"));
                m.ms = jm.at("ms").get<double>();
                res.log.push_back(m);
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("tune result parse error: ") + e.what());
    }
    return res;
}

TuneResult read_tune_result(const std::string& path) {
    return tune_result_from_json(read_file(path));
}

void write_tune_result(const std::string& path, const TuneResult& res) {
    write_file(path, tune_result_to_json(res));
}

}  // namespace sparsekit
