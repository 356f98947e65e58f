#include "sparsekit/network.hpp"

#include <chrono>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

namespace sparsekit {

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::conv_transposed: return "conv_transposed";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "conv_transposed") return LayerKind::conv_transposed;
    throw ValidationError("unknown layer kind: " + s);
}

int NetworkSpec::layer_index(const std::string& name) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == name) return static_cast<int>(i);
    return -1;
}

void NetworkSpec::validate() const {
    if (dims != 2 && dims != 3) throw ValidationError("network dims must be 2 or 3");
    if (layers.empty()) throw ValidationError("network has no layers");
    std::unordered_set<std::string> seen;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        if (l.name.empty()) throw ValidationError("layer " + std::to_string(i) + " has no name");
        if (!seen.insert(l.name).second)
            throw ValidationError("duplicate layer name: " + l.name);
        if (l.c_in <= 0 || l.c_out <= 0)
            throw ValidationError(l.name + ": channel counts must be positive");
        if (l.kernel <= 0 || l.kernel % 2 == 0)
            throw ValidationError(l.name + ": kernel size must be odd and positive");
        if (l.stride <= 0) throw ValidationError(l.name + ": stride must be positive");
        if (l.inputs.size() > 2)
            throw ValidationError(l.name + ": at most two producers supported");
        for (const std::string& p : l.inputs) {
            int j = layer_index(p);
            if (j < 0 || j >= static_cast<int>(i))
                throw ValidationError(l.name + ": producer '" + p +
                                      "' must be an earlier layer");
            if (layers[j].c_out != l.c_in)
                throw ValidationError(l.name + ": c_in " + std::to_string(l.c_in) +
                                      " does not match producer '" + p + "' c_out " +
                                      std::to_string(layers[j].c_out));
        }
        if (l.inputs.size() == 2) {
            int a = layer_index(l.inputs[0]);
            int b = layer_index(l.inputs[1]);
            if (layers[a].c_out != layers[b].c_out)
                throw ValidationError(l.name + ": skip producers disagree on channels");
        }
        if (l.kind == LayerKind::conv_transposed) {
            int j = layer_index(l.transpose_of);
            if (j < 0 || j >= static_cast<int>(i))
                throw ValidationError(l.name + ": transpose_of must name an earlier layer");
            const LayerSpec& f = layers[j];
            if (f.kind != LayerKind::conv)
                throw ValidationError(l.name + ": transpose_of must be a conv layer");
            if (f.kernel != l.kernel || f.stride != l.stride)
                throw ValidationError(l.name + ": kernel/stride must match '" +
                                      l.transpose_of + "'");
        } else if (!l.transpose_of.empty()) {
            throw ValidationError(l.name + ": transpose_of is only valid on conv_transposed");
        }
    }
}

namespace {

// Structural coordinate-set symbols: the input cloud is symbol 0; a strided
// layer maps its input symbol to one derived symbol per (symbol, stride), so
// two downsamples of the same set coincide. Sample-independent by design.
struct LayerSyms {
    int in_sym = 0;
    int out_sym = 0;
};

struct StructKey {
    int in_sym, out_sym, kernel, stride;
    friend bool operator==(const StructKey&, const StructKey&) = default;
};

struct Propagated {
    std::vector<LayerSyms> syms;
    std::vector<StructKey> keys;  // canonical (forward-orientation) per layer
};

Propagated propagate_syms(const NetworkSpec& net) {
    Propagated out;
    out.syms.resize(net.layers.size());
    out.keys.resize(net.layers.size());
    int next_sym = 1;
    std::unordered_map<int64_t, int> derived;  // (in_sym, stride) -> out_sym
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        int in_sym = 0;
        if (!l.inputs.empty()) {
            in_sym = out.syms[net.layer_index(l.inputs[0])].out_sym;
            if (l.inputs.size() == 2) {
                int other = out.syms[net.layer_index(l.inputs[1])].out_sym;
                if (other != in_sym)
                    throw ValidationError(l.name +
                                          ": skip producers live on different coordinate sets");
            }
        }
        int out_sym;
        if (l.kind == LayerKind::conv_transposed) {
            int j = net.layer_index(l.transpose_of);
            if (out.syms[j].out_sym != in_sym)
                throw ValidationError(l.name + ": input coordinates do not match the output of '" +
                                      l.transpose_of + "'");
            out_sym = out.syms[j].in_sym;
            out.keys[i] = out.keys[j];  // shares the forward map
        } else if (l.stride == 1) {
            out_sym = in_sym;
            out.keys[i] = {in_sym, out_sym, l.kernel, 1};
        } else {
            int64_t dk = static_cast<int64_t>(in_sym) * 64 + l.stride;
            auto it = derived.find(dk);
            if (it == derived.end()) it = derived.emplace(dk, next_sym++).first;
            out_sym = it->second;
            out.keys[i] = {in_sym, out_sym, l.kernel, l.stride};
        }
        out.syms[i] = {in_sym, out_sym};
    }
    return out;
}

}  // namespace

std::vector<LayerGroup> partition_groups(const NetworkSpec& net) {
    net.validate();
    Propagated p = propagate_syms(net);
    std::vector<LayerGroup> groups;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        int gid = -1;
        for (const LayerGroup& g : groups)
            if (p.keys[g.layers.front()] == p.keys[i]) { gid = g.id; break; }
        if (gid < 0) {
            LayerGroup g;
            g.id = static_cast<int>(groups.size());
            groups.push_back(g);
            gid = g.id;
        }
        groups[gid].layers.push_back(static_cast<int>(i));
    }
    return groups;
}

// ---------------------------------------------------------------------------

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0).count();
}

Features ones(int n, int c, Precision prec) {
    return Features::from_f64(n, c, std::vector<double>(static_cast<size_t>(n) * c, 1.0),
                              prec);
}

Features add(const Features& a, const Features& b) {
    if (a.n() != b.n() || a.channels() != b.channels() || a.precision() != b.precision())
        throw ValidationError("skip connection operands have mismatched shapes");
    std::vector<double> va = a.to_f64();
    std::vector<double> vb = b.to_f64();
    for (size_t i = 0; i < va.size(); ++i) va[i] += vb[i];
    return Features::from_f64(a.n(), a.channels(), std::move(va), a.precision());
}

struct OrientMaps {
    std::shared_ptr<const KernelMapWS> ws;
    std::shared_ptr<const KernelMapOS> raw_os;
    std::unordered_map<int64_t, std::shared_ptr<const KernelMapOS>> prepared;
};

struct GroupMaps {
    bool built = false;
    SparseTensor fwd_in;   // coords-only, forward orientation
    SparseTensor fwd_out;
    OrientMaps fwd;
    OrientMaps rev;
};

}  // namespace

struct NetworkRunner::Impl {
    NetworkSpec net;
    std::vector<WeightTensor> weights;
    std::vector<WeightTensor> weights_t;  // lazily filled transposed weights
    std::vector<char> has_wt;
    ExecContext ctx;
    std::vector<LayerGroup> groups;
    std::vector<int> layer_group;
    std::unordered_map<uint64_t, std::vector<GroupMaps>> maps_by_root;
    uint64_t last_root = 0;
    bool has_root = false;
    size_t builds = 0;

    const WeightTensor& wt(int layer) {
        if (!has_wt[layer]) {
            weights_t[layer] = weights[layer].transposed();
            has_wt[layer] = 1;
        }
        return weights_t[layer];
    }

    GroupMaps& group_maps(uint64_t root, int g) {
        auto& v = maps_by_root[root];
        if (v.empty()) v.resize(groups.size());
        return v[g];
    }

    void ensure_fwd_ws(GroupMaps& gm, const SparseTensor& in, int kernel, int stride,
                       double* mapping_ms) {
        if (gm.built) return;
        auto t0 = std::chrono::steady_clock::now();
        std::array<int, 3> s{stride, stride, stride};
        if (net.dims == 2) s[2] = 1;
        gm.fwd_in = SparseTensor::coords_only(net.dims, in.coords());
        gm.fwd_in.set_stride_tag(in.stride_tag());
        gm.fwd_out = build_out_coords(gm.fwd_in, s);
        OffsetSet offs(net.dims, kernel);
        gm.fwd.ws = std::make_shared<KernelMapWS>(
            build_kmap_ws(gm.fwd_in, gm.fwd_out, s, offs));
        gm.built = true;
        ++builds;
        if (mapping_ms) *mapping_ms += ms_since(t0);
    }

    OrientMaps& orient(GroupMaps& gm, bool reverse, double* mapping_ms) {
        if (!reverse) return gm.fwd;
        if (!gm.rev.ws) {
            auto t0 = std::chrono::steady_clock::now();
            gm.rev.ws = std::make_shared<KernelMapWS>(transpose_map(*gm.fwd.ws));
            ++builds;
            if (mapping_ms) *mapping_ms += ms_since(t0);
        }
        return gm.rev;
    }

    const KernelMapOS* os_for(OrientMaps& om, const DataflowConfig& cfg,
                              double* mapping_ms) {
        if (cfg.kind != DataflowKind::implicit_gemm) return nullptr;
        if (!om.raw_os) {
            auto t0 = std::chrono::steady_clock::now();
            om.raw_os = std::make_shared<KernelMapOS>(ws_to_os(*om.ws));
            ++builds;
            if (mapping_ms) *mapping_ms += ms_since(t0);
        }
        if (cfg.reorder == ReorderMode::online) return om.raw_os.get();
        int64_t pk = static_cast<int64_t>(cfg.splits) * 1024 + cfg.tile.cta_m;
        auto it = om.prepared.find(pk);
        if (it == om.prepared.end()) {
            auto t0 = std::chrono::steady_clock::now();
            it = om.prepared
                     .emplace(pk, std::make_shared<KernelMapOS>(
                                      prepare_os_map(*om.raw_os, cfg)))
                     .first;
            if (mapping_ms) *mapping_ms += ms_since(t0);
        }
        return it->second.get();
    }

    struct Trace {
        std::vector<SparseTensor> outs;    // per layer
        std::vector<Features> layer_in;    // resolved input features per layer
    };

    Trace run_forward(const SparseTensor& input, const GroupAssignment& asg,
                      RunStats* stats, bool keep_inputs) {
        if (asg.size() != groups.size())
            throw ValidationError("assignment size does not match group count");
        if (!input.has_features())
            throw ValidationError("network input has no features");
        last_root = input.coord_set_id();
        has_root = true;
        if (stats) stats->groups.assign(groups.size(), GroupTiming{});

        Trace tr;
        tr.outs.resize(net.layers.size());
        if (keep_inputs) tr.layer_in.resize(net.layers.size());

        for (size_t i = 0; i < net.layers.size(); ++i) {
            const LayerSpec& l = net.layers[i];
            const int g = layer_group[i];
            double* map_ms = stats ? &stats->groups[g].mapping_ms : nullptr;

            const SparseTensor* src = &input;
            Features x;
            if (l.inputs.empty()) {
                x = input.feats();
            } else if (l.inputs.size() == 1) {
                src = &tr.outs[net.layer_index(l.inputs[0])];
                x = src->feats();
            } else {
                const SparseTensor& a = tr.outs[net.layer_index(l.inputs[0])];
                const SparseTensor& b = tr.outs[net.layer_index(l.inputs[1])];
                src = &a;
                x = add(a.feats(), b.feats());
            }
            if (x.channels() != l.c_in)
                throw ValidationError(l.name + ": input has " +
                                      std::to_string(x.channels()) +
                                      " channels, expected " + std::to_string(l.c_in));

            GroupMaps& gm = group_maps(last_root, g);
            const bool reverse = l.kind == LayerKind::conv_transposed;
            if (!gm.built) {
                if (reverse)
                    throw ContractError(l.name + ": forward map missing for transposed layer");
                ensure_fwd_ws(gm, *src, l.kernel, l.stride, map_ms);
            }
            OrientMaps& om = orient(gm, reverse, map_ms);
            const DataflowConfig& cfg = asg[g].forward;
            const KernelMapOS* os = os_for(om, cfg, map_ms);

            auto t0 = std::chrono::steady_clock::now();
            Features y = conv_forward(x, weights[i], om.ws.get(), os, cfg, ctx);
            if (stats) stats->groups[g].kernel_ms += ms_since(t0);

            const SparseTensor& out_coords = reverse ? gm.fwd_in : gm.fwd_out;
            tr.outs[i] = SparseTensor(net.dims, out_coords.coords(), std::move(y));
            tr.outs[i].set_stride_tag(out_coords.stride_tag());
            if (keep_inputs) tr.layer_in[i] = std::move(x);
        }
        if (stats) {
            stats->total_ms = 0;
            for (const auto& gt : stats->groups)
                stats->total_ms += gt.mapping_ms + gt.kernel_ms;
        }
        return tr;
    }
};

NetworkRunner::NetworkRunner(const NetworkSpec& net, std::vector<WeightTensor> weights,
                             ExecContext ctx)
    : impl_(std::make_unique<Impl>()) {
    net.validate();
    if (weights.size() != net.layers.size())
        throw ValidationError("expected " + std::to_string(net.layers.size()) +
                              " weight tensors, got " + std::to_string(weights.size()));
    for (size_t i = 0; i < weights.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        int kd = 1;
        for (int d = 0; d < net.dims; ++d) kd *= l.kernel;
        if (weights[i].num_offsets() != kd || weights[i].c_in() != l.c_in ||
            weights[i].c_out() != l.c_out)
            throw ValidationError(l.name + ": weight shape (" +
                                  std::to_string(weights[i].num_offsets()) + "," +
                                  std::to_string(weights[i].c_in()) + "," +
                                  std::to_string(weights[i].c_out()) +
                                  ") does not match layer (" + std::to_string(kd) + "," +
                                  std::to_string(l.c_in) + "," + std::to_string(l.c_out) +
                                  ")");
    }
    impl_->net = net;
    impl_->weights = std::move(weights);
    impl_->weights_t.resize(impl_->weights.size());
    impl_->has_wt.assign(impl_->weights.size(), 0);
    impl_->ctx = ctx;
    impl_->groups = partition_groups(net);
    impl_->layer_group.resize(net.layers.size());
    for (const LayerGroup& g : impl_->groups)
        for (int l : g.layers) impl_->layer_group[l] = g.id;
}

NetworkRunner::~NetworkRunner() = default;

const NetworkSpec& NetworkRunner::net() const { return impl_->net; }
const std::vector<LayerGroup>& NetworkRunner::groups() const { return impl_->groups; }
int NetworkRunner::group_of_layer(int layer) const { return impl_->layer_group.at(layer); }
size_t NetworkRunner::map_build_count() const { return impl_->builds; }

GroupAssignment NetworkRunner::default_assignment() const {
    GroupConfig gc;  // gather_gemm_scatter throughout
    return GroupAssignment(impl_->groups.size(), gc);
}

SparseTensor NetworkRunner::forward(const SparseTensor& input, const GroupAssignment& asg,
                                    RunStats* stats) {
    Impl::Trace tr = impl_->run_forward(input, asg, stats, false);
    return std::move(tr.outs.back());
}

double NetworkRunner::measure_ms(const SparseTensor& input, const GroupAssignment& asg,
                                 const PhaseMask& mask) {
    RunStats stats;
    Impl::Trace tr = impl_->run_forward(input, asg, &stats, mask.wgrad);
    double total = mask.forward ? stats.total_ms : 0.0;

    if (mask.dgrad) {
        for (size_t i = 0; i < impl_->net.layers.size(); ++i) {
            const LayerSpec& l = impl_->net.layers[i];
            const int g = impl_->layer_group[i];
            GroupMaps& gm = impl_->group_maps(impl_->last_root, g);
            // gradient flows through the opposite orientation
            const bool reverse = l.kind == LayerKind::conv;
            OrientMaps& om = impl_->orient(gm, reverse, nullptr);
            const DataflowConfig& cfg = asg[g].dgrad;
            const KernelMapOS* os = impl_->os_for(om, cfg, nullptr);
            Features dy = ones(tr.outs[i].n(), l.c_out, tr.outs[i].precision());
            auto t0 = std::chrono::steady_clock::now();
            Features dx = conv_forward(dy, impl_->wt(static_cast<int>(i)), om.ws.get(),
                                       os, cfg, impl_->ctx);
            (void)dx;
            total += ms_since(t0);
        }
    }
    if (mask.wgrad) {
        for (size_t i = 0; i < impl_->net.layers.size(); ++i) {
            const LayerSpec& l = impl_->net.layers[i];
            const int g = impl_->layer_group[i];
            GroupMaps& gm = impl_->group_maps(impl_->last_root, g);
            const bool reverse = l.kind == LayerKind::conv_transposed;
            OrientMaps& om = impl_->orient(gm, reverse, nullptr);
            Features dy = ones(tr.outs[i].n(), l.c_out, tr.outs[i].precision());
            auto t0 = std::chrono::steady_clock::now();
            WeightTensor dw = conv_wgrad(tr.layer_in[i], dy, *om.ws, asg[g].wgrad,
                                         impl_->ctx);
            (void)dw;
            total += ms_since(t0);
        }
    }
    return total;
}

std::shared_ptr<const KernelMapOS> NetworkRunner::layer_raw_os(int layer) const {
    if (!impl_->has_root) throw ContractError("layer_raw_os before any forward run");
    auto it = impl_->maps_by_root.find(impl_->last_root);
    if (it == impl_->maps_by_root.end())
        throw ContractError("layer_raw_os before any forward run");
    const LayerSpec& l = impl_->net.layers.at(layer);
    GroupMaps& gm = it->second[impl_->layer_group[layer]];
    if (!gm.built) throw ContractError("layer map not built yet");
    OrientMaps& om = impl_->orient(gm, l.kind == LayerKind::conv_transposed, nullptr);
    if (!om.raw_os) om.raw_os = std::make_shared<KernelMapOS>(ws_to_os(*om.ws));
    return om.raw_os;
}

double NetworkRunner::modeled_group_traffic(int group, const DataflowConfig& cfg) const {
    if (!impl_->has_root) return 0.0;
    auto it = impl_->maps_by_root.find(impl_->last_root);
    if (it == impl_->maps_by_root.end()) return 0.0;
    GroupMaps& gm = it->second[group];
    if (!gm.built) return 0.0;
    double total = 0;
    for (int li : impl_->groups[group].layers) {
        const LayerSpec& l = impl_->net.layers[li];
        const bool reverse = l.kind == LayerKind::conv_transposed;
        OrientMaps& om = impl_->orient(gm, reverse, nullptr);
        if (!om.raw_os)
            om.raw_os = std::make_shared<KernelMapOS>(ws_to_os(*om.ws));
        const int eb = impl_->weights[li].precision() == Precision::f32 ? 4 : 8;
        CostReport r = traffic_model(*om.raw_os, cfg, l.c_in, l.c_out, eb);
        total += static_cast<double>(r.dram_read_bytes + r.dram_write_bytes);
    }
    return total;
}

}  // namespace sparsekit
