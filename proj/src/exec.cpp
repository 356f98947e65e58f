#include "sparsekit/exec.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sparsekit {

WeightTensor::WeightTensor(int num_offsets, int c_in, int c_out,
                           std::vector<double> values, Precision prec)
    : num_offsets_(num_offsets), c_in_(c_in), c_out_(c_out), prec_(prec) {
    if (num_offsets < 1 || c_in < 1 || c_out < 1)
        throw ValidationError("weight tensor dimensions must be >= 1");
    if (values.size() != static_cast<size_t>(num_offsets) * c_in * c_out)
        throw ValidationError("weight tensor value count mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw ValidationError("non-finite weight entry");
    if (prec == Precision::f64)
        w64_ = std::move(values);
    else
        w32_.assign(values.begin(), values.end());
}

std::vector<double> WeightTensor::as_f64() const {
    if (prec_ == Precision::f64) return w64_;
    return std::vector<double>(w32_.begin(), w32_.end());
}

WeightTensor WeightTensor::transposed() const {
    std::vector<double> src = as_f64();
    std::vector<double> dst(src.size());
    for (int k = 0; k < num_offsets_; ++k) {
        int mk = num_offsets_ - 1 - k;
        for (int ci = 0; ci < c_in_; ++ci)
            for (int co = 0; co < c_out_; ++co)
                dst[(static_cast<size_t>(mk) * c_out_ + co) * c_in_ + ci] =
                    src[(static_cast<size_t>(k) * c_in_ + ci) * c_out_ + co];
    }
    return WeightTensor(num_offsets_, c_out_, c_in_, std::move(dst), prec_);
}

TilePreset tile_small() { return TilePreset{32, 16, 16, 8, 4}; }
TilePreset tile_large() { return TilePreset{64, 32, 32, 8, 8}; }

const char* to_string(DataflowKind k) {
    switch (k) {
        case DataflowKind::gather_gemm_scatter: return "gather_gemm_scatter";
        case DataflowKind::fetch_on_demand: return "fetch_on_demand";
        case DataflowKind::implicit_gemm: return "implicit_gemm";
    }
    return "?";
}

const char* to_string(ReorderMode m) {
    return m == ReorderMode::offline ? "offline" : "online";
}

std::string DataflowConfig::name() const {
    std::string s = to_string(kind);
    if (kind == DataflowKind::implicit_gemm) {
        s += "_s" + std::to_string(splits);
        s += tile == tile_large() ? "_large" : "_small";
        s += std::string("_") + to_string(reorder);
    }
    return s;
}

void validate(const DataflowConfig& cfg) {
    if (cfg.splits < 0) throw ValidationError("splits must be >= 0");
    if (cfg.tile.cta_m < 1 || cfg.tile.cta_n < 1 || cfg.tile.cta_k < 1 ||
        cfg.tile.warp_rows < 1 || cfg.tile.load_width < 1)
        throw ValidationError("tile preset fields must be positive");
    if (cfg.tile.cta_m % cfg.tile.warp_rows != 0)
        throw ValidationError("cta_m must be a multiple of warp_rows");
}

namespace {

void check_shapes(const Features& in, const WeightTensor& w, int n_in) {
    if (in.n() != n_in) throw ContractError("input row count does not match map");
    if (in.channels() != w.c_in()) throw ContractError("C_in mismatch");
    if (in.precision() != w.precision()) throw ContractError("precision mismatch");
}

// Canonical per-(output, offset) contribution: dot product over ascending
// input channels, added to the running output value. Every executor funnels
// its per-element arithmetic through this shape so deterministic f64 runs are
// bit-identical across dataflows.
template <class T>
inline void accumulate_pair(const T* xrow, const T* wd, int c_in, int c_out, T* yrow) {
    for (int co = 0; co < c_out; ++co) {
        T acc = 0;
        for (int c = 0; c < c_in; ++c) acc += xrow[c] * wd[static_cast<size_t>(c) * c_out + co];
        yrow[co] += acc;
    }
}

template <class T>
std::vector<T> conv_ref_impl(const Features& in, const WeightTensor& w,
                             const KernelMapWS& map) {
    const T* x = in.data<T>();
    const T* wv = w.data<T>();
    const int c_in = w.c_in(), c_out = w.c_out();
    std::vector<T> y(static_cast<size_t>(map.n_out) * c_out, T(0));
    for (int k = 0; k < map.num_offsets; ++k) {
        const T* wd = wv + static_cast<size_t>(k) * c_in * c_out;
        for (const auto& [j, o] : map.pairs[k])
            accumulate_pair(x + static_cast<size_t>(j) * c_in, wd, c_in, c_out,
                            y.data() + static_cast<size_t>(o) * c_out);
    }
    return y;
}

template <class T>
std::vector<T> gather_scatter_impl(const Features& in, const WeightTensor& w,
                                   const KernelMapWS& map, int threads) {
    const T* x = in.data<T>();
    const T* wv = w.data<T>();
    const int c_in = w.c_in(), c_out = w.c_out();
    std::vector<T> y(static_cast<size_t>(map.n_out) * c_out, T(0));
    std::vector<T> gather_buf, out_buf;
    for (int k = 0; k < map.num_offsets; ++k) {
        const auto& pl = map.pairs[k];
        if (pl.empty()) continue;  // skipped with zero cost
        const int m = static_cast<int>(pl.size());
        const T* wd = wv + static_cast<size_t>(k) * c_in * c_out;
        gather_buf.resize(static_cast<size_t>(m) * c_in);
        out_buf.assign(static_cast<size_t>(m) * c_out, T(0));
#pragma omp parallel for num_threads(threads) schedule(static)
        for (int i = 0; i < m; ++i)
            std::copy_n(x + static_cast<size_t>(pl[i].first) * c_in, c_in,
                        gather_buf.data() + static_cast<size_t>(i) * c_in);
        // dense GEMM: out_buf = gather_buf x W_delta
#pragma omp parallel for num_threads(threads) schedule(static)
        for (int i = 0; i < m; ++i)
            accumulate_pair(gather_buf.data() + static_cast<size_t>(i) * c_in, wd,
                            c_in, c_out, out_buf.data() + static_cast<size_t>(i) * c_out);
        if (!map.graph) {
            // out rows are unique within one offset, so scatter-add is race free
#pragma omp parallel for num_threads(threads) schedule(static)
            for (int i = 0; i < m; ++i) {
                T* yrow = y.data() + static_cast<size_t>(pl[i].second) * c_out;
                const T* src = out_buf.data() + static_cast<size_t>(i) * c_out;
                for (int co = 0; co < c_out; ++co) yrow[co] += src[co];
            }
        } else {
            for (int i = 0; i < m; ++i) {
                T* yrow = y.data() + static_cast<size_t>(pl[i].second) * c_out;
                const T* src = out_buf.data() + static_cast<size_t>(i) * c_out;
                for (int co = 0; co < c_out; ++co) yrow[co] += src[co];
            }
        }
    }
    return y;
}

template <class T>
std::vector<T> fetch_on_demand_impl(const Features& in, const WeightTensor& w,
                                    const KernelMapWS& map, int threads,
                                    bool deterministic) {
    const T* x = in.data<T>();
    const T* wv = w.data<T>();
    const int c_in = w.c_in(), c_out = w.c_out();
    const size_t ysize = static_cast<size_t>(map.n_out) * c_out;
    std::vector<T> y(ysize, T(0));

    if (deterministic || threads <= 1) {
        for (int k = 0; k < map.num_offsets; ++k) {
            const T* wd = wv + static_cast<size_t>(k) * c_in * c_out;
            for (const auto& [j, o] : map.pairs[k])
                accumulate_pair(x + static_cast<size_t>(j) * c_in, wd, c_in, c_out,
                                y.data() + static_cast<size_t>(o) * c_out);
        }
        return y;
    }

    // Block-fused variant: offsets become a parallel dimension. Per-worker
    // accumulation buffers merged in fixed order stand in for the serialized
    // DRAM writes of the fused kernel.
    const int nw = std::min(threads, std::max(1, map.num_offsets));
    std::vector<std::vector<T>> partial(nw, std::vector<T>(ysize, T(0)));
#pragma omp parallel num_threads(nw)
    {
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        std::vector<T>& local = partial[tid];
        for (int k = tid; k < map.num_offsets; k += nw) {
            const T* wd = wv + static_cast<size_t>(k) * c_in * c_out;
            for (const auto& [j, o] : map.pairs[k])
                accumulate_pair(x + static_cast<size_t>(j) * c_in, wd, c_in, c_out,
                                local.data() + static_cast<size_t>(o) * c_out);
        }
    }
    return reduce_partials(partial);
}

// One split of the implicit GEMM: rows in tiles of cta_m, K loop over the
// split's offsets, A tile rows resolved through the map (sentinel = zero row,
// realized by skipping the term).
template <class T>
void implicit_gemm_split(const T* x, const T* wv, const KernelMapOS::Split& sp,
                         int c_in, int c_out, const TilePreset& tile, int threads,
                         T* out) {
    const int width = sp.width();
    const int n_tiles = (sp.n_rows + tile.cta_m - 1) / tile.cta_m;
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int t = 0; t < n_tiles; ++t) {
        const int r0 = t * tile.cta_m;
        const int r1 = std::min(sp.n_rows, r0 + tile.cta_m);
        for (int r = r0; r < r1; ++r) {
            const int32_t orow = sp.out_row[r];
            if (orow == kSentinel) continue;  // pad row
            T* yrow = out + static_cast<size_t>(orow) * c_out;
            for (int j = 0; j < width; ++j) {
                const int32_t e = sp.entry(r, j);
                if (e == kSentinel) continue;
                const int k = sp.offset_begin + j;
                accumulate_pair(x + static_cast<size_t>(e) * c_in,
                                wv + static_cast<size_t>(k) * c_in * c_out,
                                c_in, c_out, yrow);
            }
        }
    }
}

template <class T>
std::vector<T> implicit_gemm_impl(const Features& in, const WeightTensor& w,
                                  const KernelMapOS& map, const DataflowConfig& cfg,
                                  int threads, bool deterministic) {
    const T* x = in.data<T>();
    const T* wv = w.data<T>();
    const int c_in = w.c_in(), c_out = w.c_out();
    const size_t ysize = static_cast<size_t>(map.n_out) * c_out;

    if (deterministic) {
        // splits execute in order into one buffer: partial sums telescope into
        // the canonical offset-order chain
        std::vector<T> y(ysize, T(0));
        for (const auto& sp : map.splits)
            implicit_gemm_split(x, wv, sp, c_in, c_out, cfg.tile, threads, y.data());
        return y;
    }
    std::vector<std::vector<T>> partials;
    partials.reserve(map.splits.size());
    for (const auto& sp : map.splits) {
        partials.emplace_back(ysize, T(0));
        implicit_gemm_split(x, wv, sp, c_in, c_out, cfg.tile, threads,
                            partials.back().data());
    }
    return reduce_partials(partials);
}

template <class T>
std::vector<T> wgrad_impl(const Features& xf, const Features& dyf,
                          const KernelMapWS& map, int threads) {
    const T* x = xf.data<T>();
    const T* dy = dyf.data<T>();
    const int c_in = xf.channels(), c_out = dyf.channels();
    std::vector<T> dw(static_cast<size_t>(map.num_offsets) * c_in * c_out, T(0));
    // offsets are independent; pair order inside an offset stays fixed
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int k = 0; k < map.num_offsets; ++k) {
        T* wd = dw.data() + static_cast<size_t>(k) * c_in * c_out;
        for (const auto& [j, o] : map.pairs[k]) {
            const T* xr = x + static_cast<size_t>(j) * c_in;
            const T* dr = dy + static_cast<size_t>(o) * c_out;
            for (int ci = 0; ci < c_in; ++ci)
                for (int co = 0; co < c_out; ++co)
                    wd[static_cast<size_t>(ci) * c_out + co] += xr[ci] * dr[co];
        }
    }
    return dw;
}

template <class T>
Features wrap(int n, int c, std::vector<T>&& v);

template <>
Features wrap<double>(int n, int c, std::vector<double>&& v) {
    return Features::from_f64(n, c, std::move(v), Precision::f64);
}
template <>
Features wrap<float>(int n, int c, std::vector<float>&& v) {
    return Features::from_f64(n, c, std::vector<double>(v.begin(), v.end()),
                              Precision::f32);
}

}  // namespace

template <class T>
std::vector<T> reduce_partials(const std::vector<std::vector<T>>& buffers) {
    if (buffers.empty()) throw ContractError("reduce_partials needs >= 1 buffer");
    std::vector<T> out = buffers[0];
    for (size_t b = 1; b < buffers.size(); ++b) {
        if (buffers[b].size() != out.size())
            throw ContractError("partial buffer shape mismatch");
        for (size_t i = 0; i < out.size(); ++i) out[i] += buffers[b][i];
    }
    return out;
}

template std::vector<float> reduce_partials(const std::vector<std::vector<float>>&);
template std::vector<double> reduce_partials(const std::vector<std::vector<double>>&);

Features conv_ref(const Features& in, const WeightTensor& w, const KernelMapWS& map) {
    check_shapes(in, w, map.n_in);
    if (in.precision() == Precision::f64)
        return wrap(map.n_out, w.c_out(), conv_ref_impl<double>(in, w, map));
    return wrap(map.n_out, w.c_out(), conv_ref_impl<float>(in, w, map));
}

Features conv_gather_scatter(const Features& in, const WeightTensor& w,
                             const KernelMapWS& map, const DataflowConfig& cfg,
                             const ExecContext& ctx) {
    validate(cfg);
    check_shapes(in, w, map.n_in);
    const int nt = resolve_threads(ctx.threads);
    if (in.precision() == Precision::f64)
        return wrap(map.n_out, w.c_out(), gather_scatter_impl<double>(in, w, map, nt));
    return wrap(map.n_out, w.c_out(), gather_scatter_impl<float>(in, w, map, nt));
}

Features conv_fetch_on_demand(const Features& in, const WeightTensor& w,
                              const KernelMapWS& map, const DataflowConfig& cfg,
                              const ExecContext& ctx) {
    validate(cfg);
    check_shapes(in, w, map.n_in);
    const int nt = resolve_threads(ctx.threads);
    if (in.precision() == Precision::f64)
        return wrap(map.n_out, w.c_out(),
                    fetch_on_demand_impl<double>(in, w, map, nt, ctx.deterministic));
    return wrap(map.n_out, w.c_out(),
                fetch_on_demand_impl<float>(in, w, map, nt, ctx.deterministic));
}

KernelMapOS prepare_os_map(const KernelMapOS& raw, const DataflowConfig& cfg) {
    return pad_map(split_and_sort(raw, cfg.splits), cfg.tile.cta_m);
}

Features conv_implicit_gemm(const Features& in, const WeightTensor& w,
                            const KernelMapOS& map, const DataflowConfig& cfg,
                            const ExecContext& ctx) {
    validate(cfg);
    check_shapes(in, w, map.n_in);
    const int nt = resolve_threads(ctx.threads);
    const KernelMapOS* m = &map;
    KernelMapOS prepared;
    if (cfg.reorder == ReorderMode::online) {
        // sort/pad cost is part of this call by design
        prepared = prepare_os_map(map, cfg);
        m = &prepared;
    } else if (map.requested_splits != cfg.splits || (cfg.splits >= 1 && !map.sorted)) {
        throw ContractError("offline reorder requires a map prepared for this config");
    }
    if (in.precision() == Precision::f64)
        return wrap(m->n_out, w.c_out(),
                    implicit_gemm_impl<double>(in, w, *m, cfg, nt, ctx.deterministic));
    return wrap(m->n_out, w.c_out(),
                implicit_gemm_impl<float>(in, w, *m, cfg, nt, ctx.deterministic));
}

Features conv_forward(const Features& in, const WeightTensor& w,
                      const KernelMapWS* ws, const KernelMapOS* os,
                      const DataflowConfig& cfg, const ExecContext& ctx) {
    switch (cfg.kind) {
        case DataflowKind::gather_gemm_scatter:
            if (!ws) throw ContractError("gather_gemm_scatter needs a WS map");
            return conv_gather_scatter(in, w, *ws, cfg, ctx);
        case DataflowKind::fetch_on_demand:
            if (!ws) throw ContractError("fetch_on_demand needs a WS map");
            return conv_fetch_on_demand(in, w, *ws, cfg, ctx);
        case DataflowKind::implicit_gemm:
            if (!os) throw ContractError("implicit_gemm needs an OS map");
            return conv_implicit_gemm(in, w, *os, cfg, ctx);
    }
    throw ContractError("unknown dataflow kind");
}

Features conv_dgrad(const Features& dy, const WeightTensor& w,
                    const KernelMapWS& map, const DataflowConfig& cfg,
                    const ExecContext& ctx) {
    KernelMapWS tmap = transpose_map(map);
    WeightTensor tw = w.transposed();
    if (cfg.kind == DataflowKind::implicit_gemm) {
        KernelMapOS os = ws_to_os(tmap);
        if (cfg.reorder == ReorderMode::offline) os = prepare_os_map(os, cfg);
        return conv_implicit_gemm(dy, tw, os, cfg, ctx);
    }
    return conv_forward(dy, tw, &tmap, nullptr, cfg, ctx);
}

WeightTensor conv_wgrad(const Features& x, const Features& dy,
                        const KernelMapWS& map, const DataflowConfig& cfg,
                        const ExecContext& ctx) {
    validate(cfg);
    if (x.n() != map.n_in || dy.n() != map.n_out)
        throw ContractError("wgrad shapes do not match map");
    if (x.precision() != dy.precision()) throw ContractError("precision mismatch");
    const int nt = resolve_threads(ctx.threads);
    if (x.precision() == Precision::f64) {
        auto dw = wgrad_impl<double>(x, dy, map, nt);
        return WeightTensor(map.num_offsets, x.channels(), dy.channels(),
                            std::move(dw), Precision::f64);
    }
    auto dw = wgrad_impl<float>(x, dy, map, nt);
    return WeightTensor(map.num_offsets, x.channels(), dy.channels(),
                        std::vector<double>(dw.begin(), dw.end()), Precision::f32);
}

}  // namespace sparsekit
