#pragma once

#include <string>
#include <vector>

#include "sparsekit/kmap.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// Per-offset weight matrices, K^D x C_in x C_out row-major (R x C_in x C_out
// for graph maps), offset order following OffsetSet.
class WeightTensor {
public:
    WeightTensor() = default;
    WeightTensor(int num_offsets, int c_in, int c_out, std::vector<double> values,
                 Precision prec);

    int num_offsets() const { return num_offsets_; }
    int c_in() const { return c_in_; }
    int c_out() const { return c_out_; }
    Precision precision() const { return prec_; }

    template <class T>
    const T* data() const;

    // W'_{-delta} = W_delta^T; used by dgrad.
    WeightTensor transposed() const;

    std::vector<double> as_f64() const;

private:
    int num_offsets_ = 0;
    int c_in_ = 0;
    int c_out_ = 0;
    Precision prec_ = Precision::f64;
    std::vector<float> w32_;
    std::vector<double> w64_;
};

template <>
inline const float* WeightTensor::data<float>() const { return w32_.data(); }
template <>
inline const double* WeightTensor::data<double>() const { return w64_.data(); }

struct TilePreset {
    int cta_m = 32;
    int cta_n = 16;
    int cta_k = 16;
    int warp_rows = 8;   // rows processed in lockstep by the cost model
    int load_width = 4;  // per-thread load count

    friend bool operator==(const TilePreset&, const TilePreset&) = default;
};

TilePreset tile_small();  // (32, 16, 16, W 8, load 4)
TilePreset tile_large();  // (64, 32, 32, W 8, load 8)

enum class DataflowKind { gather_gemm_scatter, fetch_on_demand, implicit_gemm };
enum class ReorderMode { offline, online };

const char* to_string(DataflowKind k);
const char* to_string(ReorderMode m);

struct DataflowConfig {
    DataflowKind kind = DataflowKind::gather_gemm_scatter;
    int splits = 0;  // 0 = unsorted; meaningful for implicit_gemm only
    TilePreset tile = tile_small();
    ReorderMode reorder = ReorderMode::offline;

    std::string name() const;
    friend bool operator==(const DataflowConfig&, const DataflowConfig&) = default;
};

void validate(const DataflowConfig& cfg);

// --- Forward executors -------------------------------------------------------
//
// All executors agree with conv_ref: bit-exactly in f64 deterministic mode,
// within per-element relative 1e-4 in f32. Deterministic mode fixes the
// per-element accumulation order: one dot product per (output, offset) over
// ascending input channels, added in global offset order; implicit-GEMM splits
// then accumulate sequentially so partial sums telescope into the same chain.

// Serial brute-force reference: the direct double sum over offsets and pairs.
Features conv_ref(const Features& in, const WeightTensor& w, const KernelMapWS& map);

Features conv_gather_scatter(const Features& in, const WeightTensor& w,
                             const KernelMapWS& map, const DataflowConfig& cfg,
                             const ExecContext& ctx);
Features conv_fetch_on_demand(const Features& in, const WeightTensor& w,
                              const KernelMapWS& map, const DataflowConfig& cfg,
                              const ExecContext& ctx);
// `map` must be prepared (split_and_sort + pad) for cfg when cfg.reorder is
// offline; online reorder accepts the raw map and prepares it internally.
Features conv_implicit_gemm(const Features& in, const WeightTensor& w,
                            const KernelMapOS& map, const DataflowConfig& cfg,
                            const ExecContext& ctx);

// Prepare an OS map for a config: split_and_sort(splits) then pad to cta_m.
KernelMapOS prepare_os_map(const KernelMapOS& raw, const DataflowConfig& cfg);

// Dispatch by cfg.kind. For implicit_gemm, `os` must follow the reorder-mode
// contract above; other kinds use `ws`.
Features conv_forward(const Features& in, const WeightTensor& w,
                      const KernelMapWS* ws, const KernelMapOS* os,
                      const DataflowConfig& cfg, const ExecContext& ctx);

// Elementwise sum of equally shaped partial buffers, fixed buffer order.
template <class T>
std::vector<T> reduce_partials(const std::vector<std::vector<T>>& buffers);

// --- Backward ----------------------------------------------------------------

// dx = dy convolved through the transposed map with transposed weights;
// cfg chooses the dataflow. `map` is the forward-orientation WS map.
Features conv_dgrad(const Features& dy, const WeightTensor& w,
                    const KernelMapWS& map, const DataflowConfig& cfg,
                    const ExecContext& ctx);

// dW_delta = sum_{(j,k) in M_delta} x_j^T dy_k, pair order fixed.
WeightTensor conv_wgrad(const Features& x, const Features& dy,
                        const KernelMapWS& map, const DataflowConfig& cfg,
                        const ExecContext& ctx);

}  // namespace sparsekit
