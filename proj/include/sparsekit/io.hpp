#pragma once

#include <string>
#include <vector>

#include "sparsekit/exec.hpp"
#include "sparsekit/network.hpp"
#include "sparsekit/tuner.hpp"

namespace sparsekit {

// Raw (unquantized) point cloud as stored on disk.
struct PointCloudFile {
    int dims = 3;
    int channels = 0;
    std::vector<double> coords;  // n x dims row-major
    std::vector<double> feats;   // n x channels row-major

    int n() const { return dims ? static_cast<int>(coords.size()) / dims : 0; }
};

// Text format: one point per line, `x y z [f0 f1 ...]`, '#' comments ignored.
PointCloudFile read_points_text(const std::string& path);
void write_points_text(const std::string& path, const PointCloudFile& pc);

// Binary format: magic TSPT, u32 version=1, u32 N, u32 D, u32 C, N x D f32
// coords, N x C f32 features, little-endian.
PointCloudFile read_tspt(const std::string& path);
void write_tspt(const std::string& path, const PointCloudFile& pc);

// Dispatch on extension: .tspt binary, anything else text.
PointCloudFile read_points(const std::string& path);

// Weights: magic TSPW, u32 version=1, u32 layer_count, per layer u32 K^D (or
// R), u32 C_in, u32 C_out, f32 values row-major [offset][C_in][C_out],
// little-endian. Values are widened to `prec` on read.
std::vector<WeightTensor> read_tspw(const std::string& path, Precision prec);
void write_tspw(const std::string& path, const std::vector<WeightTensor>& layers);

NetworkSpec network_from_json(const std::string& text);
std::string network_to_json(const NetworkSpec& net);
NetworkSpec read_network(const std::string& path);
void write_network(const std::string& path, const NetworkSpec& net);

std::string tune_result_to_json(const TuneResult& res);
TuneResult tune_result_from_json(const std::string& text);
TuneResult read_tune_result(const std::string& path);
void write_tune_result(const std::string& path, const TuneResult& res);

std::string dataflow_config_to_json(const DataflowConfig& cfg);
DataflowConfig dataflow_config_from_json(const std::string& text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

}  // namespace sparsekit
