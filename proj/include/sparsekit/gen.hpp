#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsekit/common.hpp"

namespace sparsekit {

enum class CloudKind { uniform, planar_patches, gaussian_clusters };

CloudKind cloud_kind_from_string(const std::string& s);

// Deterministic synthetic point cloud, n x 3 row-major world coordinates in
// roughly [0, extent)^3. planar_patches scatters points on random planes and
// is the desk-scale stand-in for surface-like LiDAR sparsity.
std::vector<double> gen_cloud(CloudKind kind, int n, uint64_t seed, double extent);

}  // namespace sparsekit
