#include "sparsekit/gen.hpp"

#include <array>
#include <cmath>
#include <random>

namespace sparsekit {

CloudKind cloud_kind_from_string(const std::string& s) {
    if (s == "uniform") return CloudKind::uniform;
    if (s == "planar_patches") return CloudKind::planar_patches;
    if (s == "gaussian_clusters") return CloudKind::gaussian_clusters;
    throw ValidationError("unknown cloud kind: " + s);
}

namespace {

std::array<double, 3> normalize(std::array<double, 3> v) {
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n < 1e-12) return {1, 0, 0};
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::array<double, 3> cross(const std::array<double, 3>& a,
                            const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

std::vector<double> gen_cloud(CloudKind kind, int n, uint64_t seed, double extent) {
    if (n < 0) throw ValidationError("point count must be >= 0");
    if (!(extent > 0)) throw ValidationError("extent must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> pts;
    pts.reserve(static_cast<size_t>(n) * 3);

    switch (kind) {
        case CloudKind::uniform:
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < 3; ++d) pts.push_back(uni(rng) * extent);
            break;
        case CloudKind::planar_patches: {
            const int n_patches = std::max(1, n / 2500);
            const int per = n / n_patches;
            for (int p = 0; p < n_patches; ++p) {
                std::array<double, 3> c{uni(rng) * extent, uni(rng) * extent,
                                        uni(rng) * extent};
                std::array<double, 3> nrm =
                    normalize({gauss(rng), gauss(rng), gauss(rng)});
                std::array<double, 3> ref =
                    std::abs(nrm[0]) < 0.9 ? std::array<double, 3>{1, 0, 0}
                                           : std::array<double, 3>{0, 1, 0};
                std::array<double, 3> u = normalize(cross(nrm, ref));
                std::array<double, 3> v = cross(nrm, u);
                double radius = (0.2 + 0.3 * uni(rng)) * extent;
                int m = (p == n_patches - 1) ? n - per * (n_patches - 1) : per;
                for (int i = 0; i < m; ++i) {
                    double a = (2 * uni(rng) - 1) * radius;
                    double b = (2 * uni(rng) - 1) * radius;
                    for (int d = 0; d < 3; ++d)
                        pts.push_back(c[d] + a * u[d] + b * v[d]);
                }
            }
            break;
        }
        case CloudKind::gaussian_clusters: {
            const int n_clusters = std::max(1, n / 4000);
            const int per = n / n_clusters;
            for (int p = 0; p < n_clusters; ++p) {
                std::array<double, 3> c{uni(rng) * extent, uni(rng) * extent,
                                        uni(rng) * extent};
                double sigma = (0.05 + 0.1 * uni(rng)) * extent;
                int m = (p == n_clusters - 1) ? n - per * (n_clusters - 1) : per;
                for (int i = 0; i < m; ++i)
                    for (int d = 0; d < 3; ++d) pts.push_back(c[d] + sigma * gauss(rng));
            }
            break;
        }
    }
    return pts;
}

}  // namespace sparsekit
