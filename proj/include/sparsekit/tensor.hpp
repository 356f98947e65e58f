#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "sparsekit/common.hpp"

namespace sparsekit {

// Quantized integer coordinate. Unused trailing components stay zero so that
// equality/hashing over (batch, x, y, z) works for both D=2 and D=3.
struct Coord {
    int32_t batch = 0;
    std::array<int32_t, 3> x{0, 0, 0};

    friend bool operator==(const Coord&, const Coord&) = default;
};

struct CoordHash {
    size_t operator()(const Coord& c) const noexcept {
        // 64-bit mixing over all four lanes; collisions are resolved by the
        // hash table, never by truncating coordinates.
        auto mix = [](uint64_t h, uint64_t v) {
            h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            h *= 0xff51afd7ed558ccdull;
            h ^= h >> 33;
            return h;
        };
        uint64_t h = 0x42ull;
        h = mix(h, static_cast<uint32_t>(c.batch));
        h = mix(h, static_cast<uint32_t>(c.x[0]));
        h = mix(h, static_cast<uint32_t>(c.x[1]));
        h = mix(h, static_cast<uint32_t>(c.x[2]));
        return static_cast<size_t>(h);
    }
};

struct VoxelParams {
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0};  // world units per voxel
};

enum class DedupRule { first, mean };

// Dense N x C feature matrix in the run precision.
class Features {
public:
    Features() = default;

    static Features zeros(int n, int channels, Precision prec);
    static Features from_f64(int n, int channels, std::vector<double> values,
                             Precision prec);

    int n() const { return n_; }
    int channels() const { return channels_; }
    Precision precision() const { return prec_; }

    template <class T>
    const T* data() const;
    template <class T>
    T* data();

    std::vector<double> to_f64() const;

private:
    int n_ = 0;
    int channels_ = 0;
    Precision prec_ = Precision::f64;
    std::vector<float> f32_;
    std::vector<double> f64_;
};

template <>
inline const float* Features::data<float>() const { return f32_.data(); }
template <>
inline const double* Features::data<double>() const { return f64_.data(); }
template <>
inline float* Features::data<float>() { return f32_.data(); }
template <>
inline double* Features::data<double>() { return f64_.data(); }

// Sparse tensor: deduplicated integer coordinates plus one feature row per
// coordinate. Immutable after construction; safe to share across threads.
class SparseTensor {
public:
    SparseTensor() = default;
    SparseTensor(int dims, std::vector<Coord> coords, Features feats);

    // Coordinate-only tensor (e.g. derived output coordinate sets).
    static SparseTensor coords_only(int dims, std::vector<Coord> coords);

    int dims() const { return dims_; }
    int n() const { return static_cast<int>(coords_.size()); }
    int channels() const { return feats_.channels(); }
    Precision precision() const { return feats_.precision(); }
    const std::vector<Coord>& coords() const { return coords_; }
    const Features& feats() const { return feats_; }
    const std::array<int, 3>& stride_tag() const { return stride_tag_; }
    void set_stride_tag(const std::array<int, 3>& s) { stride_tag_ = s; }

    // Stable identity of the coordinate set, assigned at creation. Used as the
    // kernel-map cache key; value equality of coordinate lists is not used.
    uint64_t coord_set_id() const { return coord_set_id_; }

    bool has_features() const { return feats_.channels() > 0; }

private:
    int dims_ = 3;
    std::vector<Coord> coords_;
    Features feats_;
    std::array<int, 3> stride_tag_{1, 1, 1};
    uint64_t coord_set_id_ = 0;
};

// Row lookup for a tensor's coordinate set: lookup(c) -> row index or absent.
class CoordLookup {
public:
    explicit CoordLookup(const SparseTensor& t);
    std::optional<int32_t> lookup(const Coord& c) const {
        auto it = map_.find(c);
        if (it == map_.end()) return std::nullopt;
        return it->second;
    }
    size_t size() const { return map_.size(); }

private:
    std::unordered_map<Coord, int32_t, CoordHash> map_;
};

// Floor-quantize raw points into voxels and deduplicate. raw is M x dims
// row-major world coordinates; feats is M x channels (may be empty, in which
// case a single all-ones occupancy channel is produced). Duplicate raw points
// in one voxel resolve features per `rule`.
SparseTensor quantize(const std::vector<double>& raw, int dims,
                      const std::vector<double>& feats, int channels,
                      const VoxelParams& params, DedupRule rule,
                      Precision prec, const std::vector<int32_t>* batch = nullptr);

CoordLookup coord_index(const SparseTensor& t);

}  // namespace sparsekit
