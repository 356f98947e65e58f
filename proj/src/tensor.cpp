#include "sparsekit/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sparsekit {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SPARSEKIT_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {
std::atomic<uint64_t> g_coord_set_counter{1};
uint64_t next_coord_set_id() { return g_coord_set_counter.fetch_add(1); }
}  // namespace

Features Features::zeros(int n, int channels, Precision prec) {
    Features f;
    f.n_ = n;
    f.channels_ = channels;
    f.prec_ = prec;
    if (prec == Precision::f64)
        f.f64_.assign(static_cast<size_t>(n) * channels, 0.0);
    else
        f.f32_.assign(static_cast<size_t>(n) * channels, 0.0f);
    return f;
}

Features Features::from_f64(int n, int channels, std::vector<double> values,
                            Precision prec) {
    if (values.size() != static_cast<size_t>(n) * channels)
        throw ValidationError("feature buffer size mismatch");
    Features f;
    f.n_ = n;
    f.channels_ = channels;
    f.prec_ = prec;
    if (prec == Precision::f64)
        f.f64_ = std::move(values);
    else
        f.f32_.assign(values.begin(), values.end());
    return f;
}

std::vector<double> Features::to_f64() const {
    if (prec_ == Precision::f64) return f64_;
    return std::vector<double>(f32_.begin(), f32_.end());
}

SparseTensor::SparseTensor(int dims, std::vector<Coord> coords, Features feats)
    : dims_(dims), coords_(std::move(coords)), feats_(std::move(feats)),
      coord_set_id_(next_coord_set_id()) {
    if (dims != 2 && dims != 3) throw ValidationError("dims must be 2 or 3");
    if (feats_.channels() < 1) throw ValidationError("channels must be >= 1");
    if (feats_.n() != static_cast<int>(coords_.size()))
        throw ValidationError("feature row count does not match coord count");
}

SparseTensor SparseTensor::coords_only(int dims, std::vector<Coord> coords) {
    SparseTensor t;
    t.dims_ = dims;
    t.coords_ = std::move(coords);
    t.coord_set_id_ = next_coord_set_id();
    return t;
}

CoordLookup::CoordLookup(const SparseTensor& t) {
    map_.reserve(t.coords().size() * 2);
    for (int32_t i = 0; i < t.n(); ++i) map_.emplace(t.coords()[i], i);
}

CoordLookup coord_index(const SparseTensor& t) { return CoordLookup(t); }

SparseTensor quantize(const std::vector<double>& raw, int dims,
                      const std::vector<double>& feats, int channels,
                      const VoxelParams& params, DedupRule rule,
                      Precision prec, const std::vector<int32_t>* batch) {
    if (dims != 2 && dims != 3) throw ValidationError("dims must be 2 or 3");
    if (raw.size() % dims != 0)
        throw ValidationError("raw point array size is not a multiple of dims");
    if (raw.empty())
        return SparseTensor(dims, {}, Features::zeros(0, channels > 0 ? channels : 1, prec));
    const size_t m = raw.size() / dims;
    if (channels > 0 && feats.size() != m * static_cast<size_t>(channels))
        throw ValidationError("feature array size mismatch");
    for (int d = 0; d < dims; ++d)
        if (!(params.voxel_size[d] > 0.0))
            throw ValidationError("voxel size components must be positive");

    std::unordered_map<Coord, int32_t, CoordHash> seen;
    seen.reserve(m * 2);
    std::vector<Coord> coords;
    std::vector<double> out_feats;
    std::vector<int32_t> dup_count;

    for (size_t i = 0; i < m; ++i) {
        Coord c;
        if (batch) c.batch = (*batch)[i];
        for (int d = 0; d < dims; ++d) {
            double v = raw[i * dims + d];
            if (!std::isfinite(v))
                throw ValidationError("non-finite input coordinate at point " +
                                      std::to_string(i));
            c.x[d] = static_cast<int32_t>(std::floor(v / params.voxel_size[d]));
        }
        auto [it, inserted] = seen.emplace(c, static_cast<int32_t>(coords.size()));
        if (inserted) {
            coords.push_back(c);
            dup_count.push_back(1);
            if (channels > 0)
                for (int ch = 0; ch < channels; ++ch)
                    out_feats.push_back(feats[i * channels + ch]);
        } else if (channels > 0 && rule == DedupRule::mean) {
            int32_t row = it->second;
            dup_count[row] += 1;
            for (int ch = 0; ch < channels; ++ch) {
                double& acc = out_feats[row * channels + ch];
                acc += (feats[i * channels + ch] - acc) / dup_count[row];
            }
        }
        // DedupRule::first: keep the first point's features, drop the rest
    }

    const int out_channels = channels > 0 ? channels : 1;
    if (channels == 0) out_feats.assign(coords.size(), 1.0);  // occupancy
    const int n = static_cast<int>(coords.size());
    return SparseTensor(dims, std::move(coords),
                        Features::from_f64(n, out_channels, std::move(out_feats), prec));
}

}  // namespace sparsekit
