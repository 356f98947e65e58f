#include "sparsekit/kmap.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace sparsekit {

namespace {

int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

void check_stride(const std::array<int, 3>& stride, int dims) {
    for (int d = 0; d < dims; ++d)
        if (stride[d] < 1) throw ValidationError("stride components must be >= 1");
}

bool unit_stride(const std::array<int, 3>& s, int dims) {
    for (int d = 0; d < dims; ++d)
        if (s[d] != 1) return false;
    return true;
}

// Per-row bitmask over a split's offset range. words[0] is the most
// significant word, so lexicographic word comparison orders masks as numbers.
void compute_masks(KernelMapOS::Split& sp) {
    const int w = sp.width();
    sp.mask_words = (w + 63) / 64;
    sp.masks.assign(static_cast<size_t>(sp.n_rows) * sp.mask_words, 0);
    for (int r = 0; r < sp.n_rows; ++r) {
        for (int j = 0; j < w; ++j) {
            if (sp.entry(r, j) == kSentinel) continue;
            int wi = j / 64;
            int bits_in_word = std::min(64, w - wi * 64);
            int bit = bits_in_word - 1 - (j - wi * 64);
            sp.masks[static_cast<size_t>(r) * sp.mask_words + wi] |= 1ull << bit;
        }
    }
}

bool mask_greater(const uint64_t* a, const uint64_t* b, int words) {
    for (int i = 0; i < words; ++i) {
        if (a[i] != b[i]) return a[i] > b[i];
    }
    return false;
}

}  // namespace

OffsetSet::OffsetSet(int dims, int kernel_size) : dims_(dims), k_(kernel_size) {
    if (dims != 2 && dims != 3) throw ValidationError("offset dims must be 2 or 3");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw ValidationError("kernel size must be odd (even kernels unsupported)");
    const int h = kernel_size / 2;
    if (dims == 2) {
        for (int32_t a = -h; a <= h; ++a)
            for (int32_t b = -h; b <= h; ++b) offsets_.push_back({a, b, 0});
    } else {
        for (int32_t a = -h; a <= h; ++a)
            for (int32_t b = -h; b <= h; ++b)
                for (int32_t c = -h; c <= h; ++c) offsets_.push_back({a, b, c});
    }
}

SparseTensor build_out_coords(const SparseTensor& in, const std::array<int, 3>& stride) {
    check_stride(stride, in.dims());
    if (unit_stride(stride, in.dims())) {
        SparseTensor out = SparseTensor::coords_only(in.dims(), in.coords());
        out.set_stride_tag(in.stride_tag());
        return out;
    }
    std::unordered_set<Coord, CoordHash> seen;
    seen.reserve(in.coords().size() * 2);
    std::vector<Coord> out_coords;
    for (const Coord& c : in.coords()) {
        Coord q = c;
        for (int d = 0; d < in.dims(); ++d)
            q.x[d] = static_cast<int32_t>(floor_div(c.x[d], stride[d]));
        if (seen.insert(q).second) out_coords.push_back(q);
    }
    SparseTensor out = SparseTensor::coords_only(in.dims(), std::move(out_coords));
    std::array<int, 3> tag = in.stride_tag();
    for (int d = 0; d < in.dims(); ++d) tag[d] *= stride[d];
    out.set_stride_tag(tag);
    return out;
}

KernelMapWS build_kmap_ws(const SparseTensor& in, const SparseTensor& out,
                          const std::array<int, 3>& stride, const OffsetSet& offsets,
                          bool transposed) {
    check_stride(stride, in.dims());
    if (offsets.dims() != in.dims()) throw ValidationError("offset dims mismatch");
    CoordLookup lookup(in);

    KernelMapWS map;
    map.dims = in.dims();
    map.kernel_size = offsets.kernel_size();
    map.num_offsets = offsets.size();
    map.n_in = in.n();
    map.n_out = out.n();
    map.stride = stride;
    map.transposed = transposed;
    map.pairs.resize(offsets.size());

    for (int k = 0; k < offsets.size(); ++k) {
        const auto& d = offsets.offset(k);
        for (int32_t row = 0; row < out.n(); ++row) {
            const Coord& q = out.coords()[row];
            Coord c = q;
            bool ok = true;
            if (!transposed) {
                // forward: p_in = s * q_out + delta
                for (int dd = 0; dd < in.dims(); ++dd)
                    c.x[dd] = q.x[dd] * stride[dd] + d[dd];
            } else {
                // transposed: p_out = s * q_in - delta, i.e. q_in = (p_out + delta) / s
                for (int dd = 0; dd < in.dims(); ++dd) {
                    int32_t num = q.x[dd] + d[dd];
                    if (num % stride[dd] != 0) { ok = false; break; }
                    c.x[dd] = num / stride[dd];
                }
            }
            if (!ok) continue;
            if (auto j = lookup.lookup(c)) map.pairs[k].emplace_back(*j, row);
        }
    }
    return map;
}

KernelMapOS build_kmap_os(const SparseTensor& in, const SparseTensor& out,
                          const std::array<int, 3>& stride, const OffsetSet& offsets,
                          bool transposed) {
    KernelMapWS ws = build_kmap_ws(in, out, stride, offsets, transposed);
    return ws_to_os(ws);
}

int64_t KernelMapOS::nonsentinel_entries() const {
    int64_t s = 0;
    for (const auto& sp : splits)
        for (int32_t e : sp.entries)
            if (e != kSentinel) ++s;
    return s;
}

KernelMapOS ws_to_os(const KernelMapWS& ws) {
    if (ws.graph)
        throw ContractError("graph maps have variable fan-in; no OS representation");
    KernelMapOS os;
    os.dims = ws.dims;
    os.kernel_size = ws.kernel_size;
    os.num_offsets = ws.num_offsets;
    os.n_in = ws.n_in;
    os.n_out = ws.n_out;
    os.stride = ws.stride;
    os.transposed = ws.transposed;

    KernelMapOS::Split sp;
    sp.offset_begin = 0;
    sp.offset_end = ws.num_offsets;
    sp.n_rows = ws.n_out;
    sp.entries.assign(static_cast<size_t>(ws.n_out) * ws.num_offsets, kSentinel);
    sp.out_row.resize(ws.n_out);
    std::iota(sp.out_row.begin(), sp.out_row.end(), 0);
    for (int k = 0; k < ws.num_offsets; ++k) {
        for (const auto& [j, out] : ws.pairs[k]) {
            int32_t& cell = sp.entries[static_cast<size_t>(out) * ws.num_offsets + k];
            if (cell != kSentinel)
                throw ContractError("duplicate neighbor for one (output, offset)");
            cell = j;
        }
    }
    compute_masks(sp);
    os.splits.push_back(std::move(sp));
    return os;
}

KernelMapWS os_to_ws(const KernelMapOS& os) {
    KernelMapWS ws;
    ws.dims = os.dims;
    ws.kernel_size = os.kernel_size;
    ws.num_offsets = os.num_offsets;
    ws.n_in = os.n_in;
    ws.n_out = os.n_out;
    ws.stride = os.stride;
    ws.transposed = os.transposed;
    ws.pairs.resize(os.num_offsets);
    for (const auto& sp : os.splits) {
        for (int r = 0; r < sp.n_rows; ++r) {
            if (sp.out_row[r] == kSentinel) continue;
            for (int j = 0; j < sp.width(); ++j) {
                int32_t e = sp.entry(r, j);
                if (e != kSentinel)
                    ws.pairs[sp.offset_begin + j].emplace_back(e, sp.out_row[r]);
            }
        }
    }
    for (auto& pl : ws.pairs)
        std::sort(pl.begin(), pl.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
    return ws;
}

KernelMapOS split_and_sort(const KernelMapOS& map, int num_splits) {
    if (map.splits.size() != 1 || map.sorted || map.padded)
        throw ContractError("split_and_sort expects an unsplit, unsorted, unpadded map");
    if (num_splits > map.num_offsets)
        throw ValidationError("split count exceeds number of kernel offsets");
    if (num_splits < 0) throw ValidationError("split count must be >= 0");

    if (num_splits == 0) {
        KernelMapOS out = map;  // unchanged, explicitly marked unsorted
        out.requested_splits = 0;
        out.sorted = false;
        return out;
    }

    const auto& base = map.splits[0];
    KernelMapOS out = map;
    out.splits.clear();
    out.requested_splits = num_splits;
    out.sorted = true;

    const int kd = map.num_offsets;
    const int chunk = kd / num_splits;
    const int rem = kd % num_splits;
    int begin = 0;
    for (int s = 0; s < num_splits; ++s) {
        const int width = chunk + (s < rem ? 1 : 0);
        KernelMapOS::Split sp;
        sp.offset_begin = begin;
        sp.offset_end = begin + width;
        sp.n_rows = base.n_rows;
        sp.entries.resize(static_cast<size_t>(sp.n_rows) * width);

        // slice columns, compute chunk-local masks, then stable argsort
        for (int r = 0; r < sp.n_rows; ++r)
            for (int j = 0; j < width; ++j)
                sp.entries[static_cast<size_t>(r) * width + j] = base.entry(r, begin + j);
        sp.out_row = base.out_row;
        compute_masks(sp);

        std::vector<int32_t> order(sp.n_rows);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
            return mask_greater(&sp.masks[static_cast<size_t>(a) * sp.mask_words],
                                &sp.masks[static_cast<size_t>(b) * sp.mask_words],
                                sp.mask_words);
        });

        KernelMapOS::Split perm = sp;
        for (int r = 0; r < sp.n_rows; ++r) {
            int32_t src = order[r];
            std::copy_n(sp.entries.begin() + static_cast<size_t>(src) * width, width,
                        perm.entries.begin() + static_cast<size_t>(r) * width);
            std::copy_n(sp.masks.begin() + static_cast<size_t>(src) * sp.mask_words,
                        sp.mask_words,
                        perm.masks.begin() + static_cast<size_t>(r) * sp.mask_words);
            perm.out_row[r] = sp.out_row[src];
        }
        out.splits.push_back(std::move(perm));
        begin += width;
    }
    return out;
}

KernelMapOS pad_map(const KernelMapOS& map, int multiple) {
    if (multiple < 1) throw ValidationError("pad multiple must be >= 1");
    KernelMapOS out = map;
    out.padded = true;
    out.pad_multiple = multiple;
    for (auto& sp : out.splits) {
        int target = ((sp.n_rows + multiple - 1) / multiple) * multiple;
        if (target == sp.n_rows) continue;
        sp.entries.resize(static_cast<size_t>(target) * sp.width(), kSentinel);
        sp.out_row.resize(target, kSentinel);
        sp.masks.resize(static_cast<size_t>(target) * sp.mask_words, 0);
        sp.n_rows = target;
    }
    return out;
}

KernelMapWS transpose_map(const KernelMapWS& map) {
    if (map.graph) throw ContractError("graph maps cannot be transposed");
    KernelMapWS out;
    out.dims = map.dims;
    out.kernel_size = map.kernel_size;
    out.num_offsets = map.num_offsets;
    out.n_in = map.n_out;
    out.n_out = map.n_in;
    out.stride = map.stride;
    out.transposed = !map.transposed;
    out.pairs.resize(map.num_offsets);
    for (int k = 0; k < map.num_offsets; ++k) {
        int mk = map.num_offsets - 1 - k;  // delta -> -delta
        for (const auto& [j, o] : map.pairs[k]) out.pairs[mk].emplace_back(o, j);
    }
    for (auto& pl : out.pairs)
        std::sort(pl.begin(), pl.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
    return out;
}

KernelMapOS transpose_map(const KernelMapOS& map) {
    if (map.splits.size() != 1 || map.sorted || map.padded)
        throw ContractError("transpose_map expects an unsplit OS map");
    return ws_to_os(transpose_map(os_to_ws(map)));
}

KernelMapWS kmap_from_edges(const std::vector<std::array<int32_t, 3>>& edges,
                            int num_relations, int n_in, int n_out) {
    KernelMapWS map;
    map.graph = true;
    map.kernel_size = 0;
    map.num_offsets = num_relations;
    map.n_in = n_in;
    map.n_out = n_out;
    map.pairs.resize(num_relations);
    for (const auto& e : edges) {
        int32_t src = e[0], dst = e[1], rel = e[2];
        if (rel < 0 || rel >= num_relations) throw ValidationError("relation id out of range");
        if (src < 0 || src >= n_in || dst < 0 || dst >= n_out)
            throw ValidationError("edge node id out of range");
        map.pairs[rel].emplace_back(src, dst);
    }
    for (auto& pl : map.pairs) std::stable_sort(pl.begin(), pl.end(),
        [](const auto& a, const auto& b) { return a.second < b.second; });
    return map;
}

std::string dump_map_csv(const KernelMapOS& map) {
    std::ostringstream os;
    os << "row,out_row";
    for (int k = 0; k < map.num_offsets; ++k) os << ",k" << k;
    os << "\n";
    int row = 0;
    for (const auto& sp : map.splits) {
        for (int r = 0; r < sp.n_rows; ++r, ++row) {
            os << row << "," << sp.out_row[r];
            for (int k = 0; k < map.num_offsets; ++k) {
                int32_t v = kSentinel;
                if (k >= sp.offset_begin && k < sp.offset_end)
                    v = sp.entry(r, k - sp.offset_begin);
                os << "," << v;
            }
            os << "\n";
        }
    }
    return os.str();
}

struct MapCache::Impl {
    struct WsEntry {
        std::once_flag once;
        std::shared_ptr<const KernelMapWS> map;
    };
    struct OsEntry {
        std::once_flag once;
        std::shared_ptr<const KernelMapOS> map;
    };
    std::mutex mu;
    std::unordered_map<MapKey, std::shared_ptr<WsEntry>, MapKeyHash> ws;
    std::unordered_map<MapKey, std::shared_ptr<OsEntry>, MapKeyHash> os;
    std::atomic<size_t> builds{0};
};

MapCache::MapCache() : impl_(std::make_unique<Impl>()) {}
MapCache::~MapCache() = default;

std::shared_ptr<const KernelMapWS> MapCache::get_ws(
    const MapKey& key, const std::function<KernelMapWS()>& builder) {
    std::shared_ptr<Impl::WsEntry> e;
    {
        std::lock_guard<std::mutex> lock(impl_->mu);
        auto& slot = impl_->ws[key];
        if (!slot) slot = std::make_shared<Impl::WsEntry>();
        e = slot;
    }
    std::call_once(e->once, [&] {
        e->map = std::make_shared<const KernelMapWS>(builder());
        impl_->builds.fetch_add(1);
    });
    return e->map;
}

std::shared_ptr<const KernelMapOS> MapCache::get_os(
    const MapKey& key, const std::function<KernelMapOS()>& builder) {
    std::shared_ptr<Impl::OsEntry> e;
    {
        std::lock_guard<std::mutex> lock(impl_->mu);
        auto& slot = impl_->os[key];
        if (!slot) slot = std::make_shared<Impl::OsEntry>();
        e = slot;
    }
    std::call_once(e->once, [&] {
        e->map = std::make_shared<const KernelMapOS>(builder());
        impl_->builds.fetch_add(1);
    });
    return e->map;
}

void MapCache::clear() {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->ws.clear();
    impl_->os.clear();
}

size_t MapCache::build_count() const { return impl_->builds.load(); }

}  // namespace sparsekit
