#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sparsekit/tensor.hpp"

namespace sparsekit {

// Ordered kernel offset neighborhood {-K/2..K/2}^D, lexicographic. Odd K only.
class OffsetSet {
public:
    OffsetSet(int dims, int kernel_size);

    int dims() const { return dims_; }
    int kernel_size() const { return k_; }
    int size() const { return static_cast<int>(offsets_.size()); }
    const std::array<int32_t, 3>& offset(int i) const { return offsets_[i]; }
    // Index of -offset(i); the neighborhood is symmetric around 0.
    int mirror(int i) const { return size() - 1 - i; }
    int center() const { return size() / 2; }

    friend bool operator==(const OffsetSet& a, const OffsetSet& b) {
        return a.dims_ == b.dims_ && a.k_ == b.k_;
    }

private:
    int dims_;
    int k_;
    std::vector<std::array<int32_t, 3>> offsets_;
};

// Weight-stationary map: one (in_row, out_row) pair list per kernel offset,
// pairs ordered by ascending out_row. For graph maps, "offsets" are relations
// and pair lists may contain repeated out_rows.
struct KernelMapWS {
    int dims = 3;
    int kernel_size = 3;
    int num_offsets = 0;
    int n_in = 0;
    int n_out = 0;
    std::array<int, 3> stride{1, 1, 1};
    bool transposed = false;
    bool graph = false;
    std::vector<std::vector<std::pair<int32_t, int32_t>>> pairs;  // [offset] -> (in,out)

    int64_t total_pairs() const {
        int64_t s = 0;
        for (const auto& p : pairs) s += static_cast<int64_t>(p.size());
        return s;
    }
};

// Output-stationary map. Execution happens per split: each split owns a
// contiguous range of kernel offsets, its own row order, per-row bitmasks over
// its offset range and an out_row vector (kSentinel for pad rows).
//
// Bitmask convention: within a split of width w, offset column j (0-based,
// split-local) occupies bit (w-1-j), so earlier offsets are more significant.
// Widths beyond 64 use multiple words compared big-endian by word.
struct KernelMapOS {
    struct Split {
        int offset_begin = 0;  // global offset index range [begin, end)
        int offset_end = 0;
        int n_rows = 0;        // includes pad rows
        int mask_words = 1;
        std::vector<int32_t> entries;   // n_rows x (end-begin), kSentinel = none
        std::vector<int32_t> out_row;   // n_rows, kSentinel = pad row
        std::vector<uint64_t> masks;    // n_rows x mask_words, big-endian words

        int width() const { return offset_end - offset_begin; }
        int32_t entry(int r, int j) const { return entries[static_cast<size_t>(r) * width() + j]; }
    };

    int dims = 3;
    int kernel_size = 3;
    int num_offsets = 0;
    int n_in = 0;
    int n_out = 0;
    std::array<int, 3> stride{1, 1, 1};
    bool transposed = false;
    int requested_splits = 0;  // 0 = unsorted single split
    bool sorted = false;
    bool padded = false;
    int pad_multiple = 1;
    std::vector<Split> splits;

    int64_t nonsentinel_entries() const;
};

// Kernel-map sharing key. Transposed layers canonicalize onto the key of the
// matching forward map (coordinate sets in forward orientation) so encoder and
// decoder layers land in one group; `transposed` marks maps that only exist in
// transposed orientation.
struct MapKey {
    uint64_t in_set_id = 0;
    uint64_t out_set_id = 0;
    int kernel_size = 0;
    std::array<int, 3> stride{1, 1, 1};
    bool transposed = false;

    friend bool operator==(const MapKey&, const MapKey&) = default;
};

struct MapKeyHash {
    size_t operator()(const MapKey& k) const noexcept {
        uint64_t h = k.in_set_id * 0x9e3779b97f4a7c15ull;
        h ^= k.out_set_id + 0x517cc1b727220a95ull + (h << 6);
        h ^= (static_cast<uint64_t>(k.kernel_size) << 32) ^
             (static_cast<uint64_t>(k.stride[0]) << 16) ^
             (static_cast<uint64_t>(k.stride[1]) << 8) ^
             static_cast<uint64_t>(k.stride[2]) ^ (k.transposed ? 1ull << 63 : 0);
        h *= 0xff51afd7ed558ccdull;
        return static_cast<size_t>(h ^ (h >> 29));
    }
};

// Output coordinates for a strided convolution: stride 1 keeps the input
// coordinate set (submanifold); stride > 1 takes unique(floor_div(p, s)).
SparseTensor build_out_coords(const SparseTensor& in, const std::array<int, 3>& stride);

KernelMapWS build_kmap_ws(const SparseTensor& in, const SparseTensor& out,
                          const std::array<int, 3>& stride, const OffsetSet& offsets,
                          bool transposed = false);
KernelMapOS build_kmap_os(const SparseTensor& in, const SparseTensor& out,
                          const std::array<int, 3>& stride, const OffsetSet& offsets,
                          bool transposed = false);

KernelMapOS ws_to_os(const KernelMapWS& ws);
KernelMapWS os_to_ws(const KernelMapOS& os);

// Partition offsets into `num_splits` contiguous chunks (sizes differ by at
// most one), argsort each chunk's rows by descending bitmask (stable), and
// reorder. num_splits = 0 returns the map unchanged (unsorted variant).
KernelMapOS split_and_sort(const KernelMapOS& map, int num_splits);

// Round each split's row count up to a multiple of `multiple` with
// all-sentinel pad rows.
KernelMapOS pad_map(const KernelMapOS& map, int multiple);

// Swap (in, out) roles and mirror offsets. Involution; equals the directly
// built map of the transposed convolution over swapped coordinate sets.
KernelMapWS transpose_map(const KernelMapWS& map);
KernelMapOS transpose_map(const KernelMapOS& map);

// Relational edge list adapter: relation ids play the role of kernel offsets.
KernelMapWS kmap_from_edges(const std::vector<std::array<int32_t, 3>>& edges,  // (src,dst,rel)
                            int num_relations, int n_in, int n_out);

// Debug CSV dump: row,out_row,k0..k{K^D-1} with -1 sentinels.
std::string dump_map_csv(const KernelMapOS& map);

// Shared map cache. Same key -> same object; the builder runs at most once per
// key; builders for distinct keys may run concurrently.
class MapCache {
public:
    MapCache();
    ~MapCache();
    MapCache(const MapCache&) = delete;
    MapCache& operator=(const MapCache&) = delete;

    std::shared_ptr<const KernelMapWS> get_ws(const MapKey& key,
                                              const std::function<KernelMapWS()>& builder);
    std::shared_ptr<const KernelMapOS> get_os(const MapKey& key,
                                              const std::function<KernelMapOS()>& builder);
    void clear();
    size_t build_count() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace sparsekit
