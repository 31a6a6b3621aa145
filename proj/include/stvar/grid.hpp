#pragma once

// Spatial grid bookkeeping: active cells, the lagged-neighbourhood stencil,
// the inner/boundary partition, the fused-penalty edge graph and the
// indicator map that places the coefficient vector into vec(A).

#include <compare>
#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace stvar {

struct Cell {
    int x = 0;  // column, 0-based
    int y = 0;  // row, 0-based
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct Offset {
    int dx = 0;
    int dy = 0;
    friend bool operator==(const Offset&, const Offset&) = default;
};

class GridSpec {
public:
    static GridSpec rectangular(int nx, int ny);
    // Only `active` cells belong to the domain; duplicates are ignored.
    static GridSpec masked(int nx, int ny, const std::vector<Cell>& active);

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    bool has_mask() const { return has_mask_; }
    bool is_active(Cell c) const;
    // Active cells in row-major order (y outer, x inner).
    std::vector<Cell> active_cells() const;
    std::size_t active_count() const { return active_count_; }

private:
    GridSpec(int nx, int ny) : nx_(nx), ny_(ny) {}

    int nx_;
    int ny_;
    bool has_mask_ = false;
    std::vector<char> active_;
    std::size_t active_count_ = 0;
};

// Offsets u_1..u_K; u_1 is always the zero offset.
class Stencil {
public:
    static Stencil rook5();
    static Stencil queen9();
    // Accepts "rook5", "queen9" (and "self1", the self-only stencil).
    static Stencil preset(std::string_view name);
    static Stencil from_offsets(std::vector<Offset> offsets);

    std::size_t size() const { return offsets_.size(); }
    const std::vector<Offset>& offsets() const { return offsets_; }
    const Offset& operator[](std::size_t k) const { return offsets_[k]; }

private:
    explicit Stencil(std::vector<Offset> offsets) : offsets_(std::move(offsets)) {}
    std::vector<Offset> offsets_;
};

// Indices 0..n_inner-1 are inner points, n_inner..n-1 boundary points; each
// block is row-major internally.
class GridPartition {
public:
    std::size_t n() const { return cells_.size(); }
    std::size_t n_inner() const { return n_inner_; }
    std::size_t n_boundary() const { return cells_.size() - n_inner_; }
    std::size_t stencil_size() const { return stencil_size_; }
    // Length of the coefficient vector, K * n_I + n_B.
    std::size_t m() const { return stencil_size_ * n_inner_ + n_boundary(); }

    const Cell& cell(std::size_t index) const { return cells_[index]; }
    const std::vector<Cell>& cells() const { return cells_; }
    bool is_inner(std::size_t index) const { return index < n_inner_; }
    // Index of s_i + u_k for inner point i.
    std::size_t neighbor(std::size_t inner, std::size_t k) const {
        return neighbors_[inner * stencil_size_ + k];
    }
    std::optional<std::size_t> index_of(Cell c) const;

    // Position of alpha_k(s_i) (inner i) and of the boundary coefficient of
    // point `index` inside the stacked coefficient vector.
    std::size_t alpha_index(std::size_t k, std::size_t inner) const { return k * n_inner_ + inner; }
    std::size_t boundary_alpha_index(std::size_t index) const {
        return stencil_size_ * n_inner_ + (index - n_inner_);
    }

private:
    friend GridPartition build_partition(const GridSpec&, const Stencil&);

    int nx_ = 0;
    int ny_ = 0;
    std::vector<Cell> cells_;
    std::size_t n_inner_ = 0;
    std::size_t stencil_size_ = 0;
    std::vector<std::size_t> neighbors_;
    std::vector<long> lookup_;  // cell -> index, -1 when inactive
};

struct PenaltyEdge {
    std::size_t block = 0;  // stencil position k
    std::size_t i = 0;      // inner index, i < j
    std::size_t j = 0;
};

struct PenaltyGraph {
    std::size_t n_blocks = 0;
    std::size_t n_inner = 0;
    // 4-adjacency edges of the inner grid, canonical i < j, sorted.
    std::vector<std::pair<std::size_t, std::size_t>> inner_edges;
    // inner_edges repeated once per block, block-major.
    std::vector<PenaltyEdge> edges;

    std::size_t edges_per_block() const { return inner_edges.size(); }
};

// Column a of P has its single 1 at vec(A) position row + col * n.
struct IndicatorEntry {
    std::size_t row = 0;
    std::size_t col = 0;
};

class IndicatorMap {
public:
    IndicatorMap() = default;
    IndicatorMap(std::size_t n, std::vector<IndicatorEntry> entries)
        : n_(n), entries_(std::move(entries)) {}

    std::size_t n() const { return n_; }
    std::size_t m() const { return entries_.size(); }
    const IndicatorEntry& operator[](std::size_t a) const { return entries_[a]; }
    const std::vector<IndicatorEntry>& entries() const { return entries_; }
    std::size_t vec_index(std::size_t a) const { return entries_[a].row + entries_[a].col * n_; }

private:
    std::size_t n_ = 0;
    std::vector<IndicatorEntry> entries_;
};

// Throws ConfigError when no cell has all K neighbours active.
GridPartition build_partition(const GridSpec& grid, const Stencil& stencil);
PenaltyGraph build_penalty_graph(const GridPartition& partition, const Stencil& stencil);
IndicatorMap build_indicator_map(const GridPartition& partition, const Stencil& stencil);

// Everything derived from a grid and stencil, built once and shared
// read-only.
struct Lattice {
    GridSpec grid;
    Stencil stencil;
    GridPartition partition;
    PenaltyGraph graph;
    IndicatorMap map;

    static Lattice build(GridSpec grid, Stencil stencil);

    std::size_t n() const { return partition.n(); }
    std::size_t m() const { return partition.m(); }
    std::size_t n_inner() const { return partition.n_inner(); }
    std::size_t n_boundary() const { return partition.n_boundary(); }
    std::size_t K() const { return stencil.size(); }
};

}  // namespace stvar
