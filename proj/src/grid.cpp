#include "stvar/grid.hpp"

#include <algorithm>
#include <string>

#include "stvar/errors.hpp"

namespace stvar {

GridSpec GridSpec::rectangular(int nx, int ny) {
    if (nx <= 0 || ny <= 0) {
        throw ConfigError("grid dimensions must be positive");
    }
    GridSpec g(nx, ny);
    g.active_.assign(static_cast<std::size_t>(nx) * ny, 1);
    g.active_count_ = g.active_.size();
    return g;
}

GridSpec GridSpec::masked(int nx, int ny, const std::vector<Cell>& active) {
    if (nx <= 0 || ny <= 0) {
        throw ConfigError("grid dimensions must be positive");
    }
    GridSpec g(nx, ny);
    g.has_mask_ = true;
    g.active_.assign(static_cast<std::size_t>(nx) * ny, 0);
    for (const Cell& c : active) {
        if (c.x < 0 || c.x >= nx || c.y < 0 || c.y >= ny) {
            throw ConfigError("mask cell (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                              ") lies outside the grid");
        }
        g.active_[static_cast<std::size_t>(c.y) * nx + c.x] = 1;
    }
    g.active_count_ = static_cast<std::size_t>(std::count(g.active_.begin(), g.active_.end(), 1));
    if (g.active_count_ == 0) {
        throw ConfigError("grid mask has no active cells");
    }
    return g;
}

bool GridSpec::is_active(Cell c) const {
    if (c.x < 0 || c.x >= nx_ || c.y < 0 || c.y >= ny_) return false;
    return active_[static_cast<std::size_t>(c.y) * nx_ + c.x] != 0;
}

std::vector<Cell> GridSpec::active_cells() const {
    std::vector<Cell> cells;
    cells.reserve(active_count_);
    for (int y = 0; y < ny_; ++y) {
        for (int x = 0; x < nx_; ++x) {
            if (active_[static_cast<std::size_t>(y) * nx_ + x]) cells.push_back({x, y});
        }
    }
    return cells;
}

Stencil Stencil::rook5() {
    // self, left, right, above, below
    return Stencil({{0, 0}, {-1, 0}, {1, 0}, {0, 1}, {0, -1}});
}

Stencil Stencil::queen9() {
    return Stencil({{0, 0}, {-1, 0}, {1, 0}, {0, 1}, {0, -1}, {-1, 1}, {1, 1}, {-1, -1}, {1, -1}});
}

Stencil Stencil::preset(std::string_view name) {
    if (name == "rook5") return rook5();
    if (name == "queen9") return queen9();
    if (name == "self1") return Stencil({{0, 0}});
    throw ConfigError("unknown stencil preset '" + std::string(name) + "'");
}

Stencil Stencil::from_offsets(std::vector<Offset> offsets) {
    if (offsets.empty() || offsets.front() != Offset{0, 0}) {
        throw ConfigError("stencil must start with the zero offset");
    }
    for (std::size_t a = 0; a < offsets.size(); ++a) {
        for (std::size_t b = a + 1; b < offsets.size(); ++b) {
            if (offsets[a] == offsets[b]) throw ConfigError("stencil offsets must be distinct");
        }
    }
    return Stencil(std::move(offsets));
}

std::optional<std::size_t> GridPartition::index_of(Cell c) const {
    if (c.x < 0 || c.x >= nx_ || c.y < 0 || c.y >= ny_) return std::nullopt;
    long idx = lookup_[static_cast<std::size_t>(c.y) * nx_ + c.x];
    if (idx < 0) return std::nullopt;
    return static_cast<std::size_t>(idx);
}

GridPartition build_partition(const GridSpec& grid, const Stencil& stencil) {
    const std::vector<Cell> active = grid.active_cells();
    if (active.empty()) throw ConfigError("grid has no active cells");

    auto has_all_neighbors = [&](Cell c) {
        return std::all_of(stencil.offsets().begin(), stencil.offsets().end(), [&](const Offset& u) {
            return grid.is_active({c.x + u.dx, c.y + u.dy});
        });
    };

    GridPartition p;
    p.nx_ = grid.nx();
    p.ny_ = grid.ny();
    p.stencil_size_ = stencil.size();
    std::vector<Cell> boundary;
    for (const Cell& c : active) {
        if (has_all_neighbors(c)) {
            p.cells_.push_back(c);
        } else {
            boundary.push_back(c);
        }
    }
    p.n_inner_ = p.cells_.size();
    if (p.n_inner_ == 0) {
        throw ConfigError("no inner grid points: the stencil does not fit inside the grid");
    }
    p.cells_.insert(p.cells_.end(), boundary.begin(), boundary.end());

    p.lookup_.assign(static_cast<std::size_t>(grid.nx()) * grid.ny(), -1);
    for (std::size_t i = 0; i < p.cells_.size(); ++i) {
        const Cell& c = p.cells_[i];
        p.lookup_[static_cast<std::size_t>(c.y) * grid.nx() + c.x] = static_cast<long>(i);
    }

    p.neighbors_.resize(p.n_inner_ * p.stencil_size_);
    for (std::size_t i = 0; i < p.n_inner_; ++i) {
        for (std::size_t k = 0; k < p.stencil_size_; ++k) {
            const Cell& c = p.cells_[i];
            p.neighbors_[i * p.stencil_size_ + k] = *p.index_of({c.x + stencil[k].dx, c.y + stencil[k].dy});
        }
    }
    return p;
}

PenaltyGraph build_penalty_graph(const GridPartition& partition, const Stencil& stencil) {
    PenaltyGraph g;
    g.n_blocks = stencil.size();
    g.n_inner = partition.n_inner();
    for (std::size_t i = 0; i < partition.n_inner(); ++i) {
        const Cell& c = partition.cell(i);
        for (Cell d : {Cell{c.x + 1, c.y}, Cell{c.x, c.y + 1}, Cell{c.x - 1, c.y}, Cell{c.x, c.y - 1}}) {
            auto j = partition.index_of(d);
            if (j && *j > i && partition.is_inner(*j)) g.inner_edges.emplace_back(i, *j);
        }
    }
    std::sort(g.inner_edges.begin(), g.inner_edges.end());
    g.edges.reserve(g.n_blocks * g.inner_edges.size());
    for (std::size_t k = 0; k < g.n_blocks; ++k) {
        for (const auto& [i, j] : g.inner_edges) g.edges.push_back({k, i, j});
    }
    return g;
}

IndicatorMap build_indicator_map(const GridPartition& partition, const Stencil& stencil) {
    std::vector<IndicatorEntry> entries(partition.m());
    for (std::size_t k = 0; k < stencil.size(); ++k) {
        for (std::size_t i = 0; i < partition.n_inner(); ++i) {
            entries[partition.alpha_index(k, i)] = {i, partition.neighbor(i, k)};
        }
    }
    for (std::size_t b = partition.n_inner(); b < partition.n(); ++b) {
        entries[partition.boundary_alpha_index(b)] = {b, b};
    }
    return IndicatorMap(partition.n(), std::move(entries));
}

Lattice Lattice::build(GridSpec grid, Stencil stencil) {
    GridPartition partition = build_partition(grid, stencil);
    PenaltyGraph graph = build_penalty_graph(partition, stencil);
    IndicatorMap map = build_indicator_map(partition, stencil);
    return Lattice{std::move(grid), std::move(stencil), std::move(partition), std::move(graph),
                   std::move(map)};
}

}  // namespace stvar
