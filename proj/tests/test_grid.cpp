#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "stvar/errors.hpp"
#include "stvar/grid.hpp"
#include "stvar/model.hpp"
#include "test_support.hpp"

using namespace stvar;

TEST_CASE("7x7 rook grid counts") {
    auto p = build_partition(GridSpec::rectangular(7, 7), Stencil::rook5());
    CHECK(p.n() == 49);
    CHECK(p.n_inner() == 25);
    CHECK(p.n_boundary() == 24);
    CHECK(p.m() == 149);
}

TEST_CASE("irregular 195-cell domain matches the wind-grid counts") {
    auto grid = testing::cut_corner_domain();
    CHECK(grid.active_count() == 195);
    auto p = build_partition(grid, Stencil::rook5());
    CHECK(p.n_inner() == 149);
    CHECK(p.n_boundary() == 46);
    CHECK(p.m() == 791);
}

TEST_CASE("3x3 grid has only the centre inner") {
    auto p = build_partition(GridSpec::rectangular(3, 3), Stencil::rook5());
    CHECK(p.n_inner() == 1);
    CHECK(p.n_boundary() == 8);
    CHECK(p.m() == 13);
    CHECK(p.cell(0) == Cell{1, 1});
    auto graph = build_penalty_graph(p, Stencil::rook5());
    CHECK(graph.edges.empty());
}

TEST_CASE("stencil too large for grid") {
    CHECK_THROWS_AS(build_partition(GridSpec::rectangular(2, 5), Stencil::rook5()), ConfigError);
}

TEST_CASE("stencil validation") {
    CHECK_THROWS_AS(Stencil::from_offsets({{1, 0}, {0, 0}}), ConfigError);
    CHECK_THROWS_AS(Stencil::from_offsets({{0, 0}, {1, 0}, {1, 0}}), ConfigError);
    CHECK_THROWS_AS(Stencil::preset("hex7"), ConfigError);
    auto east_only = Stencil::from_offsets({{0, 0}, {-1, 0}, {-2, 0}});
    auto p = build_partition(GridSpec::rectangular(5, 2), east_only);
    CHECK(p.n_inner() == 6);  // columns 2..4 in both rows
}

TEST_CASE("inner points are exactly the interior of a rectangle") {
    for (auto [nx, ny] : {std::pair{7, 7}, std::pair{4, 9}, std::pair{10, 3}}) {
        auto p = build_partition(GridSpec::rectangular(nx, ny), Stencil::rook5());
        for (std::size_t i = 0; i < p.n(); ++i) {
            const Cell c = p.cell(i);
            const bool interior = c.x > 0 && c.x < nx - 1 && c.y > 0 && c.y < ny - 1;
            CHECK(p.is_inner(i) == interior);
        }
    }
}

TEST_CASE("ordering is inner block then boundary block, each row-major") {
    auto p = build_partition(GridSpec::rectangular(6, 5), Stencil::rook5());
    auto row_major = [](Cell a, Cell b) { return std::pair{a.y, a.x} < std::pair{b.y, b.x}; };
    CHECK(std::is_sorted(p.cells().begin(), p.cells().begin() + static_cast<long>(p.n_inner()), row_major));
    CHECK(std::is_sorted(p.cells().begin() + static_cast<long>(p.n_inner()), p.cells().end(), row_major));
    for (std::size_t i = 0; i < p.n(); ++i) CHECK(*p.index_of(p.cell(i)) == i);
}

TEST_CASE("partition is deterministic") {
    auto grid = testing::cut_corner_domain();
    auto a = build_partition(grid, Stencil::queen9());
    auto b = build_partition(grid, Stencil::queen9());
    CHECK(a.cells() == b.cells());
    for (std::size_t i = 0; i < a.n_inner(); ++i) {
        for (std::size_t k = 0; k < 9; ++k) CHECK(a.neighbor(i, k) == b.neighbor(i, k));
    }
}

TEST_CASE("penalty graph edge counts") {
    SUBCASE("7x7 rook: 5x5 inner lattice") {
        auto lat = Lattice::build(GridSpec::rectangular(7, 7), Stencil::rook5());
        CHECK(lat.graph.edges_per_block() == 40);
        CHECK(lat.graph.edges.size() == 200);
    }
    SUBCASE("queen stencil keeps a 5x5 inner region on 7x7") {
        auto lat = Lattice::build(GridSpec::rectangular(7, 7), Stencil::queen9());
        CHECK(lat.n_inner() == 25);
        CHECK(lat.m() == 9 * 25 + 24);
        CHECK(lat.graph.edges.size() == 9 * 40);
    }
    SUBCASE("queen stencil with a 3x3 inner region") {
        auto lat = Lattice::build(GridSpec::rectangular(5, 5), Stencil::queen9());
        CHECK(lat.n_inner() == 9);
        CHECK(lat.graph.edges_per_block() == 12);
        CHECK(lat.graph.edges.size() == 108);
    }
    SUBCASE("p x q inner rectangle has p(q-1) + q(p-1) edges") {
        for (int nx = 3; nx < 9; ++nx) {
            for (int ny = 3; ny < 9; ++ny) {
                auto lat = Lattice::build(GridSpec::rectangular(nx, ny), Stencil::rook5());
                const std::size_t p = static_cast<std::size_t>(nx - 2), q = static_cast<std::size_t>(ny - 2);
                CHECK(lat.graph.edges_per_block() == p * (q - 1) + q * (p - 1));
            }
        }
    }
}

TEST_CASE("penalty graph copies are identical, canonical and connected") {
    auto lat = Lattice::build(testing::cut_corner_domain(), Stencil::rook5());
    const auto& g = lat.graph;
    const std::size_t per = g.edges_per_block();
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t k = 0; k < g.n_blocks; ++k) {
        for (std::size_t e = 0; e < per; ++e) {
            const auto& edge = g.edges[k * per + e];
            CHECK(edge.block == k);
            CHECK(edge.i < edge.j);
            CHECK(edge.i == g.edges[e].i);
            CHECK(edge.j == g.edges[e].j);
            CHECK(lat.partition.is_inner(edge.j));
            if (k == 0) seen.insert({edge.i, edge.j});
        }
    }
    CHECK(seen.size() == per);
    CHECK(testing::connected_components(lat.n_inner(), g.inner_edges) == 1);
}

TEST_CASE("indicator map shape and injectivity") {
    auto lat = Lattice::build(GridSpec::rectangular(7, 7), Stencil::rook5());
    CHECK(lat.map.m() == 149);
    CHECK(lat.map.n() * lat.map.n() == 2401);
    std::set<std::size_t> rows;
    for (std::size_t a = 0; a < lat.map.m(); ++a) rows.insert(lat.map.vec_index(a));
    CHECK(rows.size() == lat.map.m());  // P'P = I
}

TEST_CASE("indicator map places alpha_k(s_i) at the stencil neighbour") {
    auto lat = Lattice::build(GridSpec::rectangular(7, 7), Stencil::rook5());
    const auto& p = lat.partition;
    for (std::size_t i = 0; i < p.n_inner(); ++i) {
        // left neighbour, enumerated straight from the cell coordinates
        const Cell c = p.cell(i);
        const std::size_t left = *p.index_of({c.x - 1, c.y});
        const auto& entry = lat.map[p.alpha_index(1, i)];
        CHECK(entry.row == i);
        CHECK(entry.col == left);
    }
    for (std::size_t b = p.n_inner(); b < p.n(); ++b) {
        const auto& entry = lat.map[p.boundary_alpha_index(b)];
        CHECK(entry.row == b);
        CHECK(entry.col == b);
    }
}

TEST_CASE("alpha -> A -> alpha round trip") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    for (auto stencil : {Stencil::rook5(), Stencil::queen9()}) {
        auto lat = Lattice::build(GridSpec::rectangular(7, 6), stencil);
        const auto layout = CoefficientLayout::of(lat.partition);
        Eigen::VectorXd v(static_cast<Eigen::Index>(lat.m()));
        for (auto& x : v) x = normal(rng);
        CoefficientVector alpha(layout, v);
        auto A = assemble_transition(alpha, lat.map);
        CHECK(static_cast<std::size_t>(A.nonZeros()) == lat.m());
        auto back = extract_coefficients(A, lat.map, layout);
        CHECK(back.values() == v);
    }
}
