#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace stvar {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0), components_(n) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        --components_;
        return true;
    }

    std::size_t components() const { return components_; }
    std::size_t size() const { return parent_.size(); }

    // Dense labels 0..components-1 ordered by first appearance.
    std::vector<std::size_t> labels() {
        std::vector<std::size_t> label(parent_.size());
        std::vector<std::size_t> root_label(parent_.size(), static_cast<std::size_t>(-1));
        std::size_t next = 0;
        for (std::size_t i = 0; i < parent_.size(); ++i) {
            std::size_t r = find(i);
            if (root_label[r] == static_cast<std::size_t>(-1)) root_label[r] = next++;
            label[i] = root_label[r];
        }
        return label;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> rank_;
    std::size_t components_;
};

}  // namespace stvar
