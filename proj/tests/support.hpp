#pragma once

#include <memory>

#include "prefhedge/prefhedge.hpp"

namespace testing_support {

/// Coarse grid for unit tests: seconds, not minutes.
inline prefhedge::GridSettings small_grid() {
    prefhedge::GridSettings s;
    s.n_t = 120;
    s.n_y = 121;
    s.n_ybar = 25;
    s.gh_order = 15;
    return s;
}

inline std::shared_ptr<const prefhedge::GridSpec> grid_for(const prefhedge::ModelParams& p,
                                                           const prefhedge::GridSettings& s = small_grid()) {
    return std::make_shared<const prefhedge::GridSpec>(prefhedge::make_grid(p, s));
}

inline prefhedge::SimConfig small_sim(std::size_t paths = 20000, std::size_t steps = 100) {
    prefhedge::SimConfig c;
    c.n_paths = paths;
    c.n_steps = steps;
    c.block_size = 2048;
    return c;
}

}  // namespace testing_support
