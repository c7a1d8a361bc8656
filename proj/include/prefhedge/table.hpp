#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "prefhedge/errors.hpp"
#include "prefhedge/model.hpp"

namespace prefhedge {

/// One block of the published policy table: a (mu_Y, rho) pair, the exp(y)
/// rows it lists and the shared time columns.
struct TableBlock {
    std::string name;  // "mu_Y, rho", e.g. "0.02, 0.6"
    double mu_Y;
    double rho;
    std::vector<double> exp_y;
    bool half_variance = false;  // mu_Y tied to sigma_Y^2 / 2
};

inline constexpr std::array<double, 6> kTableTimes{0.0, 7.0, 14.0, 21.0, 28.0, 35.0};

/// mu_Y = sigma_Y^2 / 2 with the default sigma_Y = 0.04.
inline constexpr double kHalfVarianceDrift = 0.0008;

inline const std::vector<TableBlock>& table_blocks() {
    static const std::vector<TableBlock> blocks = [] {
        const std::vector<double> up{2, 3, 4, 7, 10};
        const std::vector<double> down{0.8, 1.2, 1.6, 2, 2.4};
        const std::vector<double> flat{1, 2, 3, 4, 5};
        return std::vector<TableBlock>{
            {"0.02, 0.6", 0.02, 0.6, up},     {"0.02, -0.6", 0.02, -0.6, up},
            {"-0.02, 0.6", -0.02, 0.6, down}, {"-0.02, -0.6", -0.02, -0.6, down},
            {"0.0008, 0.6", kHalfVarianceDrift, 0.6, flat, true}, {"0.0008, -0.6", kHalfVarianceDrift, -0.6, flat, true},
            {"0.02, 1", 0.02, 1.0, up},       {"0.02, -1", 0.02, -1.0, up},
            {"-0.02, 1", -0.02, 1.0, down},   {"-0.02, -1", -0.02, -1.0, down},
            {"0.02, 0", 0.02, 0.0, up},       {"-0.02, 0", -0.02, 0.0, down},
        };
    }();
    return blocks;
}

/// Accepts "0.02, 0.6", "0.02,0.6", a unicode minus and the form "0.5sigma^2, 0.6".
inline const TableBlock& table_block(std::string name) {
    std::string norm;
    for (std::size_t i = 0; i < name.size(); ++i) {
        if (name.compare(i, 3, "\xE2\x88\x92") == 0) {  // U+2212
            norm += '-';
            i += 2;
        } else if (name[i] != ' ') {
            norm += name[i];
        }
    }
    if (norm.rfind("0.5sigma^2,", 0) == 0) norm = "0.0008," + norm.substr(11);
    for (const TableBlock& b : table_blocks()) {
        std::string key = b.name;
        key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
        if (key == norm) return b;
    }
    throw ConfigError("unknown table block '" + name + "'");
}

inline ModelParams block_params(const TableBlock& b, ModelParams base = {}) {
    base.mu_Y = b.half_variance ? 0.5 * base.sigma_Y * base.sigma_Y : b.mu_Y;
    base.rho = b.rho;
    return base;
}

}  // namespace prefhedge
