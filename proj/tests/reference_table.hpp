#pragma once

// Reference policy table: pi at t = 0, 7, 14, 21, 28, 35 for each (mu_Y, rho)
// block, transcribed digit for digit (including the 0.3634 entry and the 1.467
// outlier in the "-0.02, 1" block).

#include <array>
#include <string>
#include <vector>

namespace reftable {

struct Row {
    double exp_y;
    std::array<double, 6> pi;
};

struct Block {
    std::string name;
    std::vector<Row> rows;
};

inline const std::vector<Block>& blocks() {
    static const std::vector<Block> b{
        {"0.02, 0.6",
         {{2, {0.272, 0.315, 0.364, 0.421, 0.487, 0.563}},
          {3, {0.182, 0.21, 0.243, 0.281, 0.325, 0.376}},
          {4, {0.136, 0.157, 0.182, 0.211, 0.244, 0.282}},
          {7, {0.078, 0.09, 0.104, 0.120, 0.139, 0.161}},
          {10, {0.054, 0.063, 0.073, 0.084, 0.097, 0.113}}}},
        {"0.02, -0.6",
         {{2, {0.272, 0.315, 0.364, 0.421, 0.487, 0.563}},
          {3, {0.181, 0.21, 0.243, 0.281, 0.325, 0.376}},
          {4, {0.136, 0.157, 0.182, 0.21, 0.243, 0.281}},
          {7, {0.078, 0.09, 0.104, 0.12, 0.139, 0.161}},
          {10, {0.054, 0.063, 0.073, 0.084, 0.097, 0.113}}}},
        {"-0.02, 0.6",
         {{0.8, {3.48, 2.946, 2.574, 2.251, 1.967, 1.72}},
          {1.2, {2.328, 1.963, 1.716, 1.5, 1.312, 1.147}},
          {1.6, {1.724, 1.472, 1.287, 1.125, 0.984, 0.86}},
          {2, {1.365, 1.178, 1.03, 0.9, 0.787, 0.688}},
          {2.4, {1.13, 0.981, 0.858, 0.75, 0.656, 0.573}}}},
        {"-0.02, -0.6",
         {{0.8, {3.384, 2.93, 2.573, 2.25, 1.967, 1.72}},
          {1.2, {2.257, 1.948, 1.716, 1.5, 1.312, 1.147}},
          {1.6, {1.692, 1.462, 1.287, 1.125, 0.984, 0.86}},
          {2, {1.353, 1.171, 1.029, 0.9, 0.787, 0.688}},
          {2.4, {1.128, 0.976, 0.858, 0.75, 0.656, 0.573}}}},
        {"0.0008, 0.6",
         {{1, {1.172, 1.186, 1.199, 1.213, 1.226, 1.24}},
          {2, {0.586, 0.593, 0.599, 0.606, 0.613, 0.62}},
          {3, {0.391, 0.395, 0.4, 0.404, 0.409, 0.413}},
          {4, {0.293, 0.296, 0.3, 0.303, 0.307, 0.31}},
          {5, {0.235, 0.237, 0.24, 0.243, 0.245, 0.248}}}},
        {"0.0008, -0.6",
         {{1, {1.171, 1.186, 1.199, 1.213, 1.227, 1.24}},
          {2, {0.586, 0.593, 0.599, 0.606, 0.613, 0.62}},
          {3, {0.391, 0.395, 0.4, 0.404, 0.409, 0.413}},
          {4, {0.293, 0.296, 0.3, 0.303, 0.307, 0.31}},
          {5, {0.234, 0.237, 0.24, 0.243, 0.245, 0.248}}}},
        {"0.02, 1",
         {{2, {0.272, 0.315, 0.364, 0.421, 0.487, 0.563}},
          {3, {0.181, 0.21, 0.243, 0.281, 0.325, 0.376}},
          {4, {0.136, 0.157, 0.182, 0.21, 0.243, 0.282}},
          {7, {0.078, 0.09, 0.104, 0.12, 0.139, 0.161}},
          {10, {0.054, 0.063, 0.073, 0.084, 0.097, 0.113}}}},
        {"0.02, -1",
         {{2, {0.272, 0.315, 0.364, 0.421, 0.487, 0.563}},
          {3, {0.181, 0.21, 0.243, 0.281, 0.325, 0.376}},
          {4, {0.136, 0.157, 0.182, 0.21, 0.243, 0.282}},
          {7, {0.078, 0.09, 0.104, 0.12, 0.139, 0.161}},
          {10, {0.054, 0.063, 0.073, 0.084, 0.097, 0.113}}}},
        {"-0.02, 1",
         {{0.8, {3.446, 3.027, 2.578, 2.251, 1.967, 1.72}},
          {1.2, {2.34, 2.008, 1.717, 1.5, 1.312, 1.467}},
          {1.6, {1.767, 1.43, 1.287, 1.125, 0.984, 0.86}},
          {2, {1.419, 1.188, 1.03, 0.9, 0.787, 0.688}},
          {2.4, {1.185, 0.986, 0.858, 0.75, 0.656, 0.573}}}},
        {"-0.02, -1",
         {{0.8, {3.49, 2.942, 2.574, 2.251, 1.968, 1.72}},
          {1.2, {2.387, 1.962, 1.716, 1.5, 1.312, 1.147}},
          {1.6, {1.794, 1.471, 1.287, 1.125, 0.984, 0.86}},
          {2, {1.424, 1.177, 1.03, 0.9, 0.787, 0.688}},
          {2.4, {1.174, 0.981, 0.858, 0.75, 0.656, 0.573}}}},
        {"0.02, 0",
         {{2, {0.272, 0.315, 0.3634, 0.421, 0.487, 0.563}},
          {3, {0.181, 0.21, 0.243, 0.281, 0.325, 0.376}},
          {4, {0.136, 0.157, 0.182, 0.21, 0.243, 0.282}},
          {7, {0.078, 0.09, 0.104, 0.12, 0.139, 0.161}},
          {10, {0.054, 0.063, 0.073, 0.084, 0.097, 0.113}}}},
        {"-0.02, 0",
         {{0.8, {3.368, 2.946, 2.574, 2.25, 1.968, 1.72}},
          {1.2, {2.245, 1.963, 1.716, 1.5, 1.312, 1.147}},
          {1.6, {1.684, 1.472, 1.287, 1.125, 0.984, 0.86}},
          {2, {1.347, 1.178, 1.03, 0.9, 0.787, 0.688}},
          {2.4, {1.123, 0.981, 0.858, 0.75, 0.656, 0.573}}}},
    };
    return b;
}

inline const Block& block(const std::string& name) {
    for (const Block& b : blocks())
        if (b.name == name) return b;
    throw std::out_of_range("no reference block " + name);
}

}  // namespace reftable
