#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "prefhedge/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace prefhedge;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "prefhedge_io_test";
    fs::create_directories(d);
    return d / name;
}

HSurface sample_h(const ModelParams& p) {
    auto g = testing_support::grid_for(p);
    HSurface h = HSurface::from_log_function(g, p.hash(), [](double t, double y, double yb) {
        return 0.01 * t * std::sin(y) - 0.3 * yb * y + 1e-3 * t * t;
    });
    h.allocate_terminal_slope();
    for (std::size_t k = 0; k < g->nybar(); ++k)
        for (std::size_t j = 0; j < g->ny(); ++j) h.set_terminal_slope(j, k, 0.1 * static_cast<double>(j) - 0.01 * static_cast<double>(k));
    return h;
}

PolicySurface sample_policy(const ModelParams& p) {
    auto g = testing_support::grid_for(p);
    PolicySurface pi(g);
    for (std::size_t n = 0; n < g->nt(); ++n)
        for (std::size_t j = 0; j < g->ny(); ++j) pi.set(n, j, 1.0 / (1.0 + static_cast<double>(j)), 1e-3 * static_cast<double>(n));
    pi.meta.iterations = 7;
    pi.meta.final_change = 3.5e-7;
    pi.meta.final_damping = 0.5;
    pi.meta.history = {0.1, 0.01, 3.5e-7};
    return pi;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << s;
}

}  // namespace

TEST(SurfaceFile, HeaderLayout) {
    ModelParams p;
    const HSurface h = sample_h(p);
    const std::string bytes = encode_h(h);
    ASSERT_GE(bytes.size(), detail::kHeaderBytes);
    EXPECT_EQ(std::memcmp(bytes.data(), "PHSURF\0\0", 8), 0);
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    EXPECT_EQ(version, kSurfaceVersion);
    std::uint64_t dims[4];
    std::memcpy(dims, bytes.data() + 24, sizeof dims);
    EXPECT_EQ(dims[0], h.grid().nybar());
    EXPECT_EQ(dims[1], h.grid().nt());
    EXPECT_EQ(dims[2], h.grid().ny());
    EXPECT_EQ(dims[3], p.hash());
    const SurfaceHeader hd = detail::decode_header(bytes);
    EXPECT_EQ(hd.kind, SurfaceKind::log_h);
    EXPECT_EQ(hd.T, p.T);
    EXPECT_EQ(hd.flags, 1u);
}

TEST(SurfaceFile, PayloadIsYbarMajor) {
    ModelParams p;
    const HSurface h = sample_h(p);
    const std::string bytes = encode_h(h);
    const GridSpec& g = h.grid();
    const std::size_t grid_bytes = (g.nt() + g.ny() + g.nybar()) * sizeof(double);
    auto at = [&](std::size_t k, std::size_t n, std::size_t j) {
        double v;
        std::memcpy(&v, bytes.data() + detail::kHeaderBytes + grid_bytes + ((k * g.nt() + n) * g.ny() + j) * sizeof(double),
                    sizeof v);
        return v;
    };
    EXPECT_EQ(at(0, 0, 0), h.log_value(0, 0, 0));
    EXPECT_EQ(at(3, 5, 7), h.log_value(5, 7, 3));
    EXPECT_EQ(at(g.nybar() - 1, g.nt() - 1, g.ny() - 1), h.log_value(g.nt() - 1, g.ny() - 1, g.nybar() - 1));
}

TEST(SurfaceFile, BinaryRoundTripIsExact) {
    ModelParams p;
    const HSurface h = sample_h(p);
    const fs::path f = scratch("h.bin");
    save_h(f, h);
    const Loaded<HSurface> back = load_h(f);
    EXPECT_TRUE(back.checksum_ok);
    EXPECT_EQ(back.surface.params_hash(), p.hash());
    EXPECT_TRUE(back.surface.log_values() == h.log_values());
    EXPECT_TRUE(back.surface.grid().t_nodes == h.grid().t_nodes);
    EXPECT_TRUE(back.surface.grid().y_nodes == h.grid().y_nodes);
    EXPECT_TRUE(back.surface.grid().ybar_nodes == h.grid().ybar_nodes);
    ASSERT_TRUE(back.surface.has_terminal_slope());
    EXPECT_EQ(back.surface.terminal_slope(4, 2), h.terminal_slope(4, 2));

    const PolicySurface pi = sample_policy(p);
    save_policy(scratch("pi.bin"), pi, p.hash());
    const Loaded<PolicySurface> lp = load_policy(scratch("pi.bin"));
    EXPECT_TRUE(lp.checksum_ok);
    EXPECT_TRUE(lp.surface.pi_values() == pi.pi_values());
    EXPECT_TRUE(lp.surface.hedging_values() == pi.hedging_values());
    EXPECT_EQ(lp.surface.meta.iterations, 7u);
    EXPECT_EQ(lp.surface.meta.history, pi.meta.history);
}

TEST(SurfaceFile, CsvRoundTripIsExact) {
    ModelParams p;
    const HSurface h = sample_h(p);
    const fs::path f = scratch("h.csv");
    save_h_csv(f, h);
    const HSurface back = load_h_csv(f);
    EXPECT_EQ(back.params_hash(), p.hash());
    EXPECT_TRUE(back.log_values() == h.log_values());
    EXPECT_TRUE(back.grid().t_nodes == h.grid().t_nodes);
    EXPECT_EQ(back.grid().quadrature.size(), h.grid().quadrature.size());
    EXPECT_EQ(back.terminal_slope(4, 2), h.terminal_slope(4, 2));
}

TEST(SurfaceFile, TamperedPayloadFailsChecksum) {
    ModelParams p;
    const fs::path f = scratch("tamper.bin");
    save_h(f, sample_h(p));
    std::string bytes = slurp(f);
    bytes[bytes.size() / 2] ^= 0x10;
    spit(f, bytes);
    const Loaded<HSurface> back = load_h(f);
    EXPECT_FALSE(back.checksum_ok);
}

TEST(SurfaceFile, MalformedFilesAreRejected) {
    ModelParams p;
    const fs::path f = scratch("bad.bin");
    const std::string good = encode_h(sample_h(p));

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    spit(f, bad_magic);
    EXPECT_THROW(load_h(f), FormatError);

    spit(f, good.substr(0, good.size() - 9));
    EXPECT_THROW(load_h(f), FormatError);

    spit(f, good.substr(0, 40));
    EXPECT_THROW(load_h(f), FormatError);

    spit(f, good + "x");
    EXPECT_THROW(load_h(f), FormatError);

    std::string bad_version = good;
    bad_version[8] = 9;
    spit(f, bad_version);
    EXPECT_THROW(load_h(f), FormatError);

    // a policy file is not an h file
    spit(f, encode_policy(sample_policy(p), p.hash()));
    EXPECT_THROW(load_h(f), FormatError);

    EXPECT_THROW(load_h(scratch("does_not_exist.bin")), FormatError);
}

TEST(SurfaceFile, CsvRejectsMissingMagicAndShortBody) {
    const fs::path f = scratch("bad.csv");
    spit(f, "ybar,t,y,log_h,terminal_slope\n0,0,0,0,\n");
    EXPECT_THROW(load_h_csv(f), FormatError);
    spit(f, "# magic=PHSURF version=1 kind=log_h\n# n_ybar=1 n_t=2 n_y=5 gh_order=3\n# params_hash=00 T=1 eps_T=0.01\n0,0,0,0,\n");
    EXPECT_THROW(load_h_csv(f), FormatError);
}

TEST(PathsCsv, RowsPerPathAndTime) {
    ModelParams p;
    SimConfig sim = testing_support::small_sim(8, 10);
    sim.block_size = 8;
    sim.record_paths = true;
    const PathBatch b = simulate_conditioned(ConstantPolicy{0.5}, 0.0, 1.0, p.y0, 1.2, sim, p);
    const fs::path f = scratch("paths.csv");
    save_paths_csv(f, b);
    std::ifstream in(f);
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);
    EXPECT_EQ(line[0], '#');
    std::getline(in, line);
    EXPECT_EQ(line, "path,t,x,y");
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, b.n_paths() * b.n_times());

    sim.record_paths = false;
    const PathBatch bare = simulate_conditioned(ConstantPolicy{0.5}, 0.0, 1.0, p.y0, 1.2, sim, p);
    EXPECT_THROW(save_paths_csv(f, bare), FormatError);
}
