#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "prefhedge/errors.hpp"
#include "prefhedge/grid.hpp"
#include "prefhedge/mc.hpp"
#include "prefhedge/pide.hpp"
#include "prefhedge/policy.hpp"

namespace prefhedge {

// Surface container, binary layout (native little-endian doubles and integers):
//
//   offset  size  field
//        0     8  magic "PHSURF\0\0"
//        8     4  u32 version (1)
//       12     4  u32 kind: 1 = ln h, 2 = policy
//       16     4  u32 byte-order marker 0x01020304
//       20     4  u32 Gauss-Hermite order of the ybar quadrature
//       24     8  u64 n_ybar
//       32     8  u64 n_t
//       40     8  u64 n_y
//       48     8  u64 params hash (ModelParams::hash)
//       56     8  u64 FNV-1a checksum of the payload
//       64     8  f64 T
//       72     8  f64 eps_T
//       80     4  u32 flags: bit 0 = terminal slope present (kind 1)
//       84     4  u32 reserved
//       88        payload
//
// payload: t nodes, y nodes, ybar nodes, then
//   kind 1: ln h in ybar-major, t, y order; terminal slope (ybar, y) if flagged
//   kind 2: myopic and hedging demand, each t-major, y; the total pi is their sum
//           then u64 iterations, f64 final change, f64 final damping,
//           u64 history length, history

inline constexpr std::array<char, 8> kSurfaceMagic{'P', 'H', 'S', 'U', 'R', 'F', '\0', '\0'};
inline constexpr std::uint32_t kSurfaceVersion = 1;
inline constexpr std::uint32_t kByteOrderMarker = 0x01020304U;

enum class SurfaceKind : std::uint32_t { log_h = 1, policy = 2 };

struct SurfaceHeader {
    std::uint32_t version = kSurfaceVersion;
    SurfaceKind kind = SurfaceKind::log_h;
    std::uint32_t gh_order = 0;
    std::uint64_t n_ybar = 0;
    std::uint64_t n_t = 0;
    std::uint64_t n_y = 0;
    std::uint64_t params_hash = 0;
    std::uint64_t checksum = 0;
    double T = 0.0;
    double eps_T = 0.0;
    std::uint32_t flags = 0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_doubles(const std::vector<double>& v) {
        if (!v.empty()) out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    [[nodiscard]] const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& s, std::size_t pos = 0) : s_(s), pos_(pos) {}
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::vector<double> get_doubles(std::size_t n) {
        if (n > (s_.size() - pos_) / sizeof(double)) throw FormatError("surface file truncated");
        std::vector<double> v(n);
        if (n) std::memcpy(v.data(), s_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    [[nodiscard]] bool at_end() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n) const {
        if (s_.size() - pos_ < n) throw FormatError("surface file truncated");
    }
    const std::string& s_;
    std::size_t pos_;
};

inline constexpr std::size_t kHeaderBytes = 88;

inline std::string encode_header(const SurfaceHeader& h) {
    ByteWriter w;
    for (char c : kSurfaceMagic) w.put(c);
    w.put(h.version);
    w.put(static_cast<std::uint32_t>(h.kind));
    w.put(kByteOrderMarker);
    w.put(h.gh_order);
    w.put(h.n_ybar);
    w.put(h.n_t);
    w.put(h.n_y);
    w.put(h.params_hash);
    w.put(h.checksum);
    w.put(h.T);
    w.put(h.eps_T);
    w.put(h.flags);
    w.put(std::uint32_t{0});
    return w.bytes();
}

inline SurfaceHeader decode_header(const std::string& bytes) {
    if (bytes.size() < kHeaderBytes) throw FormatError("surface file shorter than its header");
    ByteReader r(bytes);
    std::array<char, 8> magic{};
    for (char& c : magic) c = r.get<char>();
    if (magic != kSurfaceMagic) throw FormatError("not a surface file (bad magic bytes)");
    SurfaceHeader h;
    h.version = r.get<std::uint32_t>();
    if (h.version != kSurfaceVersion) throw FormatError("unsupported surface file version " + std::to_string(h.version));
    const auto kind = r.get<std::uint32_t>();
    if (kind != 1 && kind != 2) throw FormatError("unknown surface kind");
    h.kind = static_cast<SurfaceKind>(kind);
    if (r.get<std::uint32_t>() != kByteOrderMarker) throw FormatError("surface file written with a different byte order");
    h.gh_order = r.get<std::uint32_t>();
    h.n_ybar = r.get<std::uint64_t>();
    h.n_t = r.get<std::uint64_t>();
    h.n_y = r.get<std::uint64_t>();
    h.params_hash = r.get<std::uint64_t>();
    h.checksum = r.get<std::uint64_t>();
    h.T = r.get<double>();
    h.eps_T = r.get<double>();
    h.flags = r.get<std::uint32_t>();
    return h;
}

inline void put_grid(ByteWriter& w, const GridSpec& g) {
    w.put_doubles(g.t_nodes);
    w.put_doubles(g.y_nodes);
    w.put_doubles(g.ybar_nodes);
}

inline std::shared_ptr<const GridSpec> get_grid(ByteReader& r, const SurfaceHeader& h) {
    if (h.n_t < 2 || h.n_y < 5 || h.n_ybar < 1 || h.gh_order < 1) throw FormatError("surface dims out of range");
    if (h.n_t * h.n_y * h.n_ybar > (std::uint64_t{1} << 34)) throw FormatError("surface dims implausibly large");
    GridSpec g;
    g.T = h.T;
    g.eps_T = h.eps_T;
    g.t_nodes = r.get_doubles(h.n_t);
    g.y_nodes = r.get_doubles(h.n_y);
    g.ybar_nodes = r.get_doubles(h.n_ybar);
    g.quadrature = gauss_hermite(h.gh_order);
    try {
        g.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("surface grid invalid: ") + e.what());
    }
    return std::make_shared<const GridSpec>(std::move(g));
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline SurfaceHeader header_for(const GridSpec& g, SurfaceKind kind, std::uint64_t params_hash) {
    SurfaceHeader h;
    h.kind = kind;
    h.gh_order = static_cast<std::uint32_t>(g.quadrature.size());
    h.n_ybar = g.nybar();
    h.n_t = g.nt();
    h.n_y = g.ny();
    h.params_hash = params_hash;
    h.T = g.T;
    h.eps_T = g.eps_T;
    return h;
}

}  // namespace detail

/// Result of a load: the surface plus whether the payload checksum matched.
/// A mismatch is reported rather than thrown so a verifier can show what the
/// damaged data does to the residual.
template <class Surface>
struct Loaded {
    Surface surface;
    SurfaceHeader header;
    bool checksum_ok = false;
};

inline std::string encode_h(const HSurface& h) {
    const GridSpec& g = h.grid();
    detail::ByteWriter payload;
    detail::put_grid(payload, g);
    payload.put_doubles(h.log_values());
    if (h.has_terminal_slope()) {
        for (std::size_t k = 0; k < g.nybar(); ++k)
            for (std::size_t j = 0; j < g.ny(); ++j) payload.put(h.terminal_slope(j, k));
    }
    SurfaceHeader hd = detail::header_for(g, SurfaceKind::log_h, h.params_hash());
    hd.flags = h.has_terminal_slope() ? 1U : 0U;
    hd.checksum = detail::fnv1a(payload.bytes());
    return detail::encode_header(hd) + payload.bytes();
}

inline Loaded<HSurface> decode_h(const std::string& bytes) {
    Loaded<HSurface> out;
    out.header = detail::decode_header(bytes);
    if (out.header.kind != SurfaceKind::log_h) throw FormatError("surface file holds a policy, not h");
    out.checksum_ok = detail::fnv1a(bytes.substr(detail::kHeaderBytes)) == out.header.checksum;
    detail::ByteReader r(bytes, detail::kHeaderBytes);
    auto grid = detail::get_grid(r, out.header);
    HSurface h(grid, out.header.params_hash);
    h.log_values() = r.get_doubles(grid->nybar() * grid->nt() * grid->ny());
    if (out.header.flags & 1U) {
        h.allocate_terminal_slope();
        for (std::size_t k = 0; k < grid->nybar(); ++k)
            for (std::size_t j = 0; j < grid->ny(); ++j) h.set_terminal_slope(j, k, r.get<double>());
    }
    if (!r.at_end()) throw FormatError("trailing bytes after the h payload");
    out.surface = std::move(h);
    return out;
}

inline std::string encode_policy(const PolicySurface& pi, std::uint64_t params_hash) {
    const GridSpec& g = pi.grid();
    detail::ByteWriter payload;
    detail::put_grid(payload, g);
    payload.put_doubles(pi.myopic_values());
    payload.put_doubles(pi.hedging_values());
    payload.put(static_cast<std::uint64_t>(pi.meta.iterations));
    payload.put(pi.meta.final_change);
    payload.put(pi.meta.final_damping);
    payload.put(static_cast<std::uint64_t>(pi.meta.history.size()));
    payload.put_doubles(pi.meta.history);
    SurfaceHeader hd = detail::header_for(g, SurfaceKind::policy, params_hash);
    hd.checksum = detail::fnv1a(payload.bytes());
    return detail::encode_header(hd) + payload.bytes();
}

inline Loaded<PolicySurface> decode_policy(const std::string& bytes) {
    Loaded<PolicySurface> out;
    out.header = detail::decode_header(bytes);
    if (out.header.kind != SurfaceKind::policy) throw FormatError("surface file holds h, not a policy");
    out.checksum_ok = detail::fnv1a(bytes.substr(detail::kHeaderBytes)) == out.header.checksum;
    detail::ByteReader r(bytes, detail::kHeaderBytes);
    auto grid = detail::get_grid(r, out.header);
    const std::size_t n = grid->nt() * grid->ny();
    const std::vector<double> my = r.get_doubles(n);
    const std::vector<double> he = r.get_doubles(n);
    PolicySurface pi(grid);
    for (std::size_t a = 0; a < grid->nt(); ++a)
        for (std::size_t j = 0; j < grid->ny(); ++j) pi.set(a, j, my[a * grid->ny() + j], he[a * grid->ny() + j]);
    pi.meta.iterations = r.get<std::uint64_t>();
    pi.meta.final_change = r.get<double>();
    pi.meta.final_damping = r.get<double>();
    const auto hl = r.get<std::uint64_t>();
    if (hl > 1000000) throw FormatError("policy history length implausible");
    pi.meta.history = r.get_doubles(hl);
    if (!r.at_end()) throw FormatError("trailing bytes after the policy payload");
    out.surface = std::move(pi);
    return out;
}

inline void save_h(const std::filesystem::path& path, const HSurface& h) { detail::write_file(path, encode_h(h)); }
inline Loaded<HSurface> load_h(const std::filesystem::path& path) { return decode_h(detail::read_file(path)); }
inline void save_policy(const std::filesystem::path& path, const PolicySurface& pi, std::uint64_t params_hash) {
    detail::write_file(path, encode_policy(pi, params_hash));
}
inline Loaded<PolicySurface> load_policy(const std::filesystem::path& path) { return decode_policy(detail::read_file(path)); }

// CSV form of the h container: '#'-prefixed header lines with the same
// fields, then one row per node in ybar-major, t, y order. The terminal
// slope column is filled on the last time row only when present.

inline void save_h_csv(const std::filesystem::path& path, const HSurface& h) {
    const GridSpec& g = h.grid();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(h.params_hash()));
    f << "# magic=PHSURF version=" << kSurfaceVersion << " kind=log_h\n";
    f << "# n_ybar=" << g.nybar() << " n_t=" << g.nt() << " n_y=" << g.ny() << " gh_order=" << g.quadrature.size()
      << "\n";
    f << "# params_hash=" << hash << " T=" << detail::fmt17(g.T) << " eps_T=" << detail::fmt17(g.eps_T) << "\n";
    f << "ybar,t,y,log_h,terminal_slope\n";
    for (std::size_t k = 0; k < g.nybar(); ++k)
        for (std::size_t n = 0; n < g.nt(); ++n)
            for (std::size_t j = 0; j < g.ny(); ++j) {
                f << detail::fmt17(g.ybar_nodes[k]) << ',' << detail::fmt17(g.t_nodes[n]) << ','
                  << detail::fmt17(g.y_nodes[j]) << ',' << detail::fmt17(h.log_value(n, j, k)) << ',';
                if (n + 1 == g.nt() && h.has_terminal_slope()) f << detail::fmt17(h.terminal_slope(j, k));
                f << '\n';
            }
    if (!f) throw FormatError("write failed: " + path.string());
}

inline HSurface load_h_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path.string());
    std::string line;
    std::size_t nybar = 0;
    std::size_t nt = 0;
    std::size_t ny = 0;
    std::size_t gh = 0;
    std::uint64_t hash = 0;
    double T = 0.0;
    double eps = 0.0;
    bool magic = false;
    auto field = [](const std::string& l, const std::string& key) -> std::string {
        const auto at = l.find(key + "=");
        if (at == std::string::npos) return {};
        const auto from = at + key.size() + 1;
        return l.substr(from, l.find(' ', from) - from);
    };
    std::vector<std::string> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (field(line, "magic") == "PHSURF") {
                magic = true;
                if (field(line, "version") != std::to_string(kSurfaceVersion)) throw FormatError("unsupported CSV surface version");
                if (field(line, "kind") != "log_h") throw FormatError("CSV surface is not ln h");
            }
            if (auto v = field(line, "n_ybar"); !v.empty()) nybar = std::stoull(v);
            if (auto v = field(line, "n_t"); !v.empty()) nt = std::stoull(v);
            if (auto v = field(line, "n_y"); !v.empty()) ny = std::stoull(v);
            if (auto v = field(line, "gh_order"); !v.empty()) gh = std::stoull(v);
            if (auto v = field(line, "params_hash"); !v.empty()) hash = std::stoull(v, nullptr, 16);
            if (auto v = field(line, "T"); !v.empty()) T = std::stod(v);
            if (auto v = field(line, "eps_T"); !v.empty()) eps = std::stod(v);
            continue;
        }
        if (line.rfind("ybar,", 0) == 0) continue;
        rows.push_back(line);
    }
    if (!magic) throw FormatError("CSV surface without magic header");
    if (nt < 2 || ny < 5 || nybar < 1 || gh < 1) throw FormatError("CSV surface dims out of range");
    if (rows.size() != nybar * nt * ny) throw FormatError("CSV surface row count does not match its dims");
    GridSpec g;
    g.T = T;
    g.eps_T = eps;
    g.t_nodes.resize(nt);
    g.y_nodes.resize(ny);
    g.ybar_nodes.resize(nybar);
    g.quadrature = gauss_hermite(gh);
    std::vector<double> logs(rows.size());
    std::vector<double> slope(nybar * ny, 0.0);
    bool has_slope = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::stringstream ss(rows[i]);
        std::string cell[5];
        for (auto& c : cell) std::getline(ss, c, ',');
        const std::size_t k = i / (nt * ny);
        const std::size_t n = (i / ny) % nt;
        const std::size_t j = i % ny;
        try {
            if (j == 0 && n == 0) g.ybar_nodes[k] = std::stod(cell[0]);
            if (k == 0 && j == 0) g.t_nodes[n] = std::stod(cell[1]);
            if (k == 0 && n == 0) g.y_nodes[j] = std::stod(cell[2]);
            logs[i] = std::stod(cell[3]);
            if (n + 1 == nt && !cell[4].empty()) {
                slope[k * ny + j] = std::stod(cell[4]);
                has_slope = true;
            }
        } catch (const std::exception&) {
            throw FormatError("CSV surface: unparsable row " + std::to_string(i));
        }
    }
    try {
        g.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("CSV surface grid invalid: ") + e.what());
    }
    HSurface h(std::make_shared<const GridSpec>(std::move(g)), hash);
    h.log_values() = std::move(logs);
    if (has_slope) {
        h.allocate_terminal_slope();
        for (std::size_t k = 0; k < nybar; ++k)
            for (std::size_t j = 0; j < ny; ++j) h.set_terminal_slope(j, k, slope[k * ny + j]);
    }
    return h;
}

/// Long-format grid of the policy and its components, one row per (t, y) node.
inline void save_policy_csv(const std::filesystem::path& path, const PolicySurface& pi) {
    const GridSpec& g = pi.grid();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f << "t,y,exp_y,pi,myopic,hedging\n";
    for (std::size_t n = 0; n < g.nt(); ++n)
        for (std::size_t j = 0; j < g.ny(); ++j)
            f << detail::fmt17(g.t_nodes[n]) << ',' << detail::fmt17(g.y_nodes[j]) << ','
              << detail::fmt17(std::exp(g.y_nodes[j])) << ',' << detail::fmt17(pi.pi(n, j)) << ','
              << detail::fmt17(pi.myopic(n, j)) << ',' << detail::fmt17(pi.hedging(n, j)) << '\n';
    if (!f) throw FormatError("write failed: " + path.string());
}

/// Recorded paths, one row per (path, time). Needs a batch simulated with record_paths.
inline void save_paths_csv(const std::filesystem::path& path, const PathBatch& b) {
    if (!b.has_paths()) throw FormatError("save_paths_csv: batch was simulated without record_paths");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f << "# measure " << to_string(b.measure) << ", ybar " << detail::fmt17(b.ybar) << ", seed " << b.seed
      << ", stream " << b.stream << '\n';
    f << "path,t,x,y\n";
    for (std::size_t i = 0; i < b.n_paths(); ++i)
        for (std::size_t k = 0; k < b.n_times(); ++k)
            f << i << ',' << detail::fmt17(b.times[k]) << ',' << detail::fmt17(b.x_at(i, k)) << ','
              << detail::fmt17(b.y_at(i, k)) << '\n';
    if (!f) throw FormatError("write failed: " + path.string());
}

}  // namespace prefhedge
