#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefhedge/equilibrium.hpp"
#include "prefhedge/errors.hpp"
#include "prefhedge/grid.hpp"
#include "prefhedge/mc.hpp"
#include "prefhedge/model.hpp"
#include "prefhedge/pide.hpp"

namespace prefhedge {

struct ProbePoint {
    double t = 0.0;
    double exp_y = 1.0;
};

enum class VerifiedPolicy {
    solved,
    /// Merton fraction with gamma frozen at exp(y) of the spike probe; a known non-equilibrium.
    frozen_gamma_myopic,
};

struct VerifySettings {
    double x0 = 1.0;
    std::vector<double> probe_t{0.0, 20.0, 35.0};
    std::vector<double> probe_exp_y{1.0, 2.0, 4.0};
    std::size_t g_paths = 200000;
    std::size_t reward_gh_order = 9;
    std::size_t reward_paths = 100000;
    double reward_t = 0.0;
    std::optional<double> reward_exp_y;  // default exp(y0)
    std::vector<double> spike_deltas{0.5, 0.25, 0.125};
    std::vector<double> spike_offsets{-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2};
    double spike_t = 0.0;
    std::optional<double> spike_exp_y;  // default exp(y0)
    std::size_t spike_paths = 100000;
    double residual_rms_tol = 1e-3;
    VerifiedPolicy policy = VerifiedPolicy::solved;
};

struct OutputSettings {
    std::string dir = "out";
    std::string surface_format = "binary";  // binary | csv | both
    bool grids = true;
};

/// Everything one run needs; a config file fixes all of it, seeds included.
struct RunConfig {
    ModelParams model;
    GridSettings grid;
    FixedPointConfig fixed_point;
    SolveOptions solver;
    SimConfig sim;
    std::vector<ProbePoint> probes;
    std::string table_block;
    VerifySettings verify;
    OutputSettings output;

    void validate() const {
        model.validate();
        fixed_point.validate();
        sim.validate();
        if (!(solver.inner_tol > 0.0)) throw ConfigError("solver: inner_tol > 0");
        if (solver.inner_max_iters < 1) throw ConfigError("solver: inner_max_iters >= 1");
        if (solver.threads < 1) throw ConfigError("solver: threads >= 1");
        for (const ProbePoint& q : probes) {
            if (!(q.t >= 0.0 && q.t < model.T)) throw ConfigError("probes: 0 <= t < T");
            if (!(q.exp_y > 0.0)) throw ConfigError("probes: exp_y > 0");
        }
        const VerifySettings& v = verify;
        if (!(v.x0 > 0.0)) throw ConfigError("verify: x0 > 0");
        for (double t : v.probe_t)
            if (!(t >= 0.0 && t < model.T)) throw ConfigError("verify: 0 <= probe_t < T");
        for (double e : v.probe_exp_y)
            if (!(e > 0.0)) throw ConfigError("verify: probe_exp_y > 0");
        if (v.g_paths < 2 || v.reward_paths < 2 || v.spike_paths < 2) throw ConfigError("verify: path counts >= 2");
        if (v.reward_gh_order < 1) throw ConfigError("verify: reward_gh_order >= 1");
        if (!(v.reward_t >= 0.0 && v.reward_t < model.T)) throw ConfigError("verify: 0 <= reward_t < T");
        if (v.reward_exp_y && !(*v.reward_exp_y > 0.0)) throw ConfigError("verify: reward_exp_y > 0");
        if (v.spike_exp_y && !(*v.spike_exp_y > 0.0)) throw ConfigError("verify: spike_exp_y > 0");
        if (v.spike_deltas.empty()) throw ConfigError("verify: spike_deltas non-empty");
        for (double d : v.spike_deltas)
            if (!(d > 0.0 && v.spike_t + d < model.T)) throw ConfigError("verify: 0 < delta and spike_t + delta < T");
        if (v.spike_offsets.empty()) throw ConfigError("verify: spike_offsets non-empty");
        if (!(v.residual_rms_tol > 0.0)) throw ConfigError("verify: residual_rms_tol > 0");
        if (output.surface_format != "binary" && output.surface_format != "csv" && output.surface_format != "both")
            throw ConfigError("output: surface_format is binary, csv or both");
    }
};

namespace detail {

/// Reads the keys of one JSON object and rejects any it was not asked about.
class ObjectReader {
public:
    ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ObjectReader(const ObjectReader&) = delete;
    ObjectReader& operator=(const ObjectReader&) = delete;

    ~ObjectReader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where_);
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    template <class T>
    void get(const std::string& key, std::optional<T>& out) {
        if (!has(key)) return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    const nlohmann::json& child(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    [[nodiscard]] std::string path(const std::string& key) const { return where_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline void read_model(const nlohmann::json& j, ModelParams& m) {
    ObjectReader r(j, "model");
    r.get("r", m.r);
    r.get("mu_S", m.mu_S);
    r.get("sigma_S", m.sigma_S);
    r.get("rho", m.rho);
    r.get("mu_Y", m.mu_Y);
    r.get("sigma_Y", m.sigma_Y);
    r.get("T", m.T);
    const bool has_y0 = r.has("y0");
    const bool has_exp = r.has("exp_y0");
    if (has_y0 && has_exp) throw ConfigError("model: give y0 or exp_y0, not both");
    r.get("y0", m.y0);
    if (has_exp) {
        double e = 0.0;
        r.get("exp_y0", e);
        if (!(e > 0.0)) throw ConfigError("model: exp_y0 > 0");
        m.y0 = std::log(e);
    }
}

inline void read_grid(const nlohmann::json& j, GridSettings& g) {
    ObjectReader r(j, "grid");
    r.get("n_t", g.n_t);
    r.get("n_y", g.n_y);
    r.get("n_ybar", g.n_ybar);
    r.get("gh_order", g.gh_order);
    r.get("eps_T_frac", g.eps_T_frac);
    r.get("width_sd", g.width_sd);
    r.get("ybar_margin_sd", g.ybar_margin_sd);
    r.get("y_min", g.y_min);
    r.get("y_max", g.y_max);
    r.get("cover_y", g.cover_y);
    r.get("cover_margin_sd", g.cover_margin_sd);
    r.get("cover_terminal_sd", g.cover_terminal_sd);
}

inline void read_fixed_point(const nlohmann::json& j, FixedPointConfig& f) {
    ObjectReader r(j, "fixed_point");
    r.get("max_iters", f.max_iters);
    r.get("tol_sup", f.tol_sup);
    r.get("damping", f.damping);
    r.get("min_damping", f.min_damping);
    r.get("row_tol", f.row_tol);
    r.get("row_max_iters", f.row_max_iters);
    if (r.has("start")) {
        std::string s;
        r.get("start", s);
        if (s == "sweep") f.start = StartPolicy::sweep;
        else if (s == "closed_form") f.start = StartPolicy::closed_form;
        else throw ConfigError("fixed_point.start: sweep or closed_form");
    }
}

inline void read_solver(const nlohmann::json& j, SolveOptions& s) {
    ObjectReader r(j, "solver");
    r.get("inner_tol", s.inner_tol);
    r.get("inner_max_iters", s.inner_max_iters);
    r.get("threads", s.threads);
    if (r.has("terminal")) {
        std::string t;
        r.get("terminal", t);
        if (t == "frozen_policy") s.terminal = TerminalCondition::frozen_policy;
        else if (t == "unit") s.terminal = TerminalCondition::unit;
        else throw ConfigError("solver.terminal: frozen_policy or unit");
    }
}

inline void read_sim(const nlohmann::json& j, SimConfig& s) {
    ObjectReader r(j, "sim");
    r.get("n_paths", s.n_paths);
    r.get("n_steps", s.n_steps);
    r.get("seed", s.seed);
    r.get("antithetic", s.antithetic);
    r.get("refine_tail", s.refine_tail);
    r.get("block_size", s.block_size);
    r.get("record_paths", s.record_paths);
}

inline void read_verify(const nlohmann::json& j, VerifySettings& v) {
    ObjectReader r(j, "verify");
    r.get("x0", v.x0);
    r.get("probe_t", v.probe_t);
    r.get("probe_exp_y", v.probe_exp_y);
    r.get("g_paths", v.g_paths);
    r.get("reward_gh_order", v.reward_gh_order);
    r.get("reward_paths", v.reward_paths);
    r.get("reward_t", v.reward_t);
    r.get("reward_exp_y", v.reward_exp_y);
    r.get("spike_deltas", v.spike_deltas);
    r.get("spike_offsets", v.spike_offsets);
    r.get("spike_t", v.spike_t);
    r.get("spike_exp_y", v.spike_exp_y);
    r.get("spike_paths", v.spike_paths);
    r.get("residual_rms_tol", v.residual_rms_tol);
    if (r.has("policy")) {
        std::string p;
        r.get("policy", p);
        if (p == "solved") v.policy = VerifiedPolicy::solved;
        else if (p == "frozen_gamma_myopic") v.policy = VerifiedPolicy::frozen_gamma_myopic;
        else throw ConfigError("verify.policy: solved or frozen_gamma_myopic");
    }
}

inline void read_output(const nlohmann::json& j, OutputSettings& o) {
    ObjectReader r(j, "output");
    r.get("dir", o.dir);
    r.get("surface_format", o.surface_format);
    r.get("grids", o.grids);
}

}  // namespace detail

/// Parses a run configuration; unknown keys anywhere are an error.
inline RunConfig parse_config(const nlohmann::json& j) {
    RunConfig c;
    {
        detail::ObjectReader r(j, "config");
        if (r.has("model")) detail::read_model(r.child("model"), c.model);
        if (r.has("grid")) detail::read_grid(r.child("grid"), c.grid);
        if (r.has("fixed_point")) detail::read_fixed_point(r.child("fixed_point"), c.fixed_point);
        if (r.has("solver")) detail::read_solver(r.child("solver"), c.solver);
        if (r.has("sim")) detail::read_sim(r.child("sim"), c.sim);
        if (r.has("verify")) detail::read_verify(r.child("verify"), c.verify);
        if (r.has("output")) detail::read_output(r.child("output"), c.output);
        if (r.has("table")) {
            detail::ObjectReader t(r.child("table"), "table");
            t.get("block", c.table_block);
        }
        if (r.has("probes")) {
            const nlohmann::json& arr = r.child("probes");
            if (!arr.is_array()) throw ConfigError("probes: expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                detail::ObjectReader pr(arr[i], "probes[" + std::to_string(i) + "]");
                ProbePoint q;
                pr.get("t", q.t);
                const bool has_e = pr.has("exp_y");
                const bool has_y = pr.has("y");
                if (has_e == has_y) throw ConfigError("probes[" + std::to_string(i) + "]: give exactly one of exp_y, y");
                if (has_e) {
                    pr.get("exp_y", q.exp_y);
                } else {
                    double y = 0.0;
                    pr.get("y", y);
                    q.exp_y = std::exp(y);
                }
                c.probes.push_back(q);
            }
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

}  // namespace prefhedge
