/// @file harness.hpp Experiment configurations, runners, parameter sweeps,
/// and cost benchmarks behind the command-line tool: assembles the synthetic
/// data, drives the configured estimators, and writes CSV/JSON/SVG outputs.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lock/datagen.hpp"
#include "lock/emkf.hpp"
#include "lock/linalg.hpp"
#include "lock/llock.hpp"
#include "lock/lock.hpp"
#include "lock/metrics.hpp"
#include "lock/slock.hpp"
#include "lock/ssm.hpp"

namespace lock {

// --- configuration -------------------------------------------------------------

enum class ExperimentKind {
    Dom1,  // damped oscillation, constant coefficients, exact initial operator
    Dom2,  // as Dom1 with the initial operator drawn around the truth (sd 1.0)
    Dom3,  // ramped coefficients, exact initial operator
    Dom4,  // ramped coefficients, initial operator sd 1.0
    Dom5,  // ramped coefficients, initial operator sd 0.01
    ObjectMoving,
    GlobalFlow,
    LocalStationary,
};

enum class Method { Kf, Emkf, Lock, Llock, Slock };

inline std::string kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::Dom1: return "dom-1";
        case ExperimentKind::Dom2: return "dom-2";
        case ExperimentKind::Dom3: return "dom-3";
        case ExperimentKind::Dom4: return "dom-4";
        case ExperimentKind::Dom5: return "dom-5";
        case ExperimentKind::ObjectMoving: return "object-moving";
        case ExperimentKind::GlobalFlow: return "global-flow";
        case ExperimentKind::LocalStationary: return "local-stationary";
    }
    throw std::logic_error("kind_name: unreachable");
}

inline ExperimentKind parse_kind(const std::string& s) {
    for (ExperimentKind k :
         {ExperimentKind::Dom1, ExperimentKind::Dom2, ExperimentKind::Dom3,
          ExperimentKind::Dom4, ExperimentKind::Dom5, ExperimentKind::ObjectMoving,
          ExperimentKind::GlobalFlow, ExperimentKind::LocalStationary})
        if (kind_name(k) == s) return k;
    throw std::invalid_argument("kind: unknown experiment kind '" + s + "'");
}

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Kf: return "kf";
        case Method::Emkf: return "emkf";
        case Method::Lock: return "lock";
        case Method::Llock: return "llock";
        case Method::Slock: return "slock";
    }
    throw std::logic_error("method_name: unreachable");
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::Kf, Method::Emkf, Method::Lock, Method::Llock, Method::Slock})
        if (method_name(m) == s) return m;
    throw std::invalid_argument("methods: unknown method '" + s + "'");
}

/// Everything a run needs: the experiment family, the estimators to apply,
/// their shared parameters, and where results go. Validation failures name
/// the offending field.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Dom1;
    std::vector<Method> methods{Method::Lock};

    int tau = 4;            // frames between operator updates
    double eta = 0.6;       // learning rate of the blend
    double c = 0.5;         // cutoff distance of the crop
    int d = 1;              // adjacency distance (grid methods)
    int iterations = 5;     // EM sweeps per update

    Eigen::Index t_end = 100;
    Eigen::Index prediction_cutoff = -1;  // score forecasts after this step; -1 = off

    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "out";
    bool svg = false;  // also render per-seed line plots

    // Oscillator runs keep the data start and the filter prior apart on
    // purpose (the model is initialized off the truth); the filter also gets
    // the perturbed operator when f0_sd > 0.
    Vector truth_x0 = (Vector(2) << 5.0, 0.0).finished();
    Vector filter_x0 = (Vector(2) << 6.0, 0.0).finished();
    double f0_sd = 0.0;

    // Grid runs fill the filter's initial state with the background value.
    double background = 20.0;

    bool is_dom() const {
        switch (kind) {
            case ExperimentKind::Dom1:
            case ExperimentKind::Dom2:
            case ExperimentKind::Dom3:
            case ExperimentKind::Dom4:
            case ExperimentKind::Dom5: return true;
            default: return false;
        }
    }

    void validate() const {
        if (methods.empty()) throw std::invalid_argument("methods: at least one required");
        for (std::size_t i = 0; i < methods.size(); ++i)
            for (std::size_t j = i + 1; j < methods.size(); ++j)
                if (methods[i] == methods[j])
                    throw std::invalid_argument("methods: duplicate entry '" +
                                                method_name(methods[i]) + "'");
        for (Method m : methods)
            if ((m == Method::Llock || m == Method::Slock) && is_dom())
                throw std::invalid_argument(
                    "methods: llock/slock need a grid experiment");
        if (tau < 1) throw std::invalid_argument("tau: must be >= 1");
        if (eta < 0.0 || eta > 1.0)
            throw std::invalid_argument("eta: must lie in [0, 1]");
        for (Method m : methods)
            if (m == Method::Emkf && !(eta > 0.0))
                throw std::invalid_argument("eta: emkf requires eta in (0, 1]");
        if (!(c > 0.0)) throw std::invalid_argument("c: must be positive");
        if (d < 0) throw std::invalid_argument("d: must be >= 0");
        if (iterations < 1) throw std::invalid_argument("iterations: must be >= 1");
        if (t_end < 2) throw std::invalid_argument("t_end: must be >= 2");
        if (prediction_cutoff != -1 &&
            (prediction_cutoff < 1 || prediction_cutoff > t_end - 2))
            throw std::invalid_argument(
                "prediction_cutoff: must lie in [1, t_end - 2] or be -1");
        if (seeds.empty()) throw std::invalid_argument("seeds: at least one required");
        if (out_dir.empty()) throw std::invalid_argument("out_dir: must not be empty");
        if (truth_x0.size() != 2)
            throw std::invalid_argument("truth_x0: must have 2 entries");
        if (filter_x0.size() != 2)
            throw std::invalid_argument("filter_x0: must have 2 entries");
        if (f0_sd < 0.0) throw std::invalid_argument("f0_sd: must be >= 0");
    }
};

inline ExperimentConfig default_config(ExperimentKind kind) {
    ExperimentConfig cfg;
    cfg.kind = kind;
    const auto hundred_seeds = [] {
        std::vector<std::uint64_t> s(100);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = i + 1;
        return s;
    };
    switch (kind) {
        case ExperimentKind::Dom1:
        case ExperimentKind::Dom2:
        case ExperimentKind::Dom3:
        case ExperimentKind::Dom4:
        case ExperimentKind::Dom5:
            cfg.methods = {Method::Lock, Method::Emkf};
            cfg.tau = 4;
            cfg.c = 0.5;
            cfg.iterations = 5;
            cfg.t_end = 100;
            cfg.eta = (kind == ExperimentKind::Dom1 || kind == ExperimentKind::Dom2)
                          ? 0.6
                          : 0.8;
            if (kind == ExperimentKind::Dom2 || kind == ExperimentKind::Dom4)
                cfg.f0_sd = 1.0;
            if (kind == ExperimentKind::Dom5) cfg.f0_sd = 0.01;
            if (kind != ExperimentKind::Dom1 && kind != ExperimentKind::Dom3)
                cfg.seeds = hundred_seeds();
            break;
        case ExperimentKind::ObjectMoving:
            cfg.methods = {Method::Slock, Method::Kf};
            cfg.tau = 1;
            cfg.eta = 1.0;
            cfg.c = 1.0;
            cfg.d = 1;
            cfg.t_end = 100;
            break;
        case ExperimentKind::GlobalFlow:
            cfg.methods = {Method::Llock, Method::Kf};
            cfg.tau = 50;
            cfg.eta = 0.8;
            cfg.c = 1.0;
            cfg.d = 1;
            cfg.t_end = 250;
            cfg.prediction_cutoff = 200;
            break;
        case ExperimentKind::LocalStationary:
            cfg.methods = {Method::Llock, Method::Kf};
            cfg.tau = 50;
            cfg.eta = 0.6;
            cfg.c = 1.0;
            cfg.d = 1;
            cfg.t_end = 1000;
            cfg.prediction_cutoff = 500;
            break;
    }
    return cfg;
}

// --- configuration <-> JSON -----------------------------------------------------

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["kind"] = kind_name(cfg.kind);
    std::vector<std::string> methods;
    for (Method m : cfg.methods) methods.push_back(method_name(m));
    j["methods"] = methods;
    j["tau"] = cfg.tau;
    j["eta"] = cfg.eta;
    j["c"] = cfg.c;
    j["d"] = cfg.d;
    j["iterations"] = cfg.iterations;
    j["t_end"] = cfg.t_end;
    j["prediction_cutoff"] = cfg.prediction_cutoff;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    j["svg"] = cfg.svg;
    j["truth_x0"] = std::vector<double>{cfg.truth_x0[0], cfg.truth_x0[1]};
    j["filter_x0"] = std::vector<double>{cfg.filter_x0[0], cfg.filter_x0[1]};
    j["f0_sd"] = cfg.f0_sd;
    j["background"] = cfg.background;
    return j;
}

/// Builds a config from JSON: the kind's defaults first, then every present
/// key overrides. Unknown keys and wrong types are errors naming the key.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: not a JSON object");
    if (!j.contains("kind")) throw std::invalid_argument("kind: missing");
    ExperimentConfig cfg;
    try {
        cfg = default_config(parse_kind(j.at("kind").get<std::string>()));
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("kind: must be a string");
    }
    const auto x0_from = [](const nlohmann::json& v, const char* key) {
        const auto a = v.get<std::vector<double>>();
        if (a.size() != 2)
            throw std::invalid_argument(std::string(key) + ": must have 2 entries");
        return (Vector(2) << a[0], a[1]).finished();
    };
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "kind") {
                continue;
            } else if (key == "methods") {
                cfg.methods.clear();
                for (const auto& name : value.get<std::vector<std::string>>())
                    cfg.methods.push_back(parse_method(name));
            } else if (key == "method") {
                cfg.methods = {parse_method(value.get<std::string>())};
            } else if (key == "tau") {
                cfg.tau = value.get<int>();
            } else if (key == "eta") {
                cfg.eta = value.get<double>();
            } else if (key == "c") {
                cfg.c = value.get<double>();
            } else if (key == "d") {
                cfg.d = value.get<int>();
            } else if (key == "iterations") {
                cfg.iterations = value.get<int>();
            } else if (key == "t_end") {
                cfg.t_end = value.get<Eigen::Index>();
            } else if (key == "prediction_cutoff") {
                cfg.prediction_cutoff = value.get<Eigen::Index>();
            } else if (key == "seeds") {
                cfg.seeds = value.get<std::vector<std::uint64_t>>();
            } else if (key == "out_dir") {
                cfg.out_dir = value.get<std::string>();
            } else if (key == "svg") {
                cfg.svg = value.get<bool>();
            } else if (key == "truth_x0") {
                cfg.truth_x0 = x0_from(value, "truth_x0");
            } else if (key == "filter_x0") {
                cfg.filter_x0 = x0_from(value, "filter_x0");
            } else if (key == "f0_sd") {
                cfg.f0_sd = value.get<double>();
            } else if (key == "background") {
                cfg.background = value.get<double>();
            } else {
                throw std::invalid_argument(key + ": unknown config key");
            }
        } catch (const nlohmann::json::exception&) {
            throw std::invalid_argument(key + ": wrong type");
        }
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

// --- data assembly ---------------------------------------------------------------

/// A seeded dataset plus the state-space model the estimators start from and
/// the reference operator (in effect for the step t -> t+1) they are scored
/// against.
struct ExperimentData {
    FrameSequence frames;
    LinearGaussianSSM model;
    std::function<Matrix(Eigen::Index)> f_true;
};

inline DampedOscillationParams dom_params(const ExperimentConfig& cfg) {
    DampedOscillationParams p;
    p.x0 = cfg.truth_x0;
    p.t_end = cfg.t_end;
    if (cfg.kind == ExperimentKind::Dom3 || cfg.kind == ExperimentKind::Dom4 ||
        cfg.kind == ExperimentKind::Dom5) {
        p.k = linear_ramp(0.35, 0.65, cfg.t_end);
        p.r = linear_ramp(0.67, 0.37, cfg.t_end);
    }
    return p;
}

namespace detail {
inline void init_grid_model(LinearGaussianSSM& model, Eigen::Index l, double background) {
    model.F = Matrix::Identity(l, l);
    model.H = Matrix::Identity(l, l);
    model.Q = 0.2 * 0.2 * Matrix::Identity(l, l);
    model.R = 0.2 * 0.2 * Matrix::Identity(l, l);
    model.x0 = Vector::Constant(l, background);
    model.V0 = Matrix::Identity(l, l);
}
}  // namespace detail

/// Sub-streams per seed: stream 1 feeds the generator, stream 2 the initial
/// operator perturbation — changing one never shifts the other.
inline ExperimentData make_experiment_data(const ExperimentConfig& cfg,
                                           std::uint64_t seed) {
    ExperimentData data;
    const std::uint64_t data_seed = derive_seed(seed, 1);
    switch (cfg.kind) {
        case ExperimentKind::Dom1:
        case ExperimentKind::Dom2:
        case ExperimentKind::Dom3:
        case ExperimentKind::Dom4:
        case ExperimentKind::Dom5: {
            const DampedOscillationParams p = dom_params(cfg);
            data.frames = gen_damped_oscillation(p, data_seed);
            Matrix f0 = true_transition(p, 0);
            if (cfg.f0_sd > 0.0) {
                CounterRng rng(derive_seed(seed, 2));
                for (Eigen::Index i = 0; i < 2; ++i)
                    for (Eigen::Index j = 0; j < 2; ++j)
                        f0(i, j) += rng.normal(0.0, cfg.f0_sd);
            }
            data.model.F = f0;
            data.model.H = Matrix::Identity(2, 2);
            data.model.Q = Matrix::Zero(2, 2);
            data.model.Q(1, 1) = 0.01 * 0.01 * (p.dt / p.mass) * (p.dt / p.mass);
            data.model.R = 0.2 * 0.2 * Matrix::Identity(2, 2);
            data.model.x0 = cfg.filter_x0;
            data.model.V0 = Matrix::Identity(2, 2);
            data.f_true = [p](Eigen::Index t) { return true_transition(p, t); };
            break;
        }
        case ExperimentKind::ObjectMoving: {
            ObjectMovingParams p;
            p.t_end = cfg.t_end;
            p.background = cfg.background;
            const DirectionSchedule schedule = default_object_moving_schedule(cfg.t_end);
            data.frames = gen_object_moving(data_seed, schedule, p);
            detail::init_grid_model(data.model, p.grid.cells(), cfg.background);
            data.f_true = [grid = p.grid, schedule](Eigen::Index t) {
                return true_transition_at(grid, schedule, t);
            };
            break;
        }
        case ExperimentKind::GlobalFlow: {
            GlobalFlowParams p;
            p.t_end = cfg.t_end;
            p.background = cfg.background;
            const DirectionSchedule schedule = default_global_flow_schedule(cfg.t_end);
            data.frames = gen_global_flow(data_seed, schedule, p);
            detail::init_grid_model(data.model, p.grid.cells(), cfg.background);
            data.f_true = [grid = p.grid, schedule](Eigen::Index t) {
                return true_transition_at(grid, schedule, t);
            };
            break;
        }
        case ExperimentKind::LocalStationary: {
            LocalStationaryFlowParams p;
            p.t_end = cfg.t_end;
            p.background = cfg.background;
            data.frames = gen_local_stationary_flow(data_seed, p);
            detail::init_grid_model(data.model, p.field().cells(), cfg.background);
            Matrix f = local_stationary_true_transition(p);
            data.f_true = [f = std::move(f)](Eigen::Index) { return f; };
            break;
        }
    }
    data.model.validate();
    return data;
}

// --- per-seed execution ---------------------------------------------------------

/// One estimator's trace through a run: filtered states plus the operator in
/// effect over time (time 0 carries the initial operator, then one snapshot
/// per update).
struct MethodTrace {
    std::vector<FilterState> states;
    std::vector<Eigen::Index> times;
    std::vector<SparseMatrix> operators;
};

namespace detail {

inline MethodTrace run_method(const ExperimentConfig& cfg, const ExperimentData& data,
                              Method m) {
    const std::vector<Vector> obs = data.frames.observation_vectors();
    KfOptions kf_opts;
    kf_opts.keep_covariances = false;  // states feed metrics only

    MethodTrace out;
    out.times.push_back(0);
    out.operators.push_back(data.model.F.sparseView());
    switch (m) {
        case Method::Kf: {
            out.states = kf_run(data.model, obs, kf_opts);
            break;
        }
        case Method::Lock: {
            LockConfig lc;
            lc.tau = cfg.tau;
            lc.eta = cfg.eta;
            lc.c = cfg.c;
            lc.kf = kf_opts;
            LockResult r = lock_run(data.model, obs, lc);
            out.states = std::move(r.states);
            for (std::size_t i = 0; i < r.f_history.size(); ++i) {
                out.times.push_back(r.update_times[i]);
                out.operators.push_back(r.f_history[i].sparseView());
            }
            break;
        }
        case Method::Emkf: {
            EmkfConfig ec;
            ec.tau = cfg.tau;
            ec.iterations = cfg.iterations;
            ec.eta = cfg.eta;
            ec.c = cfg.c;
            ec.kf = kf_opts;
            EmkfResult r = emkf_run(data.model, obs, ec);
            out.states = std::move(r.states);
            for (std::size_t i = 0; i < r.f_history.size(); ++i) {
                out.times.push_back(r.updates[i].t);
                out.operators.push_back(r.f_history[i].sparseView());
            }
            break;
        }
        case Method::Llock: {
            LockConfig lc;
            lc.tau = cfg.tau;
            lc.eta = cfg.eta;
            lc.c = cfg.c;
            lc.kf = kf_opts;
            SparseLockResult r = llock_run(data.model, obs, data.frames.grid, cfg.d, lc);
            out.states = std::move(r.states);
            for (std::size_t i = 0; i < r.f_history.size(); ++i) {
                out.times.push_back(r.update_times[i]);
                out.operators.push_back(std::move(r.f_history[i]));
            }
            break;
        }
        case Method::Slock: {
            LockConfig lc;
            lc.tau = cfg.tau;
            lc.eta = cfg.eta;
            lc.c = cfg.c;
            lc.kf = kf_opts;
            const ParameterMap map = build_parameter_map(data.frames.grid, cfg.d);
            SparseLockResult r = slock_run(data.model, obs, map, lc);
            out.states = std::move(r.states);
            for (std::size_t i = 0; i < r.f_history.size(); ++i) {
                out.times.push_back(r.update_times[i]);
                out.operators.push_back(std::move(r.f_history[i]));
            }
            break;
        }
    }
    return out;
}

/// Support the operator error is averaged over: the method's structural
/// support on grids, every entry otherwise.
inline Matrix method_mask(const ExperimentConfig& cfg, const ExperimentData& data,
                          Method m) {
    const Eigen::Index l = data.model.state_dim();
    if (m == Method::Llock) return build_adjacency(data.frames.grid, cfg.d).dense();
    if (m == Method::Slock) {
        const ParameterMap map = build_parameter_map(data.frames.grid, cfg.d);
        Matrix mask = Matrix::Zero(l, l);
        for (Eigen::Index i = 0; i < l; ++i)
            for (Eigen::Index j = 0; j < l; ++j)
                if (map.p(i, j) > 0) mask(i, j) = 1.0;
        return mask;
    }
    return Matrix::Ones(l, l);
}

}  // namespace detail

/// A per-update curve whose steps are not contiguous (one value per operator
/// snapshot, at the snapshot's time).
struct OperatorSeries {
    std::string label;
    std::vector<Eigen::Index> times;
    std::vector<double> values;
};

/// The operator snapshots of one method, kept for serialization.
struct OperatorTrajectory {
    std::string method;
    std::vector<Eigen::Index> times;
    std::vector<SparseMatrix> operators;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<MetricSeries> step_series;          // per-step state error curves
    std::vector<OperatorSeries> operator_series;    // per-update operator error curves
    std::vector<OperatorTrajectory> trajectories;   // raw operator snapshots
    std::map<std::string, double> scalars;          // time-averaged summaries
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedResult> seeds;
    /// label -> {mean, median, q25, q75, min, max} over seeds.
    std::map<std::string, std::map<std::string, double>> stats;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

inline SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const ExperimentData data = make_experiment_data(cfg, seed);
    const Matrix& truth = data.frames.truth;

    SeedResult sr;
    sr.seed = seed;
    sr.step_series.push_back(
        state_rmse_series(truth, data.frames.observed, "rmse_observation"));
    sr.scalars["time_avg_rmse_observation"] = series_mean(sr.step_series.back());

    bool frozen_recorded = false;
    for (Method m : cfg.methods) {
        const std::string name = method_name(m);
        MethodTrace trace = run_method(cfg, data, m);

        Matrix estimates(truth.rows(), truth.cols());
        for (Eigen::Index t = 0; t < truth.rows(); ++t)
            estimates.row(t) = trace.states[static_cast<std::size_t>(t)].x_filt.transpose();
        sr.step_series.push_back(state_rmse_series(truth, estimates, "rmse_" + name));
        sr.scalars["time_avg_rmse_" + name] = series_mean(sr.step_series.back());

        const Matrix mask = method_mask(cfg, data, m);
        OperatorSeries f_error{"f_error_" + name, {}, {}};
        OperatorSeries op_rmse{"srmse_" + name, {}, {}};
        OperatorSeries op_zero{"srmse_true_zero_" + name, {}, {}};
        for (std::size_t i = 0; i < trace.times.size(); ++i) {
            const Eigen::Index t = trace.times[i];
            const Matrix f_hat = Matrix(trace.operators[i]);
            const Matrix f_ref = data.f_true(t);
            f_error.times.push_back(t);
            f_error.values.push_back((f_hat - f_ref).norm());
            op_rmse.times.push_back(t);
            op_rmse.values.push_back(srmse(f_ref, f_hat, mask));
            const Matrix zero_mask = true_zero_mask(f_ref, mask);
            if (zero_mask.sum() > 0.0) {
                op_zero.times.push_back(t);
                op_zero.values.push_back(srmse(f_ref, f_hat, zero_mask));
            }
        }
        sr.scalars["initial_f_error_" + name] = f_error.values.front();
        sr.scalars["final_f_error_" + name] = f_error.values.back();
        sr.scalars["initial_srmse_" + name] = op_rmse.values.front();
        sr.scalars["final_srmse_" + name] = op_rmse.values.back();
        double sum = 0.0;
        for (double v : op_rmse.values) sum += v;
        sr.scalars["time_avg_srmse_" + name] =
            sum / static_cast<double>(op_rmse.values.size());
        sr.operator_series.push_back(std::move(f_error));
        sr.operator_series.push_back(std::move(op_rmse));
        if (!op_zero.values.empty()) sr.operator_series.push_back(std::move(op_zero));

        if (cfg.prediction_cutoff >= 0) {
            const Eigen::Index cut = cfg.prediction_cutoff;
            std::size_t last = 0;
            for (std::size_t i = 0; i < trace.times.size(); ++i)
                if (trace.times[i] <= cut) last = i;
            auto cmp = prediction_rmse(
                truth, Matrix(trace.operators[last]),
                trace.states[static_cast<std::size_t>(cut)].x_filt,
                data.frames.observed_at(cut), cut);
            cmp.rollout.label = "pred_rollout_" + name;
            sr.scalars["pred_avg_rollout_" + name] = series_mean(cmp.rollout);
            sr.step_series.push_back(std::move(cmp.rollout));
            if (!frozen_recorded) {
                cmp.frozen.label = "pred_frozen";
                sr.scalars["pred_avg_frozen"] = series_mean(cmp.frozen);
                sr.step_series.push_back(std::move(cmp.frozen));
                frozen_recorded = true;
            }
        }

        OperatorTrajectory traj;
        traj.method = name;
        traj.times = std::move(trace.times);
        traj.operators = std::move(trace.operators);
        sr.trajectories.push_back(std::move(traj));
    }
    return sr;
}

}  // namespace detail

/// Runs every seed of the configuration and aggregates; no files touched.
inline ExperimentResult compute_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult result;
    result.config = cfg;
    for (std::uint64_t seed : cfg.seeds)
        result.seeds.push_back(detail::run_seed(cfg, seed));

    for (const auto& [label, first_value] : result.seeds.front().scalars) {
        (void)first_value;
        std::vector<double> values;
        values.reserve(result.seeds.size());
        for (const auto& sr : result.seeds) values.push_back(sr.scalars.at(label));
        double sum = 0.0;
        for (double v : values) sum += v;
        auto& s = result.stats[label];
        s["mean"] = sum / static_cast<double>(values.size());
        s["median"] = detail::quantile(values, 0.5);
        s["q25"] = detail::quantile(values, 0.25);
        s["q75"] = detail::quantile(values, 0.75);
        s["min"] = *std::min_element(values.begin(), values.end());
        s["max"] = *std::max_element(values.begin(), values.end());
    }
    return result;
}

// --- plotting -------------------------------------------------------------------

/// Minimal self-contained SVG line plot of the given series (a convenience
/// view of the CSVs, not a primary output).
inline void save_plot_svg(const std::vector<MetricSeries>& series, std::ostream& out,
                          const std::string& title = "") {
    static const std::array<const char*, 8> palette = {
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
        "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            const double x = static_cast<double>(s.start) + static_cast<double>(i);
            if (!any) {
                xmin = xmax = x;
                ymin = ymax = s.values[i];
                any = true;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, s.values[i]);
                ymax = std::max(ymax, s.values[i]);
            }
        }
    if (!any) throw std::invalid_argument("save_plot_svg: no data");
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) {
        ymax += 1.0;
        ymin -= 1.0;
    }
    const double left = 64, right = 544, top = 40, bottom = 400;
    const auto sx = [&](double x) {
        return left + (x - xmin) / (xmax - xmin) * (right - left);
    };
    const auto sy = [&](double y) {
        return bottom - (y - ymin) / (ymax - ymin) * (bottom - top);
    };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"440\" "
           "viewBox=\"0 0 720 440\">\n"
        << "<rect width=\"720\" height=\"440\" fill=\"#ffffff\"/>\n";
    if (!title.empty())
        out << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" "
               "font-size=\"15\">"
            << title << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right
        << "\" y2=\"" << bottom << "\" stroke=\"#222\"/>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
        << "\" y2=\"" << bottom << "\" stroke=\"#222\"/>\n";
    out << std::setprecision(5);
    for (int i = 0; i <= 4; ++i) {
        const double v = ymin + (ymax - ymin) * i / 4.0;
        const double y = sy(v);
        out << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left
            << "\" y2=\"" << y << "\" stroke=\"#222\"/>\n"
            << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << v
            << "</text>\n";
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        out << "<text x=\"" << sx(xv) << "\" y=\"" << bottom + 16
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
            << xv << "</text>\n";
    }
    std::size_t color = 0;
    for (const auto& s : series) {
        if (s.values.empty()) continue;
        out << "<polyline fill=\"none\" stroke=\"" << palette[color % palette.size()]
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            if (i) out << ' ';
            out << sx(static_cast<double>(s.start) + static_cast<double>(i)) << ','
                << sy(s.values[i]);
        }
        out << "\"/>\n";
        const double ly = top + 18.0 * static_cast<double>(color);
        out << "<line x1=\"556\" y1=\"" << ly << "\" x2=\"580\" y2=\"" << ly
            << "\" stroke=\"" << palette[color % palette.size()]
            << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"586\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
            << "</text>\n";
        ++color;
    }
    out << "</svg>\n";
}

// --- serialization ---------------------------------------------------------------

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("out_dir: cannot open " + path.string());
    return out;
}

inline void write_operator_series(const std::vector<OperatorSeries>& series,
                                  std::ostream& out) {
    out << "t,label,value\n" << std::setprecision(17);
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.values.size(); ++i)
            out << s.times[i] << ',' << s.label << ',' << s.values[i] << '\n';
}

inline void write_operator_snapshots(const OperatorTrajectory& traj, std::ostream& out) {
    out << "t,i,j,value\n" << std::setprecision(17);
    for (std::size_t n = 0; n < traj.operators.size(); ++n)
        for (int k = 0; k < traj.operators[n].outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(traj.operators[n], k); it; ++it)
                out << traj.times[n] << ',' << it.row() << ',' << it.col() << ','
                    << it.value() << '\n';
}

}  // namespace detail

/// Writes per-seed CSVs, the aggregate/quantile CSVs, and a manifest that
/// pins the fully resolved configuration (reruns from the manifest reproduce
/// every byte of the CSVs).
inline void write_experiment_outputs(const ExperimentResult& result) {
    namespace fs = std::filesystem;
    const fs::path out_dir = result.config.out_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw std::runtime_error("out_dir: cannot create " + out_dir.string() + ": " +
                                 ec.message());

    std::vector<std::string> files;
    for (const auto& sr : result.seeds) {
        const fs::path seed_dir = out_dir / ("seed_" + std::to_string(sr.seed));
        fs::create_directories(seed_dir, ec);
        if (ec)
            throw std::runtime_error("out_dir: cannot create " + seed_dir.string() +
                                     ": " + ec.message());
        const std::string rel = "seed_" + std::to_string(sr.seed) + "/";
        {
            auto out = detail::open_out(seed_dir / "metrics.csv");
            save_metrics(sr.step_series, out);
            files.push_back(rel + "metrics.csv");
        }
        {
            auto out = detail::open_out(seed_dir / "operator_metrics.csv");
            detail::write_operator_series(sr.operator_series, out);
            files.push_back(rel + "operator_metrics.csv");
        }
        for (const auto& traj : sr.trajectories) {
            const std::string name = "operators_" + traj.method + ".csv";
            auto out = detail::open_out(seed_dir / name);
            detail::write_operator_snapshots(traj, out);
            files.push_back(rel + name);
        }
        if (result.config.svg) {
            auto out = detail::open_out(seed_dir / "metrics.svg");
            save_plot_svg(sr.step_series, out,
                          kind_name(result.config.kind) + " seed " +
                              std::to_string(sr.seed));
            files.push_back(rel + "metrics.svg");
        }
    }
    {
        auto out = detail::open_out(out_dir / "aggregate.csv");
        out << "label,seed,value\n" << std::setprecision(17);
        for (const auto& sr : result.seeds)
            for (const auto& [label, value] : sr.scalars)
                out << label << ',' << sr.seed << ',' << value << '\n';
        files.push_back("aggregate.csv");
    }
    {
        auto out = detail::open_out(out_dir / "quantiles.csv");
        out << "label,stat,value\n" << std::setprecision(17);
        static const std::array<const char*, 6> stat_order = {"mean", "median", "q25",
                                                              "q75",  "min",    "max"};
        for (const auto& [label, stats] : result.stats)
            for (const char* stat : stat_order)
                out << label << ',' << stat << ',' << stats.at(stat) << '\n';
        files.push_back("quantiles.csv");
    }
    {
        nlohmann::json manifest;
        manifest["format_version"] = 1;
        manifest["config"] = config_to_json(result.config);
        std::sort(files.begin(), files.end());
        manifest["files"] = files;
        auto out = detail::open_out(out_dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult result = compute_experiment(cfg);
    write_experiment_outputs(result);
    return result;
}

// --- parameter sweeps ------------------------------------------------------------

struct SweepGrid {
    std::vector<int> taus{25, 50, 100};
    std::vector<double> etas{0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> cs{0.25, 0.5, 1.0, 2.0};
    std::vector<int> ds{1, 2};

    std::size_t size() const { return taus.size() * etas.size() * cs.size() * ds.size(); }

    void validate() const {
        if (taus.empty()) throw std::invalid_argument("taus: must not be empty");
        if (etas.empty()) throw std::invalid_argument("etas: must not be empty");
        if (cs.empty()) throw std::invalid_argument("cs: must not be empty");
        if (ds.empty()) throw std::invalid_argument("ds: must not be empty");
    }
};

struct SweepRow {
    int tau = 0;
    double eta = 0.0;
    double c = 0.0;
    int d = 0;
    std::uint64_t seed = 0;
    double time_avg_rmse = 0.0;
    double time_avg_srmse = 0.0;
};

inline void save_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "tau,eta,c,d,seed,time_avg_rmse,time_avg_srmse\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.tau << ',' << r.eta << ',' << r.c << ',' << r.d << ',' << r.seed << ','
            << r.time_avg_rmse << ',' << r.time_avg_srmse << '\n';
}

/// Reruns the configuration's single method at every grid point and reports
/// per-seed time-averaged errors: one CSV row per (grid point, seed).
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                       const SweepGrid& grid) {
    base.validate();
    grid.validate();
    if (base.methods.size() != 1)
        throw std::invalid_argument("methods: sweep requires exactly one method");
    const std::string name = method_name(base.methods.front());

    std::vector<SweepRow> rows;
    for (int tau : grid.taus)
        for (double eta : grid.etas)
            for (double c : grid.cs)
                for (int d : grid.ds) {
                    ExperimentConfig cfg = base;
                    cfg.tau = tau;
                    cfg.eta = eta;
                    cfg.c = c;
                    cfg.d = d;
                    const ExperimentResult result = compute_experiment(cfg);
                    for (const auto& sr : result.seeds)
                        rows.push_back({tau, eta, c, d, sr.seed,
                                        sr.scalars.at("time_avg_rmse_" + name),
                                        sr.scalars.at("time_avg_srmse_" + name)});
                }

    namespace fs = std::filesystem;
    const fs::path out_dir = base.out_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw std::runtime_error("out_dir: cannot create " + out_dir.string() + ": " +
                                 ec.message());
    {
        auto out = detail::open_out(out_dir / "sweep.csv");
        save_sweep_csv(rows, out);
    }
    {
        nlohmann::json manifest;
        manifest["format_version"] = 1;
        manifest["config"] = config_to_json(base);
        manifest["grid"] = {{"taus", grid.taus},
                            {"etas", grid.etas},
                            {"cs", grid.cs},
                            {"ds", grid.ds}};
        manifest["files"] = {"sweep.csv"};
        auto out = detail::open_out(out_dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    return rows;
}

// --- cost benchmarks -------------------------------------------------------------

/// Wall time of one operator update at a given observation dimension, with
/// the memory footprint of the stored operator: the structural support needs
/// l·N_l float entries (N_l = (2d+1)² local dimension) against l² unrestricted.
struct CostReport {
    Eigen::Index l = 0;
    double seconds = 0.0;
    std::uint64_t ideal_bytes = 0;
    std::uint64_t adhoc_bytes = 0;
};

struct BenchConfig {
    std::vector<int> sizes{10, 20, 30};  // square grid edge lengths
    Method method = Method::Llock;
    int tau = 50;
    double eta = 0.8;
    double c = 1.0;
    int d = 1;
    std::uint64_t seed = 1;
    int repeats = 5;  // timings per size; the median is reported

    void validate() const {
        if (sizes.empty()) throw std::invalid_argument("sizes: must not be empty");
        if (method != Method::Llock && method != Method::Slock)
            throw std::invalid_argument("method: bench supports llock and slock");
        if (tau < 1) throw std::invalid_argument("tau: must be >= 1");
        if (eta < 0.0 || eta > 1.0)
            throw std::invalid_argument("eta: must lie in [0, 1]");
        if (!(c > 0.0)) throw std::invalid_argument("c: must be positive");
        if (d < 0) throw std::invalid_argument("d: must be >= 0");
        for (int s : sizes)
            if (s < 2 * d + 1)
                throw std::invalid_argument("sizes: grid edge must be at least 2d+1");
        if (repeats < 1) throw std::invalid_argument("repeats: must be >= 1");
    }
};

inline std::vector<CostReport> run_bench(const BenchConfig& cfg) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    std::vector<CostReport> reports;
    for (int edge : cfg.sizes) {
        const GridSpec grid(edge, edge);
        const Eigen::Index l = grid.cells();
        CounterRng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(edge)));
        ObservationWindow window(cfg.tau);
        for (int t = 0; t <= cfg.tau; ++t) {
            Vector frame(l);
            for (Eigen::Index i = 0; i < l; ++i) frame[i] = rng.normal(100.0, 20.0);
            window.push(frame);
        }

        std::vector<double> times;
        if (cfg.method == Method::Llock) {
            const LocalizationMatrix loc = build_adjacency(grid, cfg.d);
            const SparseMatrix f0 = sparse_on_support(loc.neighbors, Matrix::Identity(l, l));
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                const auto start = clock::now();
                const LocalGResult lg = local_g(loc, window);
                SparseMatrix f = f0;
                sparse_blend_update(f, lg.g_hat, cfg.eta, cfg.c);
                times.push_back(std::chrono::duration<double>(clock::now() - start).count());
            }
        } else {
            const ParameterMap map = build_parameter_map(grid, cfg.d);
            const SparseMatrix f0 =
                sparse_on_support(map.support_rows(), Matrix::Identity(l, l));
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                const auto start = clock::now();
                const Vector theta = estimate_theta_window(map, window);
                const SparseMatrix g_hat = theta_to_g_sparse(theta, map);
                SparseMatrix f = f0;
                sparse_blend_update(f, g_hat, cfg.eta, cfg.c);
                times.push_back(std::chrono::duration<double>(clock::now() - start).count());
            }
        }
        std::sort(times.begin(), times.end());

        const auto n_l = static_cast<std::uint64_t>(2 * cfg.d + 1) *
                         static_cast<std::uint64_t>(2 * cfg.d + 1);
        CostReport r;
        r.l = l;
        r.seconds = times[times.size() / 2];
        r.ideal_bytes = static_cast<std::uint64_t>(l) * n_l * 4;
        r.adhoc_bytes = static_cast<std::uint64_t>(l) * static_cast<std::uint64_t>(l) * 4;
        reports.push_back(r);
    }
    return reports;
}

inline void save_bench_csv(const std::vector<CostReport>& reports, std::ostream& out) {
    out << "l,seconds,ideal_bytes,adhoc_bytes\n" << std::setprecision(17);
    for (const auto& r : reports)
        out << r.l << ',' << r.seconds << ',' << r.ideal_bytes << ',' << r.adhoc_bytes
            << '\n';
}

}  // namespace lock
