#pragma once

// Latent-interest dynamics and the solvers that integrate them.
//
// Every solver runs on an autodiff Tape, so gradients reach the initial state
// and the dynamics parameters by backpropagating through the unrolled steps.
// Value-level wrappers (solve_trajectory / extend_trajectory over Tensors)
// build a throwaway tape and read the states back.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dts/autodiff.hpp"
#include "dts/error.hpp"
#include "dts/random.hpp"

namespace dts::ode {

using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Method { euler, rk4, rk4_adaptive };

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::rk4_adaptive: return "rk4_adaptive";
    }
    return "?";
}

inline Method method_from_string(const std::string& s)
{
    if (s == "euler") return Method::euler;
    if (s == "rk4") return Method::rk4;
    if (s == "rk4_adaptive") return Method::rk4_adaptive;
    throw UsageError("unknown solver method '" + s + "'");
}

struct SolverConfig {
    Method method = Method::rk4;
    int substeps_per_unit = 4; // fixed-step methods
    double rtol = 1e-6;        // rk4_adaptive
    double atol = 1e-8;
    int max_steps = 10000;

    void validate() const
    {
        if (substeps_per_unit < 1) throw UsageError("solver: substeps_per_unit must be >= 1");
        if (!(rtol > 0) || !(atol > 0)) throw UsageError("solver: rtol and atol must be positive");
        if (max_steps < 1) throw UsageError("solver: max_steps must be >= 1");
    }

    bool fixed_step() const noexcept { return method != Method::rk4_adaptive; }
};

enum class DynamicsKind { simple, complex };

inline std::string to_string(DynamicsKind k) { return k == DynamicsKind::simple ? "simple" : "complex"; }

/// Bias that pins the complex field's outer sigmoid near zero at safe start.
inline constexpr double complex_rest_bias = -30.0;

/// Right-hand side f of dz/dt = f(z, t).
///
/// Simple:  f = alpha, a constant drift vector.
/// Complex: f(z) = sigmoid(w2 · sigmoid(w1 · z + b1) + b2), so every
///          coordinate of f lies in (0, 1).
struct Dynamics {
    DynamicsKind kind = DynamicsKind::complex;
    std::size_t dim = 36;
    std::size_t alpha = no_index, w1 = no_index, b1 = no_index, w2 = no_index, b2 = no_index;

    static constexpr std::size_t no_index = static_cast<std::size_t>(-1);

    static Dynamics create(ad::ParameterStore& store, const std::string& prefix, DynamicsKind kind, std::size_t dim,
                           Rng& rng)
    {
        Dynamics d;
        d.kind = kind;
        d.dim = dim;
        if (kind == DynamicsKind::simple) {
            d.alpha = store.add(prefix + ".alpha", init::zeros(dim));
        } else {
            d.w1 = store.add(prefix + ".w1", init::glorot(dim, dim, rng));
            d.b1 = store.add(prefix + ".b1", init::zeros(dim));
            d.w2 = store.add(prefix + ".w2", init::glorot(dim, dim, rng));
            d.b2 = store.add(prefix + ".b2", init::zeros(dim));
        }
        return d;
    }

    /// Zero trajectory from a zero start: alpha = 0, or w2 = 0 with a deeply
    /// negative b2 (an all-zero complex field would give f = 0.5 everywhere).
    void rest(ad::ParameterStore& store) const
    {
        auto fill = [&](std::size_t idx, double v) {
            auto vals = store.value(idx).values();
            std::fill(vals.begin(), vals.end(), v);
        };
        if (kind == DynamicsKind::simple) {
            fill(alpha, 0.0);
        } else {
            fill(w2, 0.0);
            fill(b2, complex_rest_bias);
        }
    }

    /// Parameter handles on one tape; callable as f(z, t).
    struct Bound {
        DynamicsKind kind;
        Var alpha, w1, b1, w2, b2;

        Var operator()(Var z, double /*t*/) const
        {
            if (kind == DynamicsKind::simple) return alpha;
            Var h = ad::sigmoid(ad::matmul(w1, z) + b1);
            return ad::sigmoid(ad::matmul(w2, h) + b2);
        }
    };

    Bound bind(Tape& tape, ad::ParameterStore& store) const
    {
        Bound b{kind, {}, {}, {}, {}, {}};
        if (kind == DynamicsKind::simple) {
            b.alpha = tape.param(store, alpha);
        } else {
            b.w1 = tape.param(store, w1);
            b.b1 = tape.param(store, b1);
            b.w2 = tape.param(store, w2);
            b.b2 = tape.param(store, b2);
        }
        return b;
    }
};

/// f(z, t) evaluated on values.
inline Tensor eval_dynamics(const Dynamics& dyn, ad::ParameterStore& store, const Tensor& z, double t)
{
    if (z.size() != dyn.dim) throw ShapeError("eval_dynamics: state has " + std::to_string(z.size()) + " entries, expected " + std::to_string(dyn.dim));
    Tape tape;
    auto f = dyn.bind(tape, store);
    return f(tape.constant(z), t).tensor();
}

template <class F>
Var euler_step(F&& f, Var z, double t, double h)
{
    return ad::add_scaled(z, f(z, t), h);
}

/// Classical fourth-order Runge-Kutta step.
template <class F>
Var rk4_step(F&& f, Var z, double t, double h)
{
    Var k1 = f(z, t);
    Var k2 = f(ad::add_scaled(z, k1, h / 2), t + h / 2);
    Var k3 = f(ad::add_scaled(z, k2, h / 2), t + h / 2);
    Var k4 = f(ad::add_scaled(z, k3, h), t + h);
    Var acc = ad::add_scaled(k1, k2, 2.0);
    acc = ad::add_scaled(acc, k3, 2.0);
    acc = acc + k4;
    return ad::add_scaled(z, acc, h / 6);
}

/// Number of equal substeps a fixed-step method takes across `span`.
inline int fixed_substeps(double span, int substeps_per_unit)
{
    return std::max(1, static_cast<int>(std::ceil(span * substeps_per_unit)));
}

/// Integrates z from `from` to `to`. Returns z itself when the interval is empty.
/// `steps` accumulates solver step attempts (used against max_steps).
template <class F>
Var integrate(F&& f, Var z, double from, double to, const SolverConfig& cfg, int& steps)
{
    const double span = to - from;
    if (span == 0.0) return z;
    if (span < 0.0) throw UsageError("integrate: end time precedes start time");

    if (cfg.fixed_step()) {
        const int n = fixed_substeps(span, cfg.substeps_per_unit);
        const double h = span / n;
        for (int i = 0; i < n; ++i) {
            const double t = from + i * h;
            z = cfg.method == Method::euler ? euler_step(f, z, t, h) : rk4_step(f, z, t, h);
        }
        steps += n;
        return z;
    }

    // step doubling: one step of h against two of h/2
    Tape& tape = *z.tape;
    double t = from;
    double h = span;
    while (t < to) {
        const bool last = h >= to - t;
        const double step = last ? to - t : h;
        if (++steps > cfg.max_steps) {
            throw NumericError("rk4_adaptive: exceeded max_steps=" + std::to_string(cfg.max_steps));
        }
        const auto m = tape.mark();
        Var full = rk4_step(f, z, t, step);
        Var half = rk4_step(f, z, t, step / 2);
        Var fine = rk4_step(f, half, t + step / 2, step / 2);

        double err = 0.0, zmax = 0.0;
        auto a = full.value(), b = fine.value(), cur = z.value();
        for (std::size_t i = 0; i < a.size(); ++i) {
            err = std::max(err, std::abs(a[i] - b[i]));
            zmax = std::max(zmax, std::abs(cur[i]));
        }
        if (!std::isfinite(err)) throw NumericError("rk4_adaptive: non-finite error estimate");
        if (err <= cfg.atol + cfg.rtol * zmax) {
            z = fine;
            t = last ? to : t + step;
            h = step * 1.5;
        } else {
            tape.rewind(m);
            h = step / 2;
            if (h <= std::abs(span) * 1e-14) throw NumericError("rk4_adaptive: step size underflow");
        }
    }
    return z;
}

/// States at requested times, kept on the tape that produced them.
struct TrajectoryVars {
    double t0 = 0.0;
    Var z0;
    std::vector<double> times;
    std::vector<Var> states;
    int steps = 0;

    double last_time() const { return times.empty() ? t0 : times.back(); }
    Var last_state() const { return states.empty() ? z0 : states.back(); }
};

inline void check_sorted(std::span<const double> times, double start, const char* who)
{
    double prev = start;
    for (double t : times) {
        if (!std::isfinite(t)) throw UsageError(std::string(who) + ": non-finite time");
        if (t < prev) throw UsageError(std::string(who) + ": times must be ascending and not precede the start time");
        prev = t;
    }
}

/// Continues integration from the last stored state through `new_times`.
template <class F>
void extend_trajectory(TrajectoryVars& traj, F&& f, const SolverConfig& cfg, std::span<const double> new_times)
{
    check_sorted(new_times, traj.last_time(), "extend_trajectory");
    for (double t : new_times) {
        Var z = integrate(f, traj.last_state(), traj.last_time(), t, cfg, traj.steps);
        traj.times.push_back(t);
        traj.states.push_back(z);
    }
}

/// Integrates from (t0, z0) and emits the state at every requested time.
template <class F>
TrajectoryVars solve_trajectory(F&& f, Var z0, double t0, std::span<const double> times, const SolverConfig& cfg)
{
    cfg.validate();
    check_sorted(times, t0, "solve_trajectory");
    TrajectoryVars traj;
    traj.t0 = t0;
    traj.z0 = z0;
    traj.times.reserve(times.size());
    traj.states.reserve(times.size());
    extend_trajectory(traj, f, cfg, times);
    return traj;
}

/// Closed form for a constant field: z(t) = z0 + alpha·(t − t0).
inline TrajectoryVars simple_trajectory(Var alpha, Var z0, double t0, std::span<const double> times)
{
    check_sorted(times, t0, "simple_trajectory");
    TrajectoryVars traj;
    traj.t0 = t0;
    traj.z0 = z0;
    for (double t : times) {
        traj.times.push_back(t);
        traj.states.push_back(t == t0 ? z0 : ad::add_scaled(z0, alpha, t - t0));
    }
    return traj;
}

/// Appends closed-form states measured from the trajectory origin.
inline void extend_simple(TrajectoryVars& traj, Var alpha, std::span<const double> new_times)
{
    check_sorted(new_times, traj.last_time(), "extend_trajectory");
    for (double t : new_times) {
        traj.times.push_back(t);
        traj.states.push_back(t == traj.t0 ? traj.z0 : ad::add_scaled(traj.z0, alpha, t - traj.t0));
    }
}

/// Value-level trajectory.
struct Trajectory {
    double t0 = 0.0;
    Tensor z0;
    std::vector<double> times;
    std::vector<Tensor> states;
};

inline Trajectory snapshot(const TrajectoryVars& tv)
{
    Trajectory out;
    out.t0 = tv.t0;
    out.z0 = tv.z0.tensor();
    out.times = tv.times;
    for (const auto& s : tv.states) out.states.push_back(s.tensor());
    return out;
}

inline Trajectory solve_trajectory(const Dynamics& dyn, ad::ParameterStore& store, const Tensor& z0, double t0,
                                   std::span<const double> times, const SolverConfig& cfg)
{
    if (z0.size() != dyn.dim) throw ShapeError("solve_trajectory: initial state dimension mismatch");
    Tape tape;
    auto f = dyn.bind(tape, store);
    return snapshot(solve_trajectory(f, tape.constant(z0), t0, times, cfg));
}

inline Trajectory extend_trajectory(const Trajectory& traj, const Dynamics& dyn, ad::ParameterStore& store,
                                    const SolverConfig& cfg, std::span<const double> new_times)
{
    cfg.validate();
    Tape tape;
    auto f = dyn.bind(tape, store);
    TrajectoryVars tv;
    tv.t0 = traj.t0;
    tv.z0 = tape.constant(traj.z0);
    tv.times = traj.times;
    for (const auto& s : traj.states) tv.states.push_back(tape.constant(s));
    extend_trajectory(tv, f, cfg, new_times);
    return snapshot(tv);
}

} // namespace dts::ode
