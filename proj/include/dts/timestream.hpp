#pragma once

// The time-stream module: profile encoder g, latent ODE, decoder phi, additive
// fuse into behavior/target embeddings, guide loss, and the full forward pass
// wrapped around an unchanged base CTR model.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dts/autodiff.hpp"
#include "dts/basemodel.hpp"
#include "dts/data.hpp"
#include "dts/layers.hpp"
#include "dts/ode.hpp"

namespace dts::ts {

using ad::Tape;
using ad::Var;

inline constexpr std::size_t latent_dim = 36;
inline constexpr std::size_t decoder_hidden = 72;
inline constexpr std::size_t guide_dim = 18;
inline constexpr double default_lambda = 0.5;
inline constexpr double guide_dot_floor = 1e-6;
inline constexpr double phi_hidden_bias_sd = 0.1;

enum class DynamicsChoice { none, simple, complex };
enum class GuideMode { bpr, as_written, off };

inline std::string to_string(DynamicsChoice d)
{
    switch (d) {
    case DynamicsChoice::none: return "none";
    case DynamicsChoice::simple: return "simple";
    case DynamicsChoice::complex: return "complex";
    }
    return "?";
}

inline DynamicsChoice dynamics_from_string(const std::string& s)
{
    if (s == "none") return DynamicsChoice::none;
    if (s == "simple") return DynamicsChoice::simple;
    if (s == "complex") return DynamicsChoice::complex;
    throw UsageError("unknown dynamics '" + s + "' (expected none, simple or complex)");
}

inline std::string to_string(GuideMode g)
{
    switch (g) {
    case GuideMode::bpr: return "bpr";
    case GuideMode::as_written: return "as_written";
    case GuideMode::off: return "off";
    }
    return "?";
}

inline GuideMode guide_from_string(const std::string& s)
{
    if (s == "bpr") return GuideMode::bpr;
    if (s == "as_written") return GuideMode::as_written;
    if (s == "off") return GuideMode::off;
    throw UsageError("unknown guide mode '" + s + "' (expected bpr, as_written or off)");
}

struct TimeStreamParams {
    Linear g;         // profile → z0, no bias
    Linear phi1;      // 36 → 72
    PRelu phi_act;
    Linear phi2;      // 72 → 36
    Linear guide_fc;  // 36 → 18, shared by the three guide branches
    PRelu guide_act;

    static TimeStreamParams create(ad::ParameterStore& store, Rng& rng)
    {
        TimeStreamParams p;
        p.g = Linear::create(store, "timestream.g", base::profile_dim, latent_dim, false, rng);
        p.phi1 = Linear::create(store, "timestream.phi.layer1", latent_dim, decoder_hidden, true, rng);
        // nonzero hidden bias: with z = 0 at safe start a zero bias leaves the
        // hidden layer at 0 and no gradient reaches layer2's weights, g or f
        for (auto& b : store.value(p.phi1.bias).values()) b = rng.normal(0.0, phi_hidden_bias_sd);
        p.phi_act = PRelu::create(store, "timestream.phi.prelu");
        p.phi2 = Linear::create(store, "timestream.phi.layer2", decoder_hidden, base::behavior_dim, true, rng);
        p.guide_fc = Linear::create(store, "timestream.guide_fc", base::behavior_dim, guide_dim, true, rng);
        p.guide_act = PRelu::create(store, "timestream.guide_fc.prelu");
        return p;
    }
};

/// z0 = g · e^P
inline Var encode_initial(Tape& tape, ad::ParameterStore& store, const TimeStreamParams& ts, Var profile)
{
    if (profile.size() != base::profile_dim) throw ShapeError("encode_initial: profile embedding must have 36 entries");
    return ts.g(tape, store, profile);
}

/// phi(z) = layer2(PReLU(layer1(z)))
inline Var decode(Tape& tape, ad::ParameterStore& store, const TimeStreamParams& ts, Var z)
{
    if (z.size() != latent_dim) throw ShapeError("decode: latent state must have 36 entries");
    return ts.phi2(tape, store, ts.phi_act(tape, store, ts.phi1(tape, store, z)));
}

inline Var fuse(Var embedding, Var decoded)
{
    if (embedding.size() != decoded.size()) {
        throw ShapeError("fuse: dimension mismatch " + std::to_string(embedding.size()) + " vs " + std::to_string(decoded.size()));
    }
    return embedding + decoded;
}

/// Per-position guide terms from the dot products v·p and v·n, averaged.
///
/// as_written: −(1/M) Σ (v·p + v·n − log(v·p / v·n)), dots floored at 1e-6.
/// bpr:        −(1/M) Σ log sigmoid(v·p − v·n).
inline Var guide_from_dots(std::span<const Var> vp, std::span<const Var> vn, GuideMode mode)
{
    if (vp.empty() || vp.size() != vn.size()) throw ShapeError("guide_loss: positive and negative dot lists differ");
    Var total;
    for (std::size_t i = 0; i < vp.size(); ++i) {
        Var term;
        if (mode == GuideMode::bpr) {
            term = ad::log_sigmoid(vp[i] - vn[i]);
        } else {
            Var lp = ad::log(ad::clamp(vp[i], guide_dot_floor, std::numeric_limits<double>::infinity()));
            Var ln = ad::log(ad::clamp(vn[i], guide_dot_floor, std::numeric_limits<double>::infinity()));
            term = (vp[i] + vn[i]) - (lp - ln);
        }
        total = total.valid() ? total + term : term;
    }
    return ad::scale(total, -1.0 / static_cast<double>(vp.size()));
}

/// Guide loss over supervised positions i = 1..N−1: decoded[i] is phi(z_{t_i}),
/// next[i] is e_{i+1}, negatives[i] is a random item embedding. Returns an
/// invalid Var when there is nothing to supervise.
inline Var guide_loss(Tape& tape, ad::ParameterStore& store, const TimeStreamParams& ts, std::span<const Var> decoded,
                      std::span<const Var> next, std::span<const Var> negatives, GuideMode mode)
{
    if (mode == GuideMode::off || decoded.empty()) return {};
    if (decoded.size() != next.size() || decoded.size() != negatives.size()) {
        throw ShapeError("guide_loss: branch lists differ in length");
    }
    auto branch = [&](Var x) { return ts.guide_act(tape, store, ts.guide_fc(tape, store, x)); };
    std::vector<Var> vp, vn;
    vp.reserve(decoded.size());
    vn.reserve(decoded.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        Var v = branch(decoded[i]);
        vp.push_back(ad::dot(v, branch(next[i])));
        vn.push_back(ad::dot(v, branch(negatives[i])));
    }
    return guide_from_dots(vp, vn, mode);
}

/// target + lambda · guide
inline Var total_loss(Var target, Var guide, double lambda = default_lambda)
{
    if (!guide.valid() || lambda == 0.0) return target;
    return ad::add_scaled(target, guide, lambda);
}

struct ModelConfig {
    base::BaseModelConfig base;
    DynamicsChoice dynamics = DynamicsChoice::complex;
    ode::SolverConfig solver;
    double lambda = default_lambda;
    GuideMode guide = GuideMode::bpr;
    bool adaptive_time = true;
};

/// Base CTR model plus (optionally) the time-stream module, with all learnable
/// state in one ParameterStore.
struct DtsModel {
    ModelConfig cfg;
    ad::ParameterStore store;
    base::EmbeddingTables tables;
    base::BaseModel base;
    std::optional<TimeStreamParams> ts;
    std::optional<ode::Dynamics> dyn;

    static DtsModel create(const ModelConfig& cfg, base::Vocab vocab, std::uint64_t seed)
    {
        cfg.solver.validate();
        DtsModel m;
        m.cfg = cfg;
        Rng rng(seed);
        m.tables = base::EmbeddingTables::create(m.store, std::move(vocab), rng);
        m.base = base::BaseModel::create(m.store, cfg.base, rng);
        if (cfg.dynamics != DynamicsChoice::none) {
            m.ts = TimeStreamParams::create(m.store, rng);
            const auto kind = cfg.dynamics == DynamicsChoice::simple ? ode::DynamicsKind::simple : ode::DynamicsKind::complex;
            m.dyn = ode::Dynamics::create(m.store, "timestream.dynamics", kind, latent_dim, rng);
        }
        return m;
    }

    bool time_stream() const noexcept { return ts.has_value(); }
};

/// Zeroes the dynamics, the encoder and phi's output layer so the time-stream
/// contribution vanishes and the model reproduces its base exactly.
inline void safe_start_init(DtsModel& m)
{
    if (!m.time_stream()) return;
    auto zero = [&](std::size_t idx) {
        auto v = m.store.value(idx).values();
        std::fill(v.begin(), v.end(), 0.0);
    };
    m.dyn->rest(m.store);
    zero(m.ts->g.weight);
    zero(m.ts->phi2.weight);
    zero(m.ts->phi2.bias);
}

/// Solve times for a sample: (t0, [t_1..t_N, t_{N+1}]). With adaptive time
/// off every interval is one unit: behaviors at 1..N, the target at N+1.
inline std::vector<double> solve_times(const data::Sample& s, bool adaptive_time)
{
    std::vector<double> t;
    t.reserve(s.behaviors.size() + 1);
    if (adaptive_time) {
        for (const auto& b : s.behaviors) t.push_back(b.time);
        t.push_back(s.next_time);
    } else {
        for (std::size_t i = 0; i <= s.behaviors.size(); ++i) t.push_back(static_cast<double>(i + 1));
    }
    return t;
}

/// Everything computed from a sample's prefix and next time, shared by all
/// candidate targets evaluated at that time.
struct PrefixPass {
    base::Embedded emb;
    std::vector<Var> fused;   // ẽ_1..ẽ_N (or e_i without a time stream)
    std::vector<Var> decoded; // phi(z_{t_1})..phi(z_{t_N}), phi(z_{t_{N+1}})
    ode::TrajectoryVars traj;
    Var pooled;               // DNN pooling does not depend on the target
};

namespace detail {

inline ode::TrajectoryVars latent_trajectory(Tape& tape, DtsModel& m, Var z0, double t0, std::span<const double> times)
{
    if (m.dyn->kind == ode::DynamicsKind::simple) {
        return ode::simple_trajectory(tape.param(m.store, m.dyn->alpha), z0, t0, times);
    }
    auto f = m.dyn->bind(tape, m.store);
    return ode::solve_trajectory(f, z0, t0, times, m.cfg.solver);
}

inline void extend_latent(Tape& tape, DtsModel& m, ode::TrajectoryVars& traj, std::span<const double> times)
{
    if (m.dyn->kind == ode::DynamicsKind::simple) {
        ode::extend_simple(traj, tape.param(m.store, m.dyn->alpha), times);
        return;
    }
    auto f = m.dyn->bind(tape, m.store);
    ode::extend_trajectory(traj, f, m.cfg.solver, times);
}

} // namespace detail

/// Embeds the prefix, solves the latent trajectory through the behavior times
/// (and, when `include_next` is set, the sample's next time) and fuses the
/// decoded states into the behavior embeddings.
inline PrefixPass prefix_pass(Tape& tape, DtsModel& m, const data::Sample& s, bool include_next = true)
{
    PrefixPass pp;
    pp.emb = base::embed(tape, m.store, m.tables, s);
    if (!m.time_stream()) {
        pp.fused = pp.emb.behaviors;
    } else {
        auto times = solve_times(s, m.cfg.adaptive_time);
        if (!include_next) times.pop_back();
        const double t0 = times.front();
        Var z0 = encode_initial(tape, m.store, *m.ts, pp.emb.profile);
        pp.traj = detail::latent_trajectory(tape, m, z0, t0, times);
        pp.decoded.reserve(times.size());
        for (const auto& z : pp.traj.states) pp.decoded.push_back(decode(tape, m.store, *m.ts, z));
        pp.fused.reserve(s.behaviors.size());
        for (std::size_t i = 0; i < s.behaviors.size(); ++i) pp.fused.push_back(fuse(pp.emb.behaviors[i], pp.decoded[i]));
    }
    if (m.cfg.base.kind == base::BaseKind::dnn) pp.pooled = base::sum_pool(pp.fused);
    return pp;
}

/// Click probability of `target` (raw embedding) with decoded state `decoded_at_time` fused in.
inline Var score_target(Tape& tape, DtsModel& m, const PrefixPass& pp, Var target, Var decoded_at_time)
{
    Var fused_target = decoded_at_time.valid() ? fuse(target, decoded_at_time) : target;
    Var pooled = pp.pooled.valid() ? pp.pooled : m.base.pool(tape, m.store, pp.fused, fused_target);
    return m.base.predict(tape, m.store, pooled, fused_target, pp.emb.profile);
}

struct ForwardResult {
    Var p;
    PrefixPass prefix;
};

/// Full forward: embed → z0 = g(e^P) → trajectory through t_1..t_{N+1} →
/// decode → fuse → pool → MLP.
inline ForwardResult dts_forward(Tape& tape, DtsModel& m, const data::Sample& s)
{
    data::validate(s);
    ForwardResult r;
    r.prefix = prefix_pass(tape, m, s);
    Var dec = m.time_stream() ? r.prefix.decoded.back() : Var{};
    r.p = score_target(tape, m, r.prefix, r.prefix.emb.target, dec);
    return r;
}

inline double dts_predict(DtsModel& m, const data::Sample& s)
{
    Tape tape;
    return dts_forward(tape, m, s).p.item();
}

/// Same parameters with the time-stream module bypassed entirely.
inline Var base_forward(Tape& tape, DtsModel& m, const data::Sample& s)
{
    data::validate(s);
    auto emb = base::embed(tape, m.store, m.tables, s);
    Var pooled = m.base.pool(tape, m.store, emb.behaviors, emb.target);
    return m.base.predict(tape, m.store, pooled, emb.target, emb.profile);
}

inline double base_predict(DtsModel& m, const data::Sample& s)
{
    Tape tape;
    return base_forward(tape, m, s).item();
}

/// Click probabilities of the sample's target at each query time. The latent
/// trajectory through the behaviors is solved once; each query branches off
/// the state at t_N, so no query recomputes the history.
inline std::vector<double> predict_at_times(DtsModel& m, const data::Sample& s, std::span<const double> query_times)
{
    data::validate(s);
    ode::check_sorted(query_times, s.last_time(), "predict_at_time");
    Tape tape;
    PrefixPass pp = prefix_pass(tape, m, s, /*include_next=*/false);
    std::vector<double> out;
    out.reserve(query_times.size());
    for (double q : query_times) {
        Var dec;
        if (m.time_stream()) {
            ode::TrajectoryVars branch = pp.traj;
            const double t = m.cfg.adaptive_time ? q : static_cast<double>(s.behaviors.size() + 1);
            detail::extend_latent(tape, m, branch, std::span<const double>(&t, 1));
            dec = decode(tape, m.store, *m.ts, branch.last_state());
        }
        out.push_back(score_target(tape, m, pp, pp.emb.target, dec).item());
    }
    return out;
}

/// Draws a random item row other than `exclude_row` (uniform over the vocabulary).
inline std::size_t sample_negative_row(const base::Vocab& vocab, std::size_t exclude_row, Rng& rng)
{
    const std::size_t n = vocab.items.size();
    if (n < 2) throw DataError("guide loss: item vocabulary too small to draw negatives");
    std::size_t row;
    do {
        row = 1 + rng.index(n);
    } while (row == exclude_row);
    return row;
}

/// Guide loss of one sample given its prefix pass; negatives drawn from `rng`.
inline Var sample_guide_loss(Tape& tape, DtsModel& m, const data::Sample& s, const PrefixPass& pp, Rng& rng)
{
    if (!m.time_stream() || m.cfg.guide == GuideMode::off || s.behaviors.size() < 2) return {};
    const std::size_t positions = s.behaviors.size() - 1;
    std::vector<Var> decoded(pp.decoded.begin(), pp.decoded.begin() + static_cast<std::ptrdiff_t>(positions));
    std::vector<Var> next(pp.emb.behaviors.begin() + 1, pp.emb.behaviors.end());
    std::vector<Var> negs;
    negs.reserve(positions);
    const auto& vocab = m.tables.vocab;
    for (std::size_t i = 0; i < positions; ++i) {
        const auto row = sample_negative_row(vocab, vocab.items.row(s.behaviors[i + 1].item_id), rng);
        negs.push_back(m.tables.item_by_row(tape, m.store, row, vocab.item_category[row]));
    }
    return guide_loss(tape, m.store, *m.ts, decoded, next, negs, m.cfg.guide);
}

} // namespace dts::ts
