#pragma once

// Training loop, evaluation and arbitrary-time prediction.

#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dts/checkpoint.hpp"
#include "dts/metrics.hpp"

namespace dts::harness {

class Adam {
public:
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const ad::ParameterStore& store, double learning_rate = 1e-3) : lr(learning_rate)
    {
        for (const auto& e : store.entries()) {
            m_.emplace_back(e.value.size(), 0.0);
            v_.emplace_back(e.value.size(), 0.0);
        }
    }

    void step(ad::ParameterStore& store)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        auto& entries = store.entries();
        for (std::size_t p = 0; p < entries.size(); ++p) {
            auto w = entries[p].value.values();
            const auto& g = entries[p].grad;
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1 * m[i] + (1 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Runs of consecutive samples sharing user, prefix and next time. They differ
/// only in the candidate, so one trajectory solve serves the whole run.
struct SampleGroup {
    std::size_t begin = 0, end = 0;
    std::size_t size() const noexcept { return end - begin; }
};

inline std::vector<SampleGroup> group_samples(std::span<const data::Sample> samples)
{
    std::vector<SampleGroup> out;
    for (std::size_t i = 0; i < samples.size();) {
        std::size_t j = i + 1;
        while (j < samples.size() && samples[j].profile_id == samples[i].profile_id && samples[j].next_time == samples[i].next_time &&
               samples[j].behaviors == samples[i].behaviors) {
            ++j;
        }
        out.push_back({i, j});
        i = j;
    }
    return out;
}

struct EpochLoss {
    double total = 0.0, target = 0.0, guide = 0.0;
};

struct TrainResult {
    ts::DtsModel model;
    std::vector<EpochLoss> history;
};

using EpochCallback = std::function<void(int epoch, const EpochLoss&)>;

namespace detail {

inline std::string parameter_norms(const ad::ParameterStore& store)
{
    std::ostringstream os;
    for (const auto& e : store.entries()) {
        double s = 0.0;
        for (double v : e.value.values()) s += v * v;
        os << "\n  " << e.path << ": " << std::sqrt(s);
    }
    return os.str();
}

} // namespace detail

/// Trains `m` in place. Safe start is applied before the first epoch unless
/// `m` already carries trained time-stream parameters (`skip_safe_start`).
inline std::vector<EpochLoss> train_model(ts::DtsModel& m, const TrainConfig& cfg, std::span<const data::Sample> samples,
                                          const EpochCallback& on_epoch = {}, bool skip_safe_start = false)
{
    cfg.validate();
    if (samples.empty()) throw DataError("train: empty training set");
    for (const auto& s : samples) data::validate(s);
    if (!skip_safe_start) ts::safe_start_init(m);

    const auto groups = group_samples(samples);
    std::vector<std::size_t> order(groups.size());
    Adam opt(m.store, cfg.learning_rate);
    ad::Tape tape;
    std::vector<EpochLoss> history;

    // Each group is differentiated on its own small tape; per-group losses are
    // pre-scaled so the accumulated gradient equals that of the batch loss
    // mean(target) + λ·mean(guide).
    const bool guided = m.time_stream() && m.cfg.guide != ts::GuideMode::off;
    std::vector<Var> probs;
    std::vector<int> labels;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5eed0000u + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng neg_rng(mix_seed(cfg.seed, 0x9e9e0000u + static_cast<std::uint64_t>(epoch)));

        EpochLoss sum;
        std::size_t batches = 0;
        for (std::size_t pos = 0; pos < order.size();) {
            std::size_t end = pos, count = 0, n_guide = 0;
            while (end < order.size()) {
                const auto& g = groups[order[end]];
                if (count > 0 && count + g.size() > cfg.batch_size) break;
                count += g.size();
                if (guided && samples[g.begin].behaviors.size() >= 2) ++n_guide;
                ++end;
            }
            ++batches;

            m.store.zero_grad();
            double batch_target = 0.0, batch_guide = 0.0;
            for (; pos < end; ++pos) {
                const auto& g = groups[order[pos]];
                const auto& head = samples[g.begin];
                tape.clear();
                probs.clear();
                labels.clear();
                ts::PrefixPass pp = ts::prefix_pass(tape, m, head);
                Var dec = m.time_stream() ? pp.decoded.back() : Var{};
                for (std::size_t k = g.begin; k < g.end; ++k) {
                    const auto& s = samples[k];
                    Var target = k == g.begin ? pp.emb.target : m.tables.item(tape, m.store, s.target.item_id, s.target.category_id);
                    probs.push_back(ts::score_target(tape, m, pp, target, dec));
                    labels.push_back(s.label);
                }
                const double w = static_cast<double>(g.size()) / static_cast<double>(count);
                Var loss = ad::scale(base::target_loss(probs, labels), w);
                batch_target += loss.item();
                if (Var gl = ts::sample_guide_loss(tape, m, head, pp, neg_rng); gl.valid()) {
                    loss = ad::add_scaled(loss, gl, m.cfg.lambda / static_cast<double>(n_guide));
                    batch_guide += gl.item() / static_cast<double>(n_guide);
                }
                if (!std::isfinite(loss.item())) {
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                                       "; parameter norms:" + detail::parameter_norms(m.store));
                }
                ad::backward(loss, m.store);
            }
            sum.total += batch_target + m.cfg.lambda * batch_guide;
            sum.target += batch_target;
            sum.guide += batch_guide;
            opt.step(m.store);
        }
        const double nb = static_cast<double>(batches);
        EpochLoss mean{sum.total / nb, sum.target / nb, sum.guide / nb};
        history.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return history;
}

/// Builds a fresh model from the samples' vocabulary (or `init`, when given)
/// and trains it.
inline TrainResult train(const TrainConfig& cfg, std::span<const data::Sample> train_samples, const Checkpoint* init = nullptr,
                         const EpochCallback& on_epoch = {})
{
    cfg.validate();
    if (train_samples.empty()) throw DataError("train: empty training set");
    if (init) {
        auto m = model_from_checkpoint(*init, &cfg);
        const bool trained_time_stream = init->config.dynamics != ts::DynamicsChoice::none && m.time_stream();
        auto history = train_model(m, cfg, train_samples, on_epoch, trained_time_stream);
        return {std::move(m), std::move(history)};
    }
    auto m = ts::DtsModel::create(cfg.model_config(), base::Vocab::from_samples(train_samples), cfg.seed);
    auto history = train_model(m, cfg, train_samples, on_epoch);
    return {std::move(m), std::move(history)};
}

/// Click probabilities for every sample, grouped so a shared prefix is solved once.
inline std::vector<double> score_samples(ts::DtsModel& m, std::span<const data::Sample> samples)
{
    std::vector<double> out(samples.size());
    ad::Tape tape;
    for (const auto& g : group_samples(samples)) {
        tape.clear();
        const auto& head = samples[g.begin];
        data::validate(head);
        ts::PrefixPass pp = ts::prefix_pass(tape, m, head);
        Var dec = m.time_stream() ? pp.decoded.back() : Var{};
        for (std::size_t k = g.begin; k < g.end; ++k) {
            const auto& s = samples[k];
            Var target = k == g.begin ? pp.emb.target : m.tables.item(tape, m.store, s.target.item_id, s.target.category_id);
            out[k] = ts::score_target(tape, m, pp, target, dec).item();
        }
    }
    return out;
}

inline metrics::EvalReport evaluate(ts::DtsModel& m, std::span<const data::Sample> samples)
{
    if (samples.empty()) throw DataError("eval: empty dataset");
    const auto scores = score_samples(m, samples);
    std::vector<metrics::ScoredRow> rows;
    rows.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) rows.push_back({samples[i].profile_id, scores[i], samples[i].label});
    return metrics::weighted_auc(rows);
}

inline json to_json(const metrics::EvalReport& r)
{
    json per_user = json::array();
    for (const auto& u : r.per_user) per_user.push_back({{"user_id", u.user_id}, {"impressions", u.impressions}, {"auc", u.auc}});
    return {{"weighted_auc", r.weighted_auc}, {"per_user", per_user}, {"skipped_users", r.skipped_users}};
}

inline std::vector<double> predict_at_time(const Checkpoint& c, const data::Sample& s, std::span<const double> query_times)
{
    auto m = model_from_checkpoint(c);
    return ts::predict_at_times(m, s, query_times);
}

} // namespace dts::harness
