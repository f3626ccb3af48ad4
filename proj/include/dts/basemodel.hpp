#pragma once

// Embedding-Pooling-MLP click-through-rate models: a sum-pooling DNN and a
// DIN-style attentive-pooling variant, plus the log-likelihood target loss.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dts/autodiff.hpp"
#include "dts/data.hpp"
#include "dts/layers.hpp"

namespace dts::base {

using ad::Tape;
using ad::Var;

inline constexpr std::size_t item_dim = 18;
inline constexpr std::size_t behavior_dim = 2 * item_dim; // item ++ category
inline constexpr std::size_t profile_dim = 36;

/// String ids to embedding rows. Row 0 is the shared out-of-vocabulary row.
class Vocabulary {
public:
    std::size_t add(const std::string& id)
    {
        auto [it, inserted] = index_.emplace(id, ids_.size() + 1);
        if (inserted) ids_.push_back(id);
        return it->second;
    }

    std::size_t row(const std::string& id) const
    {
        auto it = index_.find(id);
        return it == index_.end() ? 0 : it->second;
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t rows() const noexcept { return ids_.size() + 1; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::string& id(std::size_t row) const { return ids_.at(row - 1); }

private:
    std::map<std::string, std::size_t> index_;
    std::vector<std::string> ids_;
};

/// Vocabularies plus the item → category relation needed to embed sampled items.
struct Vocab {
    Vocabulary items, categories, users;
    std::vector<std::size_t> item_category{0}; // by item row

    void add_item(const std::string& item, const std::string& category)
    {
        const auto c = categories.add(category);
        const auto r = items.add(item);
        if (r >= item_category.size()) item_category.resize(r + 1, 0);
        if (item_category[r] == 0) item_category[r] = c;
    }

    static Vocab from_samples(std::span<const data::Sample> samples)
    {
        Vocab v;
        for (const auto& s : samples) {
            v.users.add(s.profile_id);
            for (const auto& b : s.behaviors) v.add_item(b.item_id, b.category_id);
            v.add_item(s.target.item_id, s.target.category_id);
        }
        return v;
    }
};

struct Embedded {
    std::vector<Var> behaviors; // e_1..e_N, each 36
    Var target;                 // e_{N+1}
    Var profile;                // e^P
};

/// Item, category and profile lookup tables stored as matrices (row per id).
struct EmbeddingTables {
    Vocab vocab;
    std::size_t item_table = no_param, category_table = no_param, profile_table = no_param;

    static EmbeddingTables create(ad::ParameterStore& store, Vocab vocab, Rng& rng, double stddev = 0.1)
    {
        EmbeddingTables t;
        t.item_table = store.add("embedding.item", init::normal(vocab.items.rows(), item_dim, stddev, rng));
        t.category_table = store.add("embedding.category", init::normal(vocab.categories.rows(), item_dim, stddev, rng));
        t.profile_table = store.add("embedding.profile", init::normal(vocab.users.rows(), profile_dim, stddev, rng));
        t.vocab = std::move(vocab);
        return t;
    }

    Var item_by_row(Tape& tape, ad::ParameterStore& store, std::size_t item_row, std::size_t category_row) const
    {
        return ad::concat({tape.param_row(store, item_table, item_row), tape.param_row(store, category_table, category_row)});
    }

    Var item(Tape& tape, ad::ParameterStore& store, const std::string& item_id, const std::string& category_id) const
    {
        return item_by_row(tape, store, vocab.items.row(item_id), vocab.categories.row(category_id));
    }

    Var profile(Tape& tape, ad::ParameterStore& store, const std::string& user_id) const
    {
        return tape.param_row(store, profile_table, vocab.users.row(user_id));
    }
};

/// Looks up e_1..e_N, e_{N+1} and e^P. Unknown ids use the out-of-vocabulary rows.
inline Embedded embed(Tape& tape, ad::ParameterStore& store, const EmbeddingTables& tables, const data::Sample& s)
{
    Embedded e;
    e.behaviors.reserve(s.behaviors.size());
    for (const auto& b : s.behaviors) e.behaviors.push_back(tables.item(tape, store, b.item_id, b.category_id));
    e.target = tables.item(tape, store, s.target.item_id, s.target.category_id);
    e.profile = tables.profile(tape, store, s.profile_id);
    return e;
}

inline Var sum_pool(std::span<const Var> behaviors)
{
    if (behaviors.empty()) throw ShapeError("sum_pool: no behaviors");
    Var acc = behaviors[0];
    for (std::size_t i = 1; i < behaviors.size(); ++i) acc = acc + behaviors[i];
    return acc;
}

/// Activation unit scoring each behavior against the target.
struct Attention {
    Linear hidden; // 4·d → d
    PRelu act;
    Linear score; // d → 1

    static Attention create(ad::ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng)
    {
        Attention a;
        a.hidden = Linear::create(store, prefix + ".layer1", 4 * dim, dim, true, rng);
        a.act = PRelu::create(store, prefix + ".prelu");
        a.score = Linear::create(store, prefix + ".layer2", dim, 1, true, rng);
        return a;
    }
};

/// Softmax-weighted sum of behaviors; weights come from
/// MLP(e_i, t, e_i − t, e_i ⊙ t).
inline Var attentive_pool(Tape& tape, ad::ParameterStore& store, const Attention& att, std::span<const Var> behaviors,
                          Var target)
{
    if (behaviors.empty()) throw ShapeError("attentive_pool: no behaviors");
    std::vector<Var> scores;
    scores.reserve(behaviors.size());
    for (const auto& e : behaviors) {
        Var feat = ad::concat({e, target, e - target, e * target});
        Var h = att.act(tape, store, att.hidden(tape, store, feat));
        scores.push_back(att.score(tape, store, h));
    }
    Var w = ad::softmax(ad::concat(scores));
    Var stacked = ad::stack_rows(behaviors); // N x d
    return ad::matmul(ad::transpose(stacked), w);
}

enum class BaseKind { dnn, din };

inline std::string to_string(BaseKind k) { return k == BaseKind::dnn ? "dnn" : "din"; }

inline BaseKind base_kind_from_string(const std::string& s)
{
    if (s == "dnn") return BaseKind::dnn;
    if (s == "din") return BaseKind::din;
    throw UsageError("unknown base model '" + s + "' (expected dnn or din)");
}

struct BaseModelConfig {
    BaseKind kind = BaseKind::dnn;
    std::vector<std::size_t> mlp_dims{behavior_dim + behavior_dim + profile_dim, 200, 80, 1};
};

struct BaseModel {
    BaseModelConfig cfg;
    std::vector<Linear> layers;
    std::vector<PRelu> acts;
    Attention attention;

    static BaseModel create(ad::ParameterStore& store, const BaseModelConfig& cfg, Rng& rng)
    {
        if (cfg.mlp_dims.size() < 2 || cfg.mlp_dims.front() != 2 * behavior_dim + profile_dim || cfg.mlp_dims.back() != 1) {
            throw UsageError("base model: mlp_dims must start at 108 and end at 1");
        }
        BaseModel m;
        m.cfg = cfg;
        for (std::size_t i = 0; i + 1 < cfg.mlp_dims.size(); ++i) {
            const auto name = "base.mlp.layer" + std::to_string(i + 1);
            m.layers.push_back(Linear::create(store, name, cfg.mlp_dims[i], cfg.mlp_dims[i + 1], true, rng));
            if (i + 2 < cfg.mlp_dims.size()) m.acts.push_back(PRelu::create(store, "base.mlp.prelu" + std::to_string(i + 1)));
        }
        if (cfg.kind == BaseKind::din) m.attention = Attention::create(store, "base.attention", behavior_dim, rng);
        return m;
    }

    Var pool(Tape& tape, ad::ParameterStore& store, std::span<const Var> behaviors, Var target) const
    {
        if (cfg.kind == BaseKind::dnn) return sum_pool(behaviors);
        return attentive_pool(tape, store, attention, behaviors, target);
    }

    /// Pre-sigmoid score of concat(e^U, e^V, e^P).
    Var logit(Tape& tape, ad::ParameterStore& store, Var user, Var target, Var profile) const
    {
        if (user.size() != behavior_dim || target.size() != behavior_dim || profile.size() != profile_dim) {
            throw ShapeError("mlp_predict: expected 36/36/36 inputs");
        }
        Var x = ad::concat({user, target, profile});
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](tape, store, x);
            if (i < acts.size()) x = acts[i](tape, store, x);
        }
        return x;
    }

    /// Click probability sigmoid(MLP(...)).
    Var predict(Tape& tape, ad::ParameterStore& store, Var user, Var target, Var profile) const
    {
        return ad::sigmoid(logit(tape, store, user, target, profile));
    }
};

inline constexpr double probability_floor = 1e-12;

/// −(1/N) Σ [y log p + (1−y) log(1−p)] with p clamped to [1e-12, 1−1e-12].
inline Var target_loss(std::span<const Var> probs, std::span<const int> labels)
{
    if (probs.empty() || probs.size() != labels.size()) throw ShapeError("target_loss: probabilities and labels differ in length");
    Tape& tape = *probs[0].tape;
    Var one = tape.scalar(1.0);
    Var total;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        Var p = ad::clamp(probs[i], probability_floor, 1.0 - probability_floor);
        Var term = labels[i] == 1 ? ad::log(p) : ad::log(ad::add_scaled(one, p, -1.0));
        total = total.valid() ? total + term : term;
    }
    return ad::scale(total, -1.0 / static_cast<double>(probs.size()));
}

} // namespace dts::base
