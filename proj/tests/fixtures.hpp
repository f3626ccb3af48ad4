#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "dts/ablation.hpp"

namespace fixtures {

using namespace dts;

/// Random valid sample over a small id space; times are sorted fractional days.
inline data::Sample random_sample(Rng& rng, std::size_t n_behaviors, std::size_t n_items = 40, std::size_t n_users = 10)
{
    data::Sample s;
    s.profile_id = "user" + std::to_string(rng.index(n_users));
    double t = 0.0;
    for (std::size_t i = 0; i < n_behaviors; ++i) {
        if (i > 0) t += rng.uniform(0.0, 1.5);
        const auto item = rng.index(n_items);
        s.behaviors.push_back({"item" + std::to_string(item), "cat" + std::to_string(item % 7), t});
    }
    const auto target = rng.index(n_items);
    s.target = {"item" + std::to_string(target), "cat" + std::to_string(target % 7)};
    s.next_time = t + rng.uniform(0.0, 1.5);
    s.label = static_cast<int>(rng.index(2));
    return s;
}

/// Vocabulary covering every id random_sample can produce.
inline base::Vocab full_vocab(std::size_t n_items = 40, std::size_t n_users = 10)
{
    base::Vocab v;
    for (std::size_t i = 0; i < n_items; ++i) v.add_item("item" + std::to_string(i), "cat" + std::to_string(i % 7));
    for (std::size_t u = 0; u < n_users; ++u) v.users.add("user" + std::to_string(u));
    return v;
}

/// Nudges every parameter by N(0, sd) so nothing sits at a degenerate zero.
inline void perturb(ad::ParameterStore& store, double sd, std::uint64_t seed)
{
    Rng rng(seed);
    for (auto& e : store.entries())
        for (auto& x : e.value.values()) x += rng.normal(0.0, sd);
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst_path;
    std::size_t coordinates = 0;
};

/// backward() against central differences. Tensors larger than `max_coords`
/// are checked on an evenly spaced subset of coordinates.
inline GradCheck check_gradients(ad::ParameterStore& store, const std::function<ad::Var(ad::Tape&)>& loss_fn,
                                 std::size_t max_coords = 0, double eps = 1e-6)
{
    ad::Tape tape;
    store.zero_grad();
    ad::backward(loss_fn(tape), store);
    const auto grads = store.gradients();

    GradCheck out;
    for (std::size_t p = 0; p < store.size(); ++p) {
        auto& value = store.value(p);
        const auto& analytic = grads.at(store.entries()[p].path);
        const std::size_t n = value.size();
        const std::size_t stride = (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = value[i];
            value[i] = saved + eps;
            ad::Tape t1;
            const double up = loss_fn(t1).item();
            value[i] = saved - eps;
            ad::Tape t2;
            const double down = loss_fn(t2).item();
            value[i] = saved;
            const double numeric = (up - down) / (2 * eps);
            const double err = ad::relative_error(analytic[i], numeric);
            ++out.coordinates;
            if (err > out.max_rel_error) {
                out.max_rel_error = err;
                out.worst_path = store.entries()[p].path + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

inline data::Dataset synthetic_dataset(std::size_t users, std::size_t events, std::uint64_t seed)
{
    data::SyntheticConfig cfg;
    cfg.num_users = users;
    cfg.events_per_user = events;
    cfg.seed = seed;
    data::BuildOptions opt;
    opt.seed = seed;
    return data::build_samples(data::group_by_user(data::generate_synthetic(cfg).events), opt);
}

} // namespace fixtures
