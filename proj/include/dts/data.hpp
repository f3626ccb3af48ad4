#pragma once

// Click logs, prefix samples with negative sampling, and the synthetic
// day/night clickstream used by the acceptance experiment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "dts/error.hpp"
#include "dts/random.hpp"

namespace dts::data {

using json = nlohmann::json;

inline constexpr double seconds_per_day = 86400.0;
inline constexpr std::size_t default_max_len = 100;

struct InteractionEvent {
    std::string user_id;
    std::string item_id;
    std::string category_id;
    double timestamp = 0.0; // seconds since epoch

    bool operator==(const InteractionEvent&) const = default;
};

struct UserHistory {
    std::string user_id;
    std::vector<InteractionEvent> events; // ascending timestamp
};

struct Behavior {
    std::string item_id;
    std::string category_id;
    double time = 0.0;

    bool operator==(const Behavior&) const = default;
};

struct ItemRef {
    std::string item_id;
    std::string category_id;

    bool operator==(const ItemRef&) const = default;
};

/// One training/evaluation instance: behavior prefix, candidate item, the time
/// the candidate would be clicked, and the click label.
struct Sample {
    std::string profile_id;
    std::vector<Behavior> behaviors;
    ItemRef target;
    double next_time = 0.0;
    int label = 0;

    bool operator==(const Sample&) const = default;

    double first_time() const { return behaviors.front().time; }
    double last_time() const { return behaviors.back().time; }
};

inline void validate(const Sample& s, std::size_t max_len = default_max_len)
{
    if (s.behaviors.empty()) throw DataError("sample: no behaviors");
    if (s.behaviors.size() > max_len) throw DataError("sample: more than " + std::to_string(max_len) + " behaviors");
    if (s.label != 0 && s.label != 1) throw DataError("sample: label must be 0 or 1");
    double prev = s.behaviors.front().time;
    for (const auto& b : s.behaviors) {
        if (!std::isfinite(b.time)) throw DataError("sample: non-finite behavior time");
        if (b.time < prev) throw DataError("sample: behavior times decrease");
        prev = b.time;
    }
    if (!std::isfinite(s.next_time) || s.next_time < prev) throw DataError("sample: next_time precedes the last behavior");
}

// ---------------------------------------------------------------------------
// event logs

namespace detail {

inline std::string string_field(const json& j, const char* key, std::size_t line)
{
    auto it = j.find(key);
    if (it == j.end()) throw DataError("line " + std::to_string(line) + ": missing key '" + key + "'");
    if (!it->is_string()) throw DataError("line " + std::to_string(line) + ": key '" + key + "' must be a string");
    auto s = it->get<std::string>();
    if (s.empty()) throw DataError("line " + std::to_string(line) + ": key '" + key + "' is empty");
    return s;
}

inline double number_field(const json& j, const char* key, std::size_t line)
{
    auto it = j.find(key);
    if (it == j.end()) throw DataError("line " + std::to_string(line) + ": missing key '" + key + "'");
    if (!it->is_number()) throw DataError("line " + std::to_string(line) + ": key '" + key + "' must be a number");
    return it->get<double>();
}

inline bool blank(const std::string& s)
{
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace detail

/// Reads one JSON event per line. Events come back grouped by user (users in
/// id order) and sorted by timestamp within a user; ties keep input order.
inline std::vector<InteractionEvent> parse_events(std::istream& in)
{
    std::vector<InteractionEvent> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw DataError("line " + std::to_string(lineno) + ": expected a JSON object");
        InteractionEvent ev;
        ev.user_id = detail::string_field(j, "user_id", lineno);
        ev.item_id = detail::string_field(j, "item_id", lineno);
        ev.category_id = detail::string_field(j, "category_id", lineno);
        ev.timestamp = detail::number_field(j, "timestamp", lineno);
        if (!std::isfinite(ev.timestamp) || ev.timestamp < 0) {
            throw DataError("line " + std::to_string(lineno) + ": timestamp must be finite and non-negative");
        }
        events.push_back(std::move(ev));
    }
    std::stable_sort(events.begin(), events.end(), [](const InteractionEvent& a, const InteractionEvent& b) {
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        return a.timestamp < b.timestamp;
    });
    return events;
}

inline std::vector<InteractionEvent> parse_events_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open event log '" + path + "'");
    return parse_events(in);
}

/// Splits an event list already ordered by parse_events into per-user histories.
inline std::vector<UserHistory> group_by_user(const std::vector<InteractionEvent>& events)
{
    std::map<std::string, std::vector<InteractionEvent>> by_user;
    for (const auto& e : events) by_user[e.user_id].push_back(e);
    std::vector<UserHistory> out;
    for (auto& [user, evs] : by_user) {
        std::stable_sort(evs.begin(), evs.end(),
                         [](const InteractionEvent& a, const InteractionEvent& b) { return a.timestamp < b.timestamp; });
        out.push_back({user, std::move(evs)});
    }
    return out;
}

inline json to_json(const InteractionEvent& e)
{
    return {{"user_id", e.user_id}, {"item_id", e.item_id}, {"category_id", e.category_id}, {"timestamp", e.timestamp}};
}

inline void write_events(std::ostream& out, const std::vector<InteractionEvent>& events)
{
    for (const auto& e : events) out << to_json(e).dump() << '\n';
}

// ---------------------------------------------------------------------------
// samples

/// Rewrites every time as fractional days since `origin` (seconds).
inline Sample normalize_timestamps(Sample s, double origin)
{
    for (auto& b : s.behaviors) b.time = (b.time - origin) / seconds_per_day;
    s.next_time = (s.next_time - origin) / seconds_per_day;
    return s;
}

struct BuildOptions {
    std::size_t max_len = default_max_len;
    std::size_t neg_per_pos = 1;
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// Item → category map over every item seen in the events.
inline std::map<std::string, std::string> item_catalog(const std::vector<UserHistory>& users)
{
    std::map<std::string, std::string> cat;
    for (const auto& u : users)
        for (const auto& e : u.events) cat.emplace(e.item_id, e.category_id);
    return cat;
}

/// Prefix samples per user. For N events: training positives use prefixes of
/// length k = 1..N−2 targeting event k+1, the test positive uses the first N−1
/// events targeting event N. Each positive is followed by `neg_per_pos`
/// negatives sharing its prefix and next_time, with targets drawn uniformly
/// from the items this user never clicked.
inline Dataset build_samples(const std::vector<UserHistory>& users, const BuildOptions& opt)
{
    if (opt.max_len < 1) throw UsageError("build_samples: max_len must be >= 1");
    const auto catalog = item_catalog(users);
    std::vector<const std::string*> vocab;
    vocab.reserve(catalog.size());
    for (const auto& [item, _] : catalog) vocab.push_back(&item);

    Dataset ds;
    for (std::size_t ui = 0; ui < users.size(); ++ui) {
        const auto& user = users[ui];
        const auto& ev = user.events;
        const std::size_t n = ev.size();
        if (n < 2) continue;

        std::unordered_set<std::string> own;
        for (const auto& e : ev) own.insert(e.item_id);
        if (opt.neg_per_pos > 0 && own.size() >= vocab.size()) {
            throw DataError("build_samples: user '" + user.user_id + "' has clicked every item; no negatives available");
        }
        Rng rng(mix_seed(opt.seed, ui));

        auto make = [&](std::size_t k, std::vector<Sample>& out) {
            // prefix = events [0, k), target = event k
            const std::size_t begin = k > opt.max_len ? k - opt.max_len : 0;
            Sample raw;
            raw.profile_id = user.user_id;
            for (std::size_t i = begin; i < k; ++i) raw.behaviors.push_back({ev[i].item_id, ev[i].category_id, ev[i].timestamp});
            raw.target = {ev[k].item_id, ev[k].category_id};
            raw.next_time = ev[k].timestamp;
            raw.label = 1;
            Sample pos = normalize_timestamps(std::move(raw), ev[begin].timestamp);
            for (std::size_t j = 0; j < opt.neg_per_pos; ++j) {
                const std::string* item;
                do {
                    item = vocab[rng.index(vocab.size())];
                } while (own.count(*item));
                Sample neg = pos;
                neg.target = {*item, catalog.at(*item)};
                neg.label = 0;
                if (j == 0) out.push_back(pos);
                out.push_back(std::move(neg));
            }
            if (opt.neg_per_pos == 0) out.push_back(std::move(pos));
        };

        for (std::size_t k = 1; k + 1 < n; ++k) make(k, ds.train);
        make(n - 1, ds.test);
    }
    return ds;
}

inline json to_json(const Sample& s)
{
    json beh = json::array();
    for (const auto& b : s.behaviors) beh.push_back(json::array({b.item_id, b.category_id, b.time}));
    return {{"profile_id", s.profile_id},
            {"behaviors", std::move(beh)},
            {"target_item", json::array({s.target.item_id, s.target.category_id})},
            {"next_time", s.next_time},
            {"label", s.label}};
}

inline Sample sample_from_json(const json& j, std::size_t line = 0)
{
    const std::string where = line ? "line " + std::to_string(line) + ": " : std::string("sample: ");
    try {
        Sample s;
        s.profile_id = j.at("profile_id").get<std::string>();
        for (const auto& b : j.at("behaviors")) {
            if (!b.is_array() || b.size() != 3) throw DataError(where + "each behavior must be [item_id, category_id, time]");
            s.behaviors.push_back({b[0].get<std::string>(), b[1].get<std::string>(), b[2].get<double>()});
        }
        const auto& t = j.at("target_item");
        if (!t.is_array() || t.size() != 2) throw DataError(where + "target_item must be [item_id, category_id]");
        s.target = {t[0].get<std::string>(), t[1].get<std::string>()};
        s.next_time = j.at("next_time").get<double>();
        s.label = j.at("label").get<int>();
        validate(s);
        return s;
    } catch (const json::exception& e) {
        throw DataError(where + e.what());
    } catch (const DataError& e) {
        if (line && std::string(e.what()).rfind("line ", 0) != 0) throw DataError(where + e.what());
        throw;
    }
}

inline std::vector<Sample> read_samples(std::istream& in)
{
    std::vector<Sample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        }
        out.push_back(sample_from_json(j, lineno));
    }
    return out;
}

inline std::vector<Sample> read_samples_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open sample file '" + path + "'");
    return read_samples(in);
}

inline void write_samples(std::ostream& out, const std::vector<Sample>& samples)
{
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------------------
// synthetic clickstream

struct ItemRange {
    std::size_t begin = 0, end = 0; // [begin, end)

    std::size_t size() const { return end > begin ? end - begin : 0; }
    bool overlaps(const ItemRange& o) const { return begin < o.end && o.begin < end; }
};

/// Users alternate between two item pools on a fixed period; each user's
/// cycle is shifted by a phase (a fraction of the period).
struct SyntheticConfig {
    std::size_t num_users = 2000;
    std::size_t events_per_user = 30;
    double period = 1.0; // days
    std::vector<double> phases{0.0, 0.5};
    ItemRange pool_a{0, 200};
    ItemRange pool_b{200, 400};
    double preference_strength = 0.9;
    std::uint64_t seed = 0;
    double horizon_periods = 30.0;
    std::size_t items_per_category = 25;

    void validate() const
    {
        if (!(preference_strength > 0.5 && preference_strength <= 1.0)) {
            throw UsageError("synthetic: preference_strength must lie in (0.5, 1]");
        }
        if (pool_a.size() == 0 || pool_b.size() == 0) throw UsageError("synthetic: item pools must be non-empty");
        if (pool_a.overlaps(pool_b)) throw UsageError("synthetic: item pools must be disjoint");
        if (!(period > 0)) throw UsageError("synthetic: period must be positive");
        if (phases.empty()) throw UsageError("synthetic: at least one phase is required");
        if (items_per_category < 1) throw UsageError("synthetic: items_per_category must be >= 1");
        if (!(horizon_periods > 0)) throw UsageError("synthetic: horizon must be positive");
    }
};

enum class Pool { a, b };

inline const char* to_string(Pool p) { return p == Pool::a ? "a" : "b"; }

/// Pool favoured at time `t` (days) by a user with phase fraction `phase`.
inline Pool preferred_pool(const SyntheticConfig& cfg, double phase, double t)
{
    const double s = std::sin(2.0 * std::numbers::pi * (t - phase * cfg.period) / cfg.period);
    return s > 0 ? Pool::a : Pool::b;
}

inline std::string synthetic_item_id(std::size_t idx) { return "item_" + std::to_string(idx); }
inline std::string synthetic_category_id(const SyntheticConfig& cfg, std::size_t idx)
{
    return "cat_" + std::to_string(idx / cfg.items_per_category);
}

struct Impression {
    std::string user_id;
    std::string item_id;
    double timestamp = 0.0; // seconds
    Pool preferred = Pool::a;
    Pool clicked = Pool::a;
};

struct SyntheticData {
    std::vector<InteractionEvent> events;
    std::vector<Impression> impressions; // ground truth, one per event
};

/// Draws the clicked item index at time `t` for a user with the given phase.
inline std::size_t draw_click(const SyntheticConfig& cfg, double phase, double t, Rng& rng, Pool* clicked = nullptr)
{
    const Pool pref = preferred_pool(cfg, phase, t);
    const bool stay = rng.uniform() < cfg.preference_strength;
    const Pool pool = stay ? pref : (pref == Pool::a ? Pool::b : Pool::a);
    if (clicked) *clicked = pool;
    const auto& range = pool == Pool::a ? cfg.pool_a : cfg.pool_b;
    return range.begin + rng.index(range.size());
}

inline std::string synthetic_user_id(std::size_t u)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "user_%06zu", u);
    return buf;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg)
{
    cfg.validate();
    SyntheticData out;
    out.events.reserve(cfg.num_users * cfg.events_per_user);
    for (std::size_t u = 0; u < cfg.num_users; ++u) {
        Rng rng(mix_seed(cfg.seed, u));
        const double phase = cfg.phases[u % cfg.phases.size()];
        std::vector<double> times(cfg.events_per_user);
        for (auto& t : times) t = rng.uniform(0.0, cfg.horizon_periods * cfg.period);
        std::sort(times.begin(), times.end());
        const auto uid = synthetic_user_id(u);
        for (double t : times) {
            Pool clicked;
            const auto idx = draw_click(cfg, phase, t, rng, &clicked);
            InteractionEvent ev{uid, synthetic_item_id(idx), synthetic_category_id(cfg, idx), t * seconds_per_day};
            out.impressions.push_back({uid, ev.item_id, ev.timestamp, preferred_pool(cfg, phase, t), clicked});
            out.events.push_back(std::move(ev));
        }
    }
    return out;
}

inline json to_json(const Impression& im)
{
    return {{"user_id", im.user_id},
            {"item_id", im.item_id},
            {"timestamp", im.timestamp},
            {"preferred_pool", to_string(im.preferred)},
            {"clicked_pool", to_string(im.clicked)}};
}

} // namespace dts::data
