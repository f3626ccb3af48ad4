#pragma once

// Training configuration and JSON checkpoints.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dts/error.hpp"
#include "dts/timestream.hpp"

namespace dts::harness {

using json = nlohmann::json;
using ad::Var;

inline constexpr int checkpoint_format_version = 1;

struct TrainConfig {
    base::BaseKind base_kind = base::BaseKind::dnn;
    ts::DynamicsChoice dynamics = ts::DynamicsChoice::complex;
    ode::SolverConfig solver;
    double lambda = ts::default_lambda;
    ts::GuideMode guide_mode = ts::GuideMode::bpr;
    bool adaptive_time = true; // false: every interval is one unit (RNN-like)
    int epochs = 5;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const
    {
        solver.validate();
        if (epochs < 0) throw UsageError("train: epochs must be >= 0");
        if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
        if (!(learning_rate >= 0)) throw UsageError("train: learning rate must be >= 0");
        if (!(lambda >= 0)) throw UsageError("train: lambda must be >= 0");
    }

    ts::ModelConfig model_config() const
    {
        ts::ModelConfig mc;
        mc.base.kind = base_kind;
        mc.dynamics = dynamics;
        mc.solver = solver;
        mc.lambda = lambda;
        mc.guide = dynamics == ts::DynamicsChoice::none ? ts::GuideMode::off : guide_mode;
        mc.adaptive_time = adaptive_time;
        return mc;
    }
};

inline json to_json(const TrainConfig& c)
{
    return {{"base_kind", base::to_string(c.base_kind)},
            {"dynamics", ts::to_string(c.dynamics)},
            {"solver",
             {{"method", ode::to_string(c.solver.method)},
              {"substeps_per_unit", c.solver.substeps_per_unit},
              {"rtol", c.solver.rtol},
              {"atol", c.solver.atol},
              {"max_steps", c.solver.max_steps}}},
            {"lambda", c.lambda},
            {"guide_mode", ts::to_string(c.guide_mode)},
            {"adaptive_time", c.adaptive_time},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j)
{
    TrainConfig c;
    c.base_kind = base::base_kind_from_string(j.at("base_kind").get<std::string>());
    c.dynamics = ts::dynamics_from_string(j.at("dynamics").get<std::string>());
    const auto& s = j.at("solver");
    c.solver.method = ode::method_from_string(s.at("method").get<std::string>());
    c.solver.substeps_per_unit = s.at("substeps_per_unit").get<int>();
    c.solver.rtol = s.at("rtol").get<double>();
    c.solver.atol = s.at("atol").get<double>();
    c.solver.max_steps = s.at("max_steps").get<int>();
    c.lambda = j.at("lambda").get<double>();
    c.guide_mode = ts::guide_from_string(j.at("guide_mode").get<std::string>());
    c.adaptive_time = j.at("adaptive_time").get<bool>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

struct Checkpoint {
    int format_version = checkpoint_format_version;
    TrainConfig config;
    base::Vocab vocab;
    std::map<std::string, ad::Tensor> parameters;
};

inline Checkpoint make_checkpoint(const ts::DtsModel& m, const TrainConfig& cfg)
{
    Checkpoint c;
    c.config = cfg;
    c.vocab = m.tables.vocab;
    for (const auto& e : m.store.entries()) c.parameters.emplace(e.path, e.value);
    return c;
}

inline json to_json(const base::Vocab& v)
{
    auto rows = [](const base::Vocabulary& voc) {
        json j = json::object();
        for (const auto& id : voc.ids()) j[id] = voc.row(id);
        return j;
    };
    json item_cat = json::object();
    for (const auto& id : v.items.ids()) item_cat[id] = v.categories.id(v.item_category[v.items.row(id)]);
    return {{"items", rows(v.items)}, {"categories", rows(v.categories)}, {"users", rows(v.users)}, {"item_category", item_cat}};
}

namespace detail {

inline base::Vocabulary vocabulary_from_json(const json& j, const char* what)
{
    std::vector<std::string> by_row(j.size());
    for (const auto& [id, row] : j.items()) {
        const auto r = row.get<std::size_t>();
        if (r < 1 || r > by_row.size() || !by_row[r - 1].empty()) {
            throw CheckpointError(CheckpointError::Kind::malformed_json, std::string("checkpoint: ") + what + " rows are not 1..n");
        }
        by_row[r - 1] = id;
    }
    base::Vocabulary v;
    for (const auto& id : by_row) v.add(id);
    return v;
}

} // namespace detail

inline base::Vocab vocab_from_json(const json& j)
{
    base::Vocab v;
    v.categories = detail::vocabulary_from_json(j.at("categories"), "categories");
    v.users = detail::vocabulary_from_json(j.at("users"), "users");
    auto items = detail::vocabulary_from_json(j.at("items"), "items");
    const auto& ic = j.at("item_category");
    for (const auto& id : items.ids()) v.add_item(id, ic.at(id).get<std::string>());
    return v;
}

inline json to_json(const Checkpoint& c)
{
    json params = json::object();
    for (const auto& [path, t] : c.parameters) params[path] = {{"shape", t.shape()}, {"values", t.storage()}};
    return {{"format_version", c.format_version}, {"config", to_json(c.config)}, {"vocab", to_json(c.vocab)}, {"parameters", params}};
}

inline Checkpoint checkpoint_from_json(const json& j)
{
    using K = CheckpointError::Kind;
    if (!j.is_object() || !j.contains("format_version")) throw CheckpointError(K::missing_field, "checkpoint: missing format_version");
    const int version = j.at("format_version").get<int>();
    if (version != checkpoint_format_version) {
        throw CheckpointError(K::version_mismatch, "checkpoint: format_version " + std::to_string(version) + " is not supported (expected " +
                                                       std::to_string(checkpoint_format_version) + ")");
    }
    try {
        Checkpoint c;
        c.format_version = version;
        c.config = train_config_from_json(j.at("config"));
        c.vocab = vocab_from_json(j.at("vocab"));
        for (const auto& [path, p] : j.at("parameters").items()) {
            auto shape = p.at("shape").get<std::vector<std::size_t>>();
            auto values = p.at("values").get<std::vector<double>>();
            try {
                c.parameters.emplace(path, ad::Tensor(std::move(shape), std::move(values)));
            } catch (const ShapeError& e) {
                throw CheckpointError(K::shape_mismatch, "checkpoint: parameter '" + path + "': " + e.what());
            }
        }
        return c;
    } catch (const json::exception& e) {
        throw CheckpointError(K::missing_field, std::string("checkpoint: ") + e.what());
    } catch (const UsageError& e) {
        throw CheckpointError(K::missing_field, std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << to_json(c).dump() << '\n';
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw CheckpointError(CheckpointError::Kind::malformed_json, std::string("checkpoint: malformed JSON (") + e.what() + ")");
    }
    return checkpoint_from_json(j);
}

/// Copies checkpoint parameters into a model; shapes must agree. A checkpoint
/// without time-stream parameters leaves the model's time stream at safe start.
inline void load_parameters(ts::DtsModel& m, const Checkpoint& c)
{
    using K = CheckpointError::Kind;
    bool has_time_stream = false;
    for (const auto& [path, t] : c.parameters) {
        if (!m.store.contains(path)) throw CheckpointError(K::shape_mismatch, "checkpoint: parameter '" + path + "' does not exist in the model");
        if (path.rfind("timestream.", 0) == 0) has_time_stream = true;
        auto& dst = m.store.value(path);
        if (dst.shape() != t.shape()) {
            throw CheckpointError(K::shape_mismatch, "checkpoint: parameter '" + path + "' has shape " + ad::Tensor::describe(t.shape()) +
                                                         ", model expects " + ad::Tensor::describe(dst.shape()));
        }
    }
    if (m.time_stream() && !has_time_stream) ts::safe_start_init(m);
    for (const auto& [path, t] : c.parameters) {
        auto& dst = m.store.value(path);
        std::copy(t.values().begin(), t.values().end(), dst.values().begin());
    }
}

/// Rebuilds a model from a checkpoint, optionally under a different config
/// (e.g. a base checkpoint loaded into a time-stream configuration).
inline ts::DtsModel model_from_checkpoint(const Checkpoint& c, const TrainConfig* override_cfg = nullptr)
{
    const TrainConfig& cfg = override_cfg ? *override_cfg : c.config;
    auto m = ts::DtsModel::create(cfg.model_config(), c.vocab, cfg.seed);
    load_parameters(m, c);
    return m;
}

} // namespace dts::harness
