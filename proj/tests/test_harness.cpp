#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "fixtures.hpp"

using namespace dts;
using namespace dts::harness;
using metrics::ScoredRow;

namespace fs = std::filesystem;

namespace {

// every (positive, negative) pair, ties worth one half
double brute_auc(const std::vector<double>& s, const std::vector<int>& y)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            den += 1.0;
            num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    return num / den;
}

const data::Dataset& tiny()
{
    static const auto ds = fixtures::synthetic_dataset(10, 12, 5);
    return ds;
}

TrainConfig quick(ts::DynamicsChoice dyn = ts::DynamicsChoice::complex)
{
    TrainConfig c;
    c.dynamics = dyn;
    c.epochs = 1;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    c.seed = 9;
    return c;
}

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("dts_harness_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Auc, Examples)
{
    std::vector<double> s{0.9, 0.1};
    std::vector<int> y{1, 0};
    EXPECT_EQ(metrics::auc(s, y), 1.0);
    std::vector<double> tied{0.5, 0.5};
    EXPECT_EQ(metrics::auc(tied, y), 0.5);
    std::vector<double> s5{0.1, 0.4, 0.35, 0.8, 0.6};
    std::vector<int> y5{0, 0, 1, 1, 0};
    EXPECT_NEAR(metrics::auc(s5, y5), brute_auc(s5, y5), 1e-15);
    std::vector<int> all_pos{1, 1};
    EXPECT_TRUE(std::isnan(metrics::auc(s, all_pos)));
}

TEST(Auc, WeightedSkipsOneClassUsers)
{
    std::vector<ScoredRow> rows{{"a", 0.9, 1}, {"a", 0.2, 0}, {"a", 0.3, 0}, {"b", 0.1, 1}, {"b", 0.8, 0}, {"c", 0.5, 1}};
    auto rep = metrics::weighted_auc(rows);
    EXPECT_EQ(rep.skipped_users, 1u);
    ASSERT_EQ(rep.per_user.size(), 2u);
    EXPECT_NEAR(rep.weighted_auc, (3 * 1.0 + 2 * 0.0) / 5, 1e-15);
}

TEST(Auc, ImpressionWeightedMean)
{
    // (2 impressions, AUC 1) and (3 impressions, AUC 0.5)
    std::vector<ScoredRow> rows{{"a", 0.9, 1}, {"a", 0.1, 0}, {"b", 0.4, 1}, {"b", 0.4, 0}, {"b", 0.4, 0}};
    auto rep = metrics::weighted_auc(rows);
    EXPECT_NEAR(rep.weighted_auc, 0.7, 1e-15);
    EXPECT_EQ(rep.skipped_users, 0u);
}

TEST(Auc, Errors)
{
    std::vector<ScoredRow> bad{{"a", std::nan(""), 1}, {"a", 0.1, 0}};
    EXPECT_THROW(metrics::weighted_auc(bad), NumericError);
    std::vector<ScoredRow> one_class{{"a", 0.3, 1}, {"b", 0.1, 1}};
    EXPECT_THROW(metrics::weighted_auc(one_class), DataError);
}

TEST(Auc, MatchesBruteForce)
{
    Rng rng(1);
    for (int inst = 0; inst < 100; ++inst) {
        std::vector<ScoredRow> rows;
        const auto users = 1 + rng.index(6);
        for (std::size_t u = 0; u < users; ++u) {
            const auto n = 2 + rng.index(30);
            for (std::size_t k = 0; k < n; ++k) {
                // coarse scores so ties happen
                rows.push_back({"u" + std::to_string(u), std::round(rng.uniform(0, 1) * 10) / 10, static_cast<int>(rng.index(2))});
            }
        }
        std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> by;
        for (const auto& r : rows) {
            by[r.user_id].first.push_back(r.score);
            by[r.user_id].second.push_back(r.label);
        }
        double num = 0.0, den = 0.0;
        for (const auto& [u, sy] : by) {
            const auto pos = std::count(sy.second.begin(), sy.second.end(), 1);
            if (pos == 0 || pos == static_cast<long>(sy.second.size())) continue;
            num += static_cast<double>(sy.first.size()) * brute_auc(sy.first, sy.second);
            den += static_cast<double>(sy.first.size());
        }
        if (den == 0) {
            EXPECT_THROW(metrics::weighted_auc(rows), DataError);
            continue;
        }
        EXPECT_NEAR(metrics::weighted_auc(rows).weighted_auc, num / den, 1e-12);
    }
}

TEST(RelaImpr, TableValues)
{
    EXPECT_EQ(metrics::rela_impr(0.7789, 0.7686), 1.34);
    EXPECT_EQ(metrics::rela_impr(0.8508, 0.7880), 7.97);
    EXPECT_EQ(metrics::rela_impr(0.6628, 0.6385), 3.81);
    EXPECT_EQ(metrics::rela_impr(0.7412, 0.7023), 5.54);
    EXPECT_EQ(metrics::rela_impr(0.71, 0.71), 0.0);
    EXPECT_THROW(metrics::rela_impr(0.7, 0.0), UsageError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged)
{
    auto cfg = quick();
    cfg.learning_rate = 0.0;
    auto m = ts::DtsModel::create(cfg.model_config(), base::Vocab::from_samples(tiny().train), cfg.seed);
    ts::safe_start_init(m);
    const auto before = m.store.entries();
    train_model(m, cfg, tiny().train);
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_TRUE(std::equal(before[i].value.values().begin(), before[i].value.values().end(), m.store.entries()[i].value.values().begin()))
            << before[i].path;
}

TEST(Train, BaseOnlyReportsNoGuideLoss)
{
    auto res = train(quick(ts::DynamicsChoice::none), tiny().train);
    ASSERT_EQ(res.history.size(), 1u);
    EXPECT_EQ(res.history[0].guide, 0.0);
    EXPECT_EQ(res.history[0].total, res.history[0].target);
    EXPECT_FALSE(res.model.time_stream());
}

TEST(Train, LossDecreasesOverEpochs)
{
    auto cfg = quick();
    cfg.epochs = 5;
    auto res = train(cfg, tiny().train);
    EXPECT_LT(res.history.back().total, res.history.front().total);
}

TEST(Train, EmptyTrainingSetThrows)
{
    std::vector<data::Sample> none;
    EXPECT_THROW(train(quick(), none), DataError);
    auto cfg = quick();
    cfg.batch_size = 0;
    EXPECT_THROW(train(cfg, tiny().train), UsageError);
}

TEST(Train, GroupedScoresMatchPerSampleForward)
{
    auto res = train(quick(), tiny().train);
    const auto scores = score_samples(res.model, tiny().test);
    for (std::size_t i = 0; i < tiny().test.size(); ++i) EXPECT_NEAR(scores[i], ts::dts_predict(res.model, tiny().test[i]), 1e-12);
}

TEST(Determinism, SameSeedGivesIdenticalCheckpoints)
{
    auto a = train(quick(), tiny().train);
    auto b = train(quick(), tiny().train);
    EXPECT_EQ(to_json(make_checkpoint(a.model, quick())).dump(), to_json(make_checkpoint(b.model, quick())).dump());
    auto other = quick();
    other.seed = 10;
    auto c = train(other, tiny().train);
    EXPECT_NE(to_json(make_checkpoint(a.model, quick())).dump(), to_json(make_checkpoint(c.model, quick())).dump());
}

TEST(Checkpoint, RoundTripIsBitwise)
{
    auto res = train(quick(), tiny().train);
    const auto ck = make_checkpoint(res.model, quick());
    const auto path = scratch("round.json");
    save_checkpoint(ck, path.string());
    const auto back = load_checkpoint(path.string());
    EXPECT_EQ(back.parameters.size(), ck.parameters.size());
    for (const auto& [p, t] : ck.parameters) {
        const auto& u = back.parameters.at(p);
        ASSERT_EQ(u.shape(), t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(std::bit_cast<std::uint64_t>(u[i]), std::bit_cast<std::uint64_t>(t[i])) << p;
    }
    auto m = model_from_checkpoint(back);
    for (const auto& s : tiny().test) EXPECT_EQ(ts::dts_predict(m, s), ts::dts_predict(res.model, s));
    EXPECT_EQ(to_json(back).dump(), to_json(ck).dump());
}

TEST(Checkpoint, DistinctLoadErrors)
{
    auto res = train(quick(ts::DynamicsChoice::none), tiny().train);
    auto j = to_json(make_checkpoint(res.model, quick(ts::DynamicsChoice::none)));
    auto kind_of = [](const fs::path& p) {
        try {
            load_checkpoint(p.string());
        } catch (const CheckpointError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    const auto text = j.dump();
    {
        std::ofstream(scratch("trunc.json")) << text.substr(0, text.size() / 2);
        EXPECT_EQ(kind_of(scratch("trunc.json")), static_cast<int>(CheckpointError::Kind::malformed_json));
    }
    {
        auto v = j;
        v["format_version"] = 99;
        std::ofstream(scratch("version.json")) << v.dump();
        EXPECT_EQ(kind_of(scratch("version.json")), static_cast<int>(CheckpointError::Kind::version_mismatch));
    }
    {
        auto v = j;
        v["parameters"]["base.mlp.layer3.bias"]["values"].push_back(1.0);
        std::ofstream(scratch("shape.json")) << v.dump();
        EXPECT_EQ(kind_of(scratch("shape.json")), static_cast<int>(CheckpointError::Kind::shape_mismatch));
    }
    {
        auto v = j;
        v.erase("vocab");
        std::ofstream(scratch("missing.json")) << v.dump();
        EXPECT_EQ(kind_of(scratch("missing.json")), static_cast<int>(CheckpointError::Kind::missing_field));
    }
    EXPECT_THROW(load_checkpoint(scratch("does_not_exist.json").string()), DataError);
}

TEST(Checkpoint, WrongModelShapeRejected)
{
    auto res = train(quick(ts::DynamicsChoice::none), tiny().train);
    auto ck = make_checkpoint(res.model, quick(ts::DynamicsChoice::none));
    ck.parameters.at("base.mlp.layer3.weight") = ad::Tensor::zeros({1, 7});
    try {
        model_from_checkpoint(ck);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::shape_mismatch);
    }
}

TEST(Checkpoint, BaseCheckpointIntoTimeStreamConfigReproducesBase)
{
    for (auto kind : {base::BaseKind::dnn, base::BaseKind::din}) {
        auto base_cfg = quick(ts::DynamicsChoice::none);
        base_cfg.base_kind = kind;
        auto res = train(base_cfg, tiny().train);
        const auto ck = make_checkpoint(res.model, base_cfg);
        for (auto dyn : {ts::DynamicsChoice::simple, ts::DynamicsChoice::complex}) {
            auto cfg = base_cfg;
            cfg.dynamics = dyn;
            auto m = model_from_checkpoint(ck, &cfg);
            for (const auto& s : tiny().test) EXPECT_NEAR(ts::dts_predict(m, s), ts::base_predict(res.model, s), 1e-12);
        }
    }
}

TEST(Checkpoint, InitFromBaseKeepsTraining)
{
    auto base_cfg = quick(ts::DynamicsChoice::none);
    auto res = train(base_cfg, tiny().train);
    const auto ck = make_checkpoint(res.model, base_cfg);
    auto res2 = train(quick(), tiny().train, &ck);
    EXPECT_TRUE(res2.model.time_stream());
    EXPECT_EQ(res2.history.size(), 1u);
}

TEST(PredictAtTime, MatchesForwardAtEachTime)
{
    auto res = train(quick(), tiny().train);
    const auto ck = make_checkpoint(res.model, quick());
    for (std::size_t k = 0; k < 5; ++k) {
        const auto& s = tiny().test[k];
        std::vector<double> q{s.last_time(), s.last_time() + 0.25, s.last_time() + 1.5};
        const auto p = predict_at_time(ck, s, q);
        for (std::size_t i = 0; i < q.size(); ++i) {
            auto t = s;
            t.next_time = q[i];
            EXPECT_NEAR(p[i], ts::dts_predict(res.model, t), 1e-12);
        }
    }
}

TEST(PredictAtTime, SafeStartIsFlat)
{
    auto cfg = quick();
    auto m = ts::DtsModel::create(cfg.model_config(), base::Vocab::from_samples(tiny().train), 1);
    ts::safe_start_init(m);
    const auto ck = make_checkpoint(m, cfg);
    const auto& s = tiny().test.front();
    std::vector<double> q{s.last_time(), s.last_time() + 0.5, s.last_time() + 3.0};
    const auto p = predict_at_time(ck, s, q);
    EXPECT_NEAR(p[1], p[0], 1e-12);
    EXPECT_NEAR(p[2], p[0], 1e-12);
}

TEST(PredictAtTime, TrainedModelVariesOverOnePeriod)
{
    auto cfg = quick();
    cfg.epochs = 2;
    auto res = train(cfg, tiny().train);
    const auto ck = make_checkpoint(res.model, cfg);
    const auto& s = tiny().test.front();
    std::vector<double> q;
    for (int k = 0; k <= 8; ++k) q.push_back(s.last_time() + k / 8.0);
    const auto p = predict_at_time(ck, s, q);
    EXPECT_GT(*std::max_element(p.begin(), p.end()) - *std::min_element(p.begin(), p.end()), 0.0);
}

TEST(Train, AdaptiveTimeSeesRescaling)
{
    for (bool adaptive : {true, false}) {
        auto cfg = quick();
        cfg.adaptive_time = adaptive;
        cfg.epochs = 2;
        auto res = train(cfg, tiny().train);
        double gap = 0.0;
        for (const auto& s : tiny().test) {
            auto t = s;
            for (auto& b : t.behaviors) b.time *= 2.5;
            t.next_time *= 2.5;
            gap = std::max(gap, std::abs(ts::dts_predict(res.model, s) - ts::dts_predict(res.model, t)));
        }
        if (adaptive)
            EXPECT_GT(gap, 0.0);
        else
            EXPECT_EQ(gap, 0.0);
    }
}

TEST(Evaluate, ReportJsonShape)
{
    auto res = train(quick(), tiny().train);
    const auto rep = evaluate(res.model, tiny().test);
    const auto j = to_json(rep);
    EXPECT_TRUE(j.contains("weighted_auc"));
    EXPECT_EQ(j["per_user"].size(), rep.per_user.size());
    EXPECT_GE(rep.weighted_auc, 0.0);
    EXPECT_LE(rep.weighted_auc, 1.0);
}

TEST(Ablation, ArmNamesAndConfigs)
{
    EXPECT_EQ(arm_name(Arm::base_model), "BaseModel");
    EXPECT_EQ(arm_name(Arm::no_adaptive_step), "w/o adaptive step (RNN)");
    EXPECT_EQ(arm_name(Arm::simple_form), "w simple form");
    EXPECT_EQ(arm_name(Arm::no_guide_loss), "w/o guide loss");
    EXPECT_EQ(arm_name(Arm::dts), "DTS");
    TrainConfig proto;
    EXPECT_EQ(arm_config(Arm::base_model, base::BaseKind::din, proto, 2).dynamics, ts::DynamicsChoice::none);
    EXPECT_FALSE(arm_config(Arm::no_adaptive_step, base::BaseKind::din, proto, 2).adaptive_time);
    EXPECT_EQ(arm_config(Arm::simple_form, base::BaseKind::din, proto, 2).dynamics, ts::DynamicsChoice::simple);
    EXPECT_EQ(arm_config(Arm::no_guide_loss, base::BaseKind::din, proto, 2).guide_mode, ts::GuideMode::off);
    EXPECT_EQ(arm_config(Arm::dts, base::BaseKind::din, proto, 2).seed, 2u);
}

TEST(Ablation, BaseArmMatchesStandaloneTraining)
{
    TrainConfig proto = quick();
    auto cfg = arm_config(Arm::base_model, base::BaseKind::din, proto, 4);
    auto standalone = quick(ts::DynamicsChoice::none);
    standalone.base_kind = base::BaseKind::din;
    standalone.seed = 4;
    auto a = train(cfg, tiny().train);
    auto b = train(standalone, tiny().train);
    EXPECT_EQ(to_json(make_checkpoint(a.model, cfg))["parameters"].dump(), to_json(make_checkpoint(b.model, standalone))["parameters"].dump());
}

TEST(Ablation, CsvColumns)
{
    AblationOptions opt;
    opt.bases = {base::BaseKind::dnn};
    opt.seeds = {1};
    opt.proto = quick();
    auto rep = run_ablation(tiny(), opt);
    std::ostringstream csv;
    write_csv(csv, rep);
    std::istringstream in(csv.str());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "base,seed,BaseModel,w/o adaptive step (RNN),w simple form,w/o guide loss,DTS,RelaImpr");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 2);
    EXPECT_EQ(rep.find(base::BaseKind::dnn, Arm::base_model)->rela_impr, 0.0);
}

#ifdef DTS_CLI
namespace {

int run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + DTS_CLI + "\" " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Cli, EndToEndAndExitCodes)
{
    const auto dir = scratch("cli");
    fs::remove_all(dir);
    ASSERT_EQ(run_cli("gen-data --users 6 --events 10 --seed 3 --out " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "train.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "test.jsonl"));
    const auto ck = (dir / "model.json").string();
    ASSERT_EQ(run_cli("train --data " + dir.string() + " --epochs 1 --batch 16 --seed 1 --out " + ck), 0);
    EXPECT_EQ(run_cli("eval --ckpt " + ck + " --data " + dir.string() + " --report " + (dir / "report.json").string()), 0);
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_TRUE(report.contains("weighted_auc"));

    EXPECT_EQ(run_cli("train --dynamics sideways --data " + dir.string() + " --out " + ck), 1);
    EXPECT_EQ(run_cli("--no-such-flag"), 1);
    EXPECT_EQ(run_cli("eval --ckpt " + (dir / "missing.json").string() + " --data " + dir.string()), 2);
    std::ofstream(dir / "broken.json") << "{\"format_version\": 1, \"conf";
    EXPECT_EQ(run_cli("eval --ckpt " + (dir / "broken.json").string() + " --data " + dir.string()), 2);
}
#endif
