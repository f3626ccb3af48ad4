// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance --only 7   a single criterion

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "fixtures.hpp"

using namespace dts;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 3)
{
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// metric reproduction on the two AUC tables
Outcome criterion1()
{
    struct Row { double base, dts, impr; };
    const std::array<Row, 10> rows{{
        {0.7686, 0.7789, 1.34}, {0.7799, 0.8304, 6.48}, {0.7735, 0.8390, 8.47}, {0.7880, 0.8508, 7.97}, {0.8453, 0.8981, 6.25},
        {0.6385, 0.6628, 3.81}, {0.6601, 0.6763, 2.45}, {0.6478, 0.7010, 8.21}, {0.7008, 0.7268, 3.72}, {0.7023, 0.7412, 5.54},
    }};
    double worst = 0.0;
    for (const auto& r : rows) worst = std::max(worst, std::abs(metrics::rela_impr(r.dts, r.base) - r.impr));
    return {worst <= 0.01 + 1e-9, "max |delta| = " + fmt(worst) + " pp over 10 rows"};
}

// safe start reproduces the base output
Outcome criterion2()
{
    double worst = 0.0;
    for (auto kind : {base::BaseKind::dnn, base::BaseKind::din}) {
        for (auto dyn : {ts::DynamicsChoice::simple, ts::DynamicsChoice::complex}) {
            ts::ModelConfig cfg;
            cfg.base.kind = kind;
            cfg.dynamics = dyn;
            auto m = ts::DtsModel::create(cfg, fixtures::full_vocab(), 11);
            fixtures::perturb(m.store, 0.2, 12);
            ts::safe_start_init(m);
            Rng rng(13);
            for (int k = 0; k < 1000; ++k) {
                auto s = fixtures::random_sample(rng, 1 + rng.index(20));
                worst = std::max(worst, std::abs(ts::dts_predict(m, s) - ts::base_predict(m, s)));
            }
        }
    }
    return {worst <= 1e-12, "max |p_dts - p_base| = " + fmt(worst) + " over 4 x 1000 samples"};
}

// end-to-end gradients against central differences
Outcome criterion3()
{
    double worst = 0.0;
    std::string where;
    std::size_t coords = 0;
    for (auto kind : {base::BaseKind::dnn, base::BaseKind::din}) {
        ts::ModelConfig cfg;
        cfg.base.kind = kind;
        cfg.dynamics = ts::DynamicsChoice::complex;
        cfg.solver.method = ode::Method::rk4;
        cfg.solver.substeps_per_unit = 4;
        auto m = ts::DtsModel::create(cfg, fixtures::full_vocab(), 21);
        fixtures::perturb(m.store, 0.2, 22);
        Rng rng(23);
        auto s = fixtures::random_sample(rng, 4);
        s.label = 1;
        auto loss = [&](ad::Tape& tape) {
            auto r = ts::dts_forward(tape, m, s);
            const int label = s.label;
            ad::Var target = base::target_loss(std::span<const ad::Var>(&r.p, 1), std::span<const int>(&label, 1));
            Rng neg(24);
            return ts::total_loss(target, ts::sample_guide_loss(tape, m, s, r.prefix, neg), m.cfg.lambda);
        };
        auto r = fixtures::check_gradients(m.store, loss, 0, 1e-6);
        coords += r.coordinates;
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            where = base::to_string(kind) + ":" + r.worst_path;
        }
    }
    return {worst <= 1e-4, "max rel error = " + fmt(worst) + " at " + where + " (" + std::to_string(coords) + " coordinates)"};
}

double solve_exp(ode::Method method, int substeps)
{
    ad::Tape tape;
    ode::SolverConfig cfg;
    cfg.method = method;
    cfg.substeps_per_unit = substeps;
    const std::vector<double> times{1.0};
    auto f = [](ad::Var z, double) { return z; };
    return ode::solve_trajectory(f, tape.constant(ad::Tensor::vector({1.0})), 0.0, times, cfg).states.back().item();
}

// solver order and the closed form
Outcome criterion4()
{
    const double e = std::exp(1.0);
    const double rk4 = std::abs(solve_exp(ode::Method::rk4, 4) - e) / std::abs(solve_exp(ode::Method::rk4, 8) - e);
    const double euler = std::abs(solve_exp(ode::Method::euler, 32) - e) / std::abs(solve_exp(ode::Method::euler, 64) - e);

    ad::ParameterStore store;
    Rng rng(31);
    auto dyn = ode::Dynamics::create(store, "dyn", ode::DynamicsKind::simple, 36, rng);
    for (auto& a : store.value(dyn.alpha).values()) a = rng.normal(0.0, 1.0);
    double closed = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> times;
        double t = 0.0;
        for (int i = 0; i < 10; ++i) times.push_back(t += rng.uniform(0.0, 3.0));
        std::vector<double> z(36);
        for (auto& x : z) x = rng.normal(0.0, 1.0);
        const auto z0 = ad::Tensor::vector(z);
        auto numeric = ode::solve_trajectory(dyn, store, z0, 0.0, times, ode::SolverConfig{});
        ad::Tape tape;
        auto exact = ode::simple_trajectory(tape.param(store, dyn.alpha), tape.constant(z0), 0.0, times);
        for (std::size_t i = 0; i < times.size(); ++i)
            for (std::size_t j = 0; j < 36; ++j) closed = std::max(closed, std::abs(numeric.states[i][j] - exact.states[i].value()[j]));
    }
    const bool pass = rk4 >= 12 && rk4 <= 20 && euler >= 1.8 && euler <= 2.2 && closed <= 1e-12;
    return {pass, "rk4 ratio " + fmt(rk4, 4) + ", euler ratio " + fmt(euler, 4) + ", closed-form gap " + fmt(closed)};
}

// incremental inference equals from-scratch forwards
Outcome criterion5()
{
    double worst = 0.0;
    std::size_t checks = 0;
    for (auto method : {ode::Method::euler, ode::Method::rk4}) {
        for (auto dyn : {ts::DynamicsChoice::simple, ts::DynamicsChoice::complex}) {
            ts::ModelConfig cfg;
            cfg.base.kind = base::BaseKind::din;
            cfg.dynamics = dyn;
            cfg.solver.method = method;
            auto m = ts::DtsModel::create(cfg, fixtures::full_vocab(), 41);
            fixtures::perturb(m.store, 0.3, 42);
            Rng rng(43);
            for (int k = 0; k < 100; ++k) {
                auto s = fixtures::random_sample(rng, 1 + rng.index(15));
                std::vector<double> q;
                double t = s.last_time();
                for (int i = 0; i < 5; ++i) q.push_back(t += rng.uniform(0.0, 2.0));
                const auto p = ts::predict_at_times(m, s, q);
                for (std::size_t i = 0; i < q.size(); ++i) {
                    auto full = s;
                    full.next_time = q[i];
                    worst = std::max(worst, std::abs(p[i] - ts::dts_predict(m, full)));
                    ++checks;
                }
            }
        }
    }
    return {worst <= 1e-12, "max |incremental - scratch| = " + fmt(worst) + " over " + std::to_string(checks) + " queries"};
}

double brute_weighted(const std::vector<metrics::ScoredRow>& rows)
{
    std::map<std::string, std::vector<const metrics::ScoredRow*>> by;
    for (const auto& r : rows) by[r.user_id].push_back(&r);
    double num = 0.0, den = 0.0;
    for (const auto& [u, rs] : by) {
        double wins = 0.0, pairs = 0.0;
        for (const auto* a : rs)
            for (const auto* b : rs) {
                if (a->label != 1 || b->label != 0) continue;
                pairs += 1;
                wins += a->score > b->score ? 1.0 : a->score == b->score ? 0.5 : 0.0;
            }
        if (pairs == 0) continue;
        num += static_cast<double>(rs.size()) * wins / pairs;
        den += static_cast<double>(rs.size());
    }
    return num / den;
}

// weighted AUC against pair counting
Outcome criterion6()
{
    Rng rng(51);
    double worst = 0.0;
    int instances = 0;
    while (instances < 100) {
        std::vector<metrics::ScoredRow> rows;
        const auto users = 1 + rng.index(10);
        for (std::size_t u = 0; u < users; ++u) {
            const auto n = 2 + rng.index(40);
            for (std::size_t k = 0; k < n; ++k)
                rows.push_back({"u" + std::to_string(u), std::round(rng.uniform(0, 1) * 20) / 20, static_cast<int>(rng.index(2))});
        }
        const double oracle = brute_weighted(rows);
        if (std::isnan(oracle)) continue;
        worst = std::max(worst, std::abs(metrics::weighted_auc(rows).weighted_auc - oracle));
        ++instances;
    }
    return {worst <= 1e-12, "max |weighted_auc - brute force| = " + fmt(worst) + " over 100 instances"};
}

// controlled time-of-day experiment
Outcome criterion7()
{
    const auto start = std::chrono::steady_clock::now();
    data::SyntheticConfig sc;
    sc.num_users = 2000;
    sc.events_per_user = 30;
    sc.period = 1.0;
    sc.preference_strength = 0.9;
    sc.phases = {0.0, 0.5};
    sc.seed = 0;
    const auto ds = data::build_samples(data::group_by_user(data::generate_synthetic(sc).events), data::BuildOptions{});

    harness::TrainConfig proto;
    proto.solver.method = ode::Method::rk4;
    proto.guide_mode = ts::GuideMode::bpr;
    proto.lambda = 0.5;
    proto.epochs = 5;
    proto.batch_size = 128;

    const std::array<harness::Arm, 3> arms{harness::Arm::base_model, harness::Arm::dts, harness::Arm::no_adaptive_step};
    std::array<double, 3> mean{};
    for (std::size_t a = 0; a < arms.size(); ++a) {
        for (std::uint64_t seed : {1, 2, 3}) {
            auto res = harness::train(harness::arm_config(arms[a], base::BaseKind::dnn, proto, seed), ds.train);
            const double auc = harness::evaluate(res.model, ds.test).weighted_auc;
            std::cout << "  [7] " << harness::arm_name(arms[a]) << " seed " << seed << ": AUC " << fmt(auc, 5) << std::endl;
            mean[a] += auc / 3.0;
        }
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    const bool pass = mean[1] >= mean[0] + 0.05 && mean[1] >= mean[2] + 0.02 && minutes <= 30.0;
    return {pass, "mean AUC base " + fmt(mean[0], 4) + ", DTS " + fmt(mean[1], 4) + ", fixed-step " + fmt(mean[2], 4) +
                      " (need DTS >= base + 0.05 and >= fixed-step + 0.02); " + fmt(minutes, 3) + " min"};
}

std::string checkpoint_text(const ts::DtsModel& m, const harness::TrainConfig& cfg)
{
    return harness::to_json(harness::make_checkpoint(m, cfg)).dump();
}

// determinism and persistence
Outcome criterion8()
{
    const auto ds = fixtures::synthetic_dataset(20, 15, 81);
    harness::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.seed = 82;
    std::vector<std::string> problems;

    auto a = harness::train(cfg, ds.train);
    auto b = harness::train(cfg, ds.train);
    if (checkpoint_text(a.model, cfg) != checkpoint_text(b.model, cfg)) problems.push_back("retraining differs");

    const auto path = fs::temp_directory_path() / "dts_acceptance_ckpt.json";
    const auto ck = harness::make_checkpoint(a.model, cfg);
    harness::save_checkpoint(ck, path.string());
    const auto back = harness::load_checkpoint(path.string());
    for (const auto& [p, t] : ck.parameters) {
        const auto& u = back.parameters.at(p);
        if (u.shape() != t.shape() || std::memcmp(u.values().data(), t.values().data(), t.size() * sizeof(double)) != 0) {
            problems.push_back("round trip changed " + p);
            break;
        }
    }
    auto reloaded = harness::model_from_checkpoint(back);
    for (const auto& s : ds.test)
        if (ts::dts_predict(reloaded, s) != ts::dts_predict(a.model, s)) {
            problems.push_back("reloaded predictions differ");
            break;
        }

    double worst = 0.0;
    auto base_cfg = cfg;
    base_cfg.dynamics = ts::DynamicsChoice::none;
    for (auto kind : {base::BaseKind::dnn, base::BaseKind::din}) {
        base_cfg.base_kind = kind;
        auto base_run = harness::train(base_cfg, ds.train);
        const auto base_ck = harness::make_checkpoint(base_run.model, base_cfg);
        for (auto dyn : {ts::DynamicsChoice::simple, ts::DynamicsChoice::complex}) {
            auto dts_cfg = base_cfg;
            dts_cfg.dynamics = dyn;
            auto m = harness::model_from_checkpoint(base_ck, &dts_cfg);
            for (const auto& s : ds.test) worst = std::max(worst, std::abs(ts::dts_predict(m, s) - ts::base_predict(base_run.model, s)));
        }
    }
    fs::remove(path);
    if (worst > 1e-12) problems.push_back("base checkpoint in DTS config drifts by " + fmt(worst));

    std::string detail = problems.empty() ? "bitwise retrain, bitwise round trip, base reload gap " + fmt(worst) : problems.front();
    return {problems.empty(), detail};
}

} // namespace

int main(int argc, char** argv)
{
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: acceptance [--only N]\n";
            return 2;
        }
    }
    using Fn = Outcome (*)();
    const std::array<Fn, 8> criteria{criterion1, criterion2, criterion3, criterion4, criterion5, criterion6, criterion7, criterion8};
    if (only < 0 || only > 8) {
        std::cerr << "criterion must be 1-8\n";
        return 2;
    }

    int failed = 0;
    for (int c = 1; c <= 8; ++c) {
        if (only && c != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[c - 1]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << fmt(secs, 3) << " s]"
                  << std::endl;
        if (!o.pass) ++failed;
    }
    return failed ? 1 : 0;
}
