// Command-line front end: data generation, training, evaluation, prediction
// and ablation runs.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dts/ablation.hpp"

namespace fs = std::filesystem;
using namespace dts;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, numeric = 3 };

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

double parse_double(const std::string& s, const char* what)
{
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size()) throw UsageError(std::string("invalid ") + what + " '" + s + "'");
    return v;
}

// A dataset argument is either a samples file or a gen-data/build-data
// directory, in which case `file` inside it is used.
std::string samples_path(const std::string& data, const char* file)
{
    if (fs::is_directory(data)) return (fs::path(data) / file).string();
    return data;
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    body(out);
    if (!out) throw DataError("failed writing '" + path + "'");
}

void write_dataset(const std::string& dir, const data::Dataset& ds)
{
    write_file((fs::path(dir) / "train.jsonl").string(), [&](std::ostream& o) { data::write_samples(o, ds.train); });
    write_file((fs::path(dir) / "test.jsonl").string(), [&](std::ostream& o) { data::write_samples(o, ds.test); });
}

struct TrainArgs {
    std::string data, out, init_from;
    std::string base = "dnn", dynamics = "complex", solver = "rk4", guide = "bpr";
    int substeps = 4;
    double lambda = ts::default_lambda;
    bool no_adaptive_step = false;
    int epochs = 5;
    std::size_t batch = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    harness::TrainConfig config() const
    {
        harness::TrainConfig c;
        c.base_kind = base::base_kind_from_string(base);
        c.dynamics = ts::dynamics_from_string(dynamics);
        c.solver.method = ode::method_from_string(solver);
        c.solver.substeps_per_unit = substeps;
        c.lambda = lambda;
        c.guide_mode = ts::guide_from_string(guide);
        c.adaptive_time = !no_adaptive_step;
        c.epochs = epochs;
        c.batch_size = batch;
        c.learning_rate = lr;
        c.seed = seed;
        c.validate();
        return c;
    }
};

void add_model_options(CLI::App* cmd, TrainArgs& a)
{
    cmd->add_option("--base", a.base, "Base model")->check(CLI::IsMember({"dnn", "din"}));
    cmd->add_option("--dynamics", a.dynamics, "Time-stream dynamics")->check(CLI::IsMember({"none", "simple", "complex"}));
    cmd->add_option("--solver", a.solver, "ODE solver")->check(CLI::IsMember({"euler", "rk4", "rk4_adaptive"}));
    cmd->add_option("--substeps", a.substeps, "Fixed-step substeps per time unit")->check(CLI::PositiveNumber);
    cmd->add_option("--lambda", a.lambda, "Guide loss weight")->check(CLI::NonNegativeNumber);
    cmd->add_option("--guide", a.guide, "Guide loss form")->check(CLI::IsMember({"bpr", "as_written", "off"}));
    cmd->add_flag("--no-adaptive-step", a.no_adaptive_step, "Treat every interval as one time unit");
    cmd->add_option("--epochs", a.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch", a.batch, "Samples per batch")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", a.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", a.seed, "Random seed");
}

void print_epoch(int epoch, const harness::EpochLoss& l)
{
    std::printf("epoch %d  total %.6f  target %.6f  guide %.6f\n", epoch, l.total, l.target, l.guide);
    std::fflush(stdout);
}

int run(int argc, char** argv)
{
    CLI::App app{"Continuous-time interest evolution for CTR prediction"};
    app.require_subcommand(1);

    // gen-data
    data::SyntheticConfig syn;
    std::string gen_out;
    std::size_t gen_max_len = data::default_max_len, gen_neg = 1;
    auto* gen = app.add_subcommand("gen-data", "Generate the periodic synthetic clickstream and its samples");
    gen->add_option("--users", syn.num_users, "Number of users")->check(CLI::PositiveNumber);
    gen->add_option("--events", syn.events_per_user, "Clicks per user")->check(CLI::Range(2, 1000000));
    gen->add_option("--period", syn.period, "Preference period in days")->check(CLI::PositiveNumber);
    gen->add_option("--strength", syn.preference_strength, "Probability of clicking the preferred pool");
    gen->add_option("--seed", syn.seed, "Random seed");
    gen->add_option("--max-len", gen_max_len, "Longest behavior prefix")->check(CLI::PositiveNumber);
    gen->add_option("--neg", gen_neg, "Negatives per positive")->check(CLI::NonNegativeNumber);
    gen->add_option("--out", gen_out, "Output directory")->required();

    // build-data
    std::string build_events, build_out;
    data::BuildOptions build_opt;
    auto* build = app.add_subcommand("build-data", "Turn an event log (JSONL) into train/test samples");
    build->add_option("--events", build_events, "Event log")->required();
    build->add_option("--max-len", build_opt.max_len, "Longest behavior prefix")->check(CLI::PositiveNumber);
    build->add_option("--neg", build_opt.neg_per_pos, "Negatives per positive")->check(CLI::NonNegativeNumber);
    build->add_option("--seed", build_opt.seed, "Negative sampling seed");
    build->add_option("--out", build_out, "Output directory")->required();

    // train
    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
    train->add_option("--data", ta.data, "Samples file or dataset directory")->required();
    add_model_options(train, ta);
    train->add_option("--init-from", ta.init_from, "Start from this checkpoint");
    train->add_option("--out", ta.out, "Checkpoint path")->required();

    // eval
    std::string eval_ckpt, eval_data, eval_report;
    auto* eval = app.add_subcommand("eval", "Weighted AUC of a checkpoint on a dataset");
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
    eval->add_option("--data", eval_data, "Samples file or dataset directory")->required();
    eval->add_option("--report", eval_report, "Write the JSON report here");

    // predict
    std::string pred_ckpt, pred_sample, pred_times;
    auto* predict = app.add_subcommand("predict", "Click probability of a sample at several times");
    predict->add_option("--ckpt", pred_ckpt, "Checkpoint")->required();
    predict->add_option("--sample", pred_sample, "Sample as inline JSON or a file holding one")->required();
    predict->add_option("--times", pred_times, "Comma-separated query times (days)")->required();

    // ablation
    std::string abl_data, abl_out, abl_bases = "dnn,din", abl_seeds = "1,2,3", abl_arms;
    TrainArgs abl_model;
    auto* ablation = app.add_subcommand("ablation", "Train and compare the five ablation arms");
    ablation->add_option("--data", abl_data, "Dataset directory (train.jsonl, test.jsonl)")->required();
    ablation->add_option("--bases", abl_bases, "Comma-separated base models");
    ablation->add_option("--seeds", abl_seeds, "Comma-separated seeds");
    ablation->add_option("--arms", abl_arms, "Comma-separated arm indices 0-4 (default: all)");
    ablation->add_option("--solver", abl_model.solver, "ODE solver")->check(CLI::IsMember({"euler", "rk4", "rk4_adaptive"}));
    ablation->add_option("--substeps", abl_model.substeps, "Fixed-step substeps per time unit")->check(CLI::PositiveNumber);
    ablation->add_option("--lambda", abl_model.lambda, "Guide loss weight")->check(CLI::NonNegativeNumber);
    ablation->add_option("--epochs", abl_model.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    ablation->add_option("--batch", abl_model.batch, "Samples per batch")->check(CLI::PositiveNumber);
    ablation->add_option("--lr", abl_model.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    ablation->add_option("--out", abl_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? Exit::ok : Exit::usage;
    }

    if (gen->parsed()) {
        fs::create_directories(gen_out);
        const auto synth = data::generate_synthetic(syn);
        write_file((fs::path(gen_out) / "events.jsonl").string(), [&](std::ostream& o) { data::write_events(o, synth.events); });
        write_file((fs::path(gen_out) / "impressions.jsonl").string(), [&](std::ostream& o) {
            for (const auto& im : synth.impressions) o << data::to_json(im).dump() << '\n';
        });
        data::BuildOptions bo;
        bo.max_len = gen_max_len;
        bo.neg_per_pos = gen_neg;
        bo.seed = syn.seed;
        const auto ds = data::build_samples(data::group_by_user(synth.events), bo);
        write_dataset(gen_out, ds);
        std::printf("%zu events, %zu train samples, %zu test samples -> %s\n", synth.events.size(), ds.train.size(), ds.test.size(),
                    gen_out.c_str());
    } else if (build->parsed()) {
        fs::create_directories(build_out);
        const auto ds = data::build_samples(data::group_by_user(data::parse_events_file(build_events)), build_opt);
        write_dataset(build_out, ds);
        std::printf("%zu train samples, %zu test samples -> %s\n", ds.train.size(), ds.test.size(), build_out.c_str());
    } else if (train->parsed()) {
        const auto cfg = ta.config();
        const auto samples = data::read_samples_file(samples_path(ta.data, "train.jsonl"));
        std::optional<harness::Checkpoint> init;
        if (!ta.init_from.empty()) init = harness::load_checkpoint(ta.init_from);
        auto res = harness::train(cfg, samples, init ? &*init : nullptr, print_epoch);
        harness::save_checkpoint(harness::make_checkpoint(res.model, cfg), ta.out);
        std::printf("checkpoint -> %s\n", ta.out.c_str());
    } else if (eval->parsed()) {
        const auto ckpt = harness::load_checkpoint(eval_ckpt);
        auto m = harness::model_from_checkpoint(ckpt);
        const auto samples = data::read_samples_file(samples_path(eval_data, "test.jsonl"));
        const auto rep = harness::evaluate(m, samples);
        std::printf("weighted AUC %.6f over %zu users (%zu skipped)\n", rep.weighted_auc, rep.per_user.size(), rep.skipped_users);
        if (!eval_report.empty()) write_file(eval_report, [&](std::ostream& o) { o << harness::to_json(rep).dump(2) << '\n'; });
    } else if (predict->parsed()) {
        std::string text = pred_sample;
        if (fs::is_regular_file(pred_sample)) {
            std::ifstream in(pred_sample);
            std::stringstream ss;
            ss << in.rdbuf();
            text = ss.str();
        }
        data::Sample s;
        try {
            s = data::sample_from_json(nlohmann::json::parse(text));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("predict: sample is not valid JSON (") + e.what() + ")");
        }
        std::vector<double> times;
        for (const auto& tok : split(pred_times, ',')) times.push_back(parse_double(tok, "query time"));
        if (times.empty()) throw UsageError("predict: no query times");
        const auto ps = harness::predict_at_time(harness::load_checkpoint(pred_ckpt), s, times);
        nlohmann::json out = nlohmann::json::array();
        for (std::size_t i = 0; i < times.size(); ++i) out.push_back({{"time", times[i]}, {"p", ps[i]}});
        std::printf("%s\n", out.dump().c_str());
    } else if (ablation->parsed()) {
        harness::AblationOptions opt;
        opt.bases.clear();
        for (const auto& b : split(abl_bases, ',')) opt.bases.push_back(base::base_kind_from_string(b));
        opt.seeds.clear();
        for (const auto& s : split(abl_seeds, ',')) opt.seeds.push_back(static_cast<std::uint64_t>(parse_double(s, "seed")));
        if (!abl_arms.empty()) {
            opt.arms.clear();
            for (const auto& a : split(abl_arms, ',')) {
                const auto i = static_cast<std::size_t>(parse_double(a, "arm index"));
                if (i >= harness::all_arms.size()) throw UsageError("ablation: arm index must be 0-4");
                opt.arms.push_back(harness::all_arms[i]);
            }
        }
        opt.proto = abl_model.config();
        data::Dataset ds;
        ds.train = data::read_samples_file(samples_path(abl_data, "train.jsonl"));
        ds.test = data::read_samples_file(samples_path(abl_data, "test.jsonl"));
        const auto rep = harness::run_ablation(ds, opt, [](base::BaseKind b, harness::Arm a, std::uint64_t seed, double auc) {
            std::printf("%s | %-24s | seed %llu | AUC %.6f\n", base::to_string(b).c_str(), harness::arm_name(a).c_str(),
                        static_cast<unsigned long long>(seed), auc);
            std::fflush(stdout);
        });
        fs::create_directories(abl_out);
        write_file((fs::path(abl_out) / "ablation.csv").string(), [&](std::ostream& o) { harness::write_csv(o, rep); });
        write_file((fs::path(abl_out) / "ablation.txt").string(), [&](std::ostream& o) { harness::write_table(o, rep); });
        harness::write_table(std::cout, rep);
    }
    return Exit::ok;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return Exit::usage;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return Exit::numeric;
    } catch (const Error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return Exit::data_error;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return Exit::data_error;
    }
}
