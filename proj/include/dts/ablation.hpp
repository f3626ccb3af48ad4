#pragma once

// Ablation runner: each base model against four time-stream variants.

#include <array>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dts/train.hpp"

namespace dts::harness {

enum class Arm { base_model, no_adaptive_step, simple_form, no_guide_loss, dts };

inline constexpr std::array<Arm, 5> all_arms{Arm::base_model, Arm::no_adaptive_step, Arm::simple_form, Arm::no_guide_loss, Arm::dts};

inline std::string arm_name(Arm a)
{
    switch (a) {
    case Arm::base_model: return "BaseModel";
    case Arm::no_adaptive_step: return "w/o adaptive step (RNN)";
    case Arm::simple_form: return "w simple form";
    case Arm::no_guide_loss: return "w/o guide loss";
    case Arm::dts: return "DTS";
    }
    return "?";
}

/// `proto` supplies everything an arm does not override (solver, λ, epochs, ...).
inline TrainConfig arm_config(Arm a, base::BaseKind kind, const TrainConfig& proto, std::uint64_t seed)
{
    TrainConfig c = proto;
    c.base_kind = kind;
    c.seed = seed;
    c.dynamics = ts::DynamicsChoice::complex;
    c.adaptive_time = true;
    if (c.guide_mode == ts::GuideMode::off) c.guide_mode = ts::GuideMode::bpr;
    switch (a) {
    case Arm::base_model: c.dynamics = ts::DynamicsChoice::none; break;
    case Arm::no_adaptive_step: c.adaptive_time = false; break;
    case Arm::simple_form: c.dynamics = ts::DynamicsChoice::simple; break;
    case Arm::no_guide_loss: c.guide_mode = ts::GuideMode::off; break;
    case Arm::dts: break;
    }
    return c;
}

struct AblationOptions {
    std::vector<base::BaseKind> bases{base::BaseKind::dnn, base::BaseKind::din};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<Arm> arms{all_arms.begin(), all_arms.end()};
    TrainConfig proto;
};

struct ArmResult {
    base::BaseKind base = base::BaseKind::dnn;
    Arm arm = Arm::base_model;
    std::vector<double> auc_per_seed;
    double mean_auc = 0.0;
    double rela_impr = 0.0; // vs. the BaseModel arm of the same base; NaN without one
};

struct AblationReport {
    std::vector<std::uint64_t> seeds;
    std::vector<Arm> arms;
    std::vector<ArmResult> results;

    const ArmResult* find(base::BaseKind b, Arm a) const
    {
        for (const auto& r : results)
            if (r.base == b && r.arm == a) return &r;
        return nullptr;
    }
};

using ArmCallback = std::function<void(base::BaseKind, Arm, std::uint64_t seed, double auc)>;

inline AblationReport run_ablation(const data::Dataset& ds, const AblationOptions& opt, const ArmCallback& on_arm = {})
{
    if (opt.seeds.empty()) throw UsageError("ablation: no seeds");
    if (opt.arms.empty()) throw UsageError("ablation: no arms");
    AblationReport rep;
    rep.seeds = opt.seeds;
    rep.arms = opt.arms;
    for (auto kind : opt.bases) {
        for (auto arm : opt.arms) {
            ArmResult r{kind, arm, {}, 0.0, std::nan("")};
            for (auto seed : opt.seeds) {
                auto res = train(arm_config(arm, kind, opt.proto, seed), ds.train);
                const double a = evaluate(res.model, ds.test).weighted_auc;
                r.auc_per_seed.push_back(a);
                if (on_arm) on_arm(kind, arm, seed, a);
            }
            double s = 0.0;
            for (double a : r.auc_per_seed) s += a;
            r.mean_auc = s / static_cast<double>(r.auc_per_seed.size());
            rep.results.push_back(std::move(r));
        }
        if (const auto* b = rep.find(kind, Arm::base_model)) {
            const double base_auc = b->mean_auc;
            for (auto& r : rep.results)
                if (r.base == kind) r.rela_impr = metrics::rela_impr(r.mean_auc, base_auc);
        }
    }
    return rep;
}

/// One row per base and seed plus a "mean" row; RelaImpr compares the DTS
/// column with BaseModel (blank when either arm was not run).
inline void write_csv(std::ostream& out, const AblationReport& rep)
{
    out << "base,seed";
    for (auto a : rep.arms) out << ',' << arm_name(a);
    out << ",RelaImpr\n";
    std::vector<base::BaseKind> bases;
    for (const auto& r : rep.results)
        if (std::find(bases.begin(), bases.end(), r.base) == bases.end()) bases.push_back(r.base);

    auto rela = [&](base::BaseKind b, auto&& auc_of) -> std::string {
        const auto* base = rep.find(b, Arm::base_model);
        const auto* full = rep.find(b, Arm::dts);
        if (!base || !full) return "";
        std::ostringstream os;
        os << std::fixed << std::setprecision(2) << metrics::rela_impr(auc_of(*full), auc_of(*base));
        return os.str();
    };
    out << std::setprecision(6) << std::fixed;
    for (auto b : bases) {
        for (std::size_t s = 0; s < rep.seeds.size(); ++s) {
            out << base::to_string(b) << ',' << rep.seeds[s];
            for (auto a : rep.arms) out << ',' << rep.find(b, a)->auc_per_seed[s];
            out << ',' << rela(b, [&](const ArmResult& r) { return r.auc_per_seed[s]; }) << '\n';
        }
        out << base::to_string(b) << ",mean";
        for (auto a : rep.arms) out << ',' << rep.find(b, a)->mean_auc;
        out << ',' << rela(b, [](const ArmResult& r) { return r.mean_auc; }) << '\n';
    }
    out << std::defaultfloat;
}

/// Mean AUC per arm with RelaImpr against BaseModel underneath.
inline void write_table(std::ostream& out, const AblationReport& rep)
{
    std::vector<std::string> header{"Base"};
    for (auto a : rep.arms) header.push_back(arm_name(a));
    std::vector<std::vector<std::string>> rows;
    std::vector<base::BaseKind> bases;
    for (const auto& r : rep.results)
        if (std::find(bases.begin(), bases.end(), r.base) == bases.end()) bases.push_back(r.base);
    for (auto b : bases) {
        std::vector<std::string> auc_row{b == base::BaseKind::dnn ? "DNN" : "DIN"}, impr_row{""};
        for (auto a : rep.arms) {
            const auto* r = rep.find(b, a);
            std::ostringstream x, y;
            x << std::fixed << std::setprecision(4) << r->mean_auc;
            if (!std::isnan(r->rela_impr)) y << std::fixed << std::setprecision(2) << r->rela_impr << '%';
            auc_row.push_back(x.str());
            impr_row.push_back(y.str());
        }
        rows.push_back(std::move(auc_row));
        rows.push_back(std::move(impr_row));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            out << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << (c ? std::right : std::left) << cells[c];
        }
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    out << "(mean weighted AUC over seeds";
    for (auto s : rep.seeds) out << ' ' << s;
    out << ")\n";
}

} // namespace dts::harness
