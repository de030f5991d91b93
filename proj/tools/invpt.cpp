#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "invpt/checkpoint.hpp"
#include "invpt/config.hpp"
#include "invpt/kernels.hpp"
#include "invpt/metrics.hpp"
#include "invpt/model.hpp"
#include "invpt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitGradcheck = 5;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration");
    cmd->add_option("--set", args.overrides,
                    "dotted-path override, e.g. --set decoder.retention=0.25");
    cmd->add_option("--seed", args.seed, "override the run seed");
    cmd->add_option("--out", args.out_dir, "override the output directory");
}

invpt::RunConfig resolve_config(const CommonArgs& args) {
    nlohmann::json doc;
    if (args.config_path.empty()) {
        doc = invpt::RunConfig::defaults().to_json();
    } else {
        std::ifstream f(args.config_path);
        if (!f) throw invpt::ConfigError("cannot open config: " + args.config_path);
        try {
            f >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw invpt::ConfigError("config is not valid JSON: " + std::string(e.what()));
        }
    }
    for (const auto& o : args.overrides) invpt::apply_override(doc, o);
    if (args.seed) doc["seed"] = *args.seed;
    if (args.out_dir) doc["out_dir"] = *args.out_dir;
    return invpt::RunConfig::from_json(doc);
}

void ensure_parent_dir(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::vector<invpt::data::Sample> generate_split(const invpt::RunConfig& cfg, bool val) {
    const std::int64_t begin = val ? cfg.data.train_count : 0;
    const std::int64_t count = val ? cfg.data.val_count : cfg.data.train_count;
    std::vector<invpt::data::Sample> samples;
    samples.reserve(count);
    for (std::int64_t i = 0; i < count; ++i)
        samples.push_back(invpt::data::gen_sample(cfg.seed, begin + i, cfg.data.scene));
    return samples;
}

int cmd_gen_data(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    ensure_parent_dir(cfg.data.train_path);
    ensure_parent_dir(cfg.data.val_path);
    invpt::data::write_dataset(generate_split(cfg, false), cfg.data.train_path);
    invpt::data::write_dataset(generate_split(cfg, true), cfg.data.val_path);
    std::cout << "wrote " << cfg.data.train_count << " train samples to " << cfg.data.train_path
              << " and " << cfg.data.val_count << " val samples to " << cfg.data.val_path
              << "\n";
    return kExitOk;
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const auto dataset = invpt::data::read_dataset(cfg.data.train_path);
    fs::create_directories(cfg.out_dir);

    invpt::MultiTaskModel model;
    model.init(cfg.model, cfg.seed);
    std::cout << "training " << model.params().total_elements() << " weights for "
              << cfg.train.iters << " iterations (batch " << cfg.train.batch << ")\n";

    std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl", std::ios::trunc);
    if (!log) throw invpt::DataError("cannot open training log for writing");
    const auto records = invpt::train::train_loop(model, dataset, cfg.train, &log);

    invpt::save_checkpoint(model.params(), (fs::path(cfg.out_dir) / "checkpoint.ckpt").string());
    cfg.save_file((fs::path(cfg.out_dir) / "config.json").string());
    std::cout << "final loss " << records.back().losses.total << "; checkpoint and log in "
              << cfg.out_dir << "\n";
    return kExitOk;
}

ordered_json metrics_json(const invpt::RunConfig& cfg,
                          const std::map<std::string, std::optional<double>>& scores) {
    ordered_json tasks;
    for (const auto& t : cfg.model.tasks) {
        ordered_json entry;
        entry["metric"] = t.metric;
        const auto& v = scores.at(t.name);
        if (v)
            entry["value"] = *v;
        else {
            entry["value"] = nullptr;
            entry["error"] = "undefined";
        }
        entry["lower_is_better"] = t.lower_is_better;
        tasks[t.name] = std::move(entry);
    }
    ordered_json out;
    out["tasks"] = std::move(tasks);
    return out;
}

double delta_m_against_baseline(const invpt::RunConfig& cfg,
                                const std::map<std::string, std::optional<double>>& scores,
                                const std::string& baseline_path) {
    std::ifstream f(baseline_path);
    if (!f) throw invpt::DataError("cannot open baseline metrics: " + baseline_path);
    nlohmann::json base;
    try {
        f >> base;
    } catch (const nlohmann::json::exception& e) {
        throw invpt::DataError("baseline metrics is not valid JSON: " + std::string(e.what()));
    }
    std::vector<double> multi, single;
    std::vector<bool> lower;
    for (const auto& t : cfg.model.tasks) {
        if (!base.contains("tasks") || !base["tasks"].contains(t.name))
            throw invpt::DataError("baseline metrics lacks task '" + t.name + "'");
        const auto& bv = base["tasks"][t.name]["value"];
        const auto& mv = scores.at(t.name);
        if (bv.is_null() || !mv)
            throw invpt::DataError("cannot compute delta_m: undefined score for task '" +
                                   t.name + "'");
        multi.push_back(*mv);
        single.push_back(bv.get<double>());
        lower.push_back(t.lower_is_better);
    }
    return invpt::metrics::delta_m(multi, single, lower);
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& baseline) {
    const auto cfg = resolve_config(args);
    const auto dataset = invpt::data::read_dataset(cfg.data.val_path);
    invpt::MultiTaskModel model;
    model.init(cfg.model, cfg.seed);
    const std::string ckpt =
        checkpoint.empty() ? (fs::path(cfg.out_dir) / "checkpoint.ckpt").string() : checkpoint;
    invpt::load_checkpoint(model.params(), ckpt);

    const auto scores = invpt::train::evaluate(model, dataset);
    auto report = metrics_json(cfg, scores);
    if (!baseline.empty()) report["delta_m"] = delta_m_against_baseline(cfg, scores, baseline);

    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "metrics.json", std::ios::trunc);
    out << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed) {
    using invpt::train::GradCheckScope;
    std::vector<std::pair<std::string, GradCheckScope>> scopes;
    if (scope == "op" || scope == "all") scopes.emplace_back("op", GradCheckScope::Ops);
    if (scope == "module" || scope == "all")
        scopes.emplace_back("module", GradCheckScope::Modules);
    if (scope == "end2end" || scope == "all")
        scopes.emplace_back("end2end", GradCheckScope::EndToEnd);
    if (scopes.empty())
        throw invpt::ConfigError("gradcheck scope must be op, module, end2end or all");

    bool all_pass = true;
    for (const auto& [name, s] : scopes) {
        const auto results = invpt::train::gradcheck_suite(s, seed);
        double worst = 0.0;
        for (const auto& r : results) {
            worst = std::max(worst, r.max_rel_err);
            if (!r.pass) {
                all_pass = false;
                std::cout << "FAIL " << name << " " << r.name << " rel_err=" << r.max_rel_err
                          << " tol=" << r.tolerance << "\n";
            }
        }
        std::cout << (all_pass ? "pass" : "FAIL") << " scope=" << name << " groups="
                  << results.size() << " worst_rel_err=" << worst << "\n";
    }
    return all_pass ? kExitOk : kExitGradcheck;
}

ordered_json counts_json(const invpt::metrics::FlopsCounts& c) {
    return ordered_json{{"conv", c.conv},         {"linear", c.linear},
                        {"matmul_qk", c.matmul_qk}, {"matmul_av", c.matmul_av},
                        {"pool", c.pool},         {"resize", c.resize},
                        {"norm", c.norm},         {"blend", c.blend},
                        {"total", c.total()}};
}

// Rows in listed order: fusion contributes one row (retention fixed at 1),
// selective contributes one row per retention ratio.
std::vector<std::pair<invpt::AttentionVariant, double>> variant_rows(
    const invpt::RunConfig& cfg) {
    std::vector<std::pair<invpt::AttentionVariant, double>> rows;
    for (const auto& v : cfg.compare.variants) {
        if (v == "fusion") {
            rows.emplace_back(invpt::AttentionVariant::Fusion, 1.0);
        } else {
            for (double r : cfg.compare.retentions)
                rows.emplace_back(invpt::AttentionVariant::Selective, r);
        }
    }
    return rows;
}

int cmd_flops(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    const std::int64_t tasks = static_cast<std::int64_t>(cfg.model.tasks.size());
    const std::int64_t h0 = cfg.model.encoder.h0(), w0 = cfg.model.encoder.w0();

    auto fusion_cfg = cfg.model.decoder;
    fusion_cfg.variant = invpt::AttentionVariant::Fusion;
    const auto fusion_total = invpt::metrics::flops_count(fusion_cfg, tasks, h0, w0, cfg.model.c0,
                                                          cfg.model.encoder.width)
                                  .decoder_total()
                                  .total();

    ordered_json breakdowns = ordered_json::array();
    std::string csv =
        "variant,retention,conv,linear,matmul_qk,matmul_av,pool,resize,norm,blend,total,"
        "delta_vs_fusion_pct\n";
    for (const auto& [variant, retention] : variant_rows(cfg)) {
        auto dcfg = cfg.model.decoder;
        dcfg.variant = variant;
        dcfg.retention = retention;
        const auto fb = invpt::metrics::flops_count(dcfg, tasks, h0, w0, cfg.model.c0,
                                                    cfg.model.encoder.width);
        const auto total = fb.decoder_total();
        const bool fusion = variant == invpt::AttentionVariant::Fusion;
        const double delta_pct = 100.0 *
                                 (static_cast<double>(total.total()) -
                                  static_cast<double>(fusion_total)) /
                                 static_cast<double>(fusion_total);
        ordered_json entry;
        entry["variant"] = fusion ? "fusion" : "selective";
        entry["retention"] = retention;
        auto stages = ordered_json::array();
        for (const auto& s : fb.per_stage) stages.push_back(counts_json(s));
        entry["per_stage"] = std::move(stages);
        entry["output_head"] = counts_json(fb.output_head);
        entry["decoder_total"] = counts_json(total);
        entry["attention_matmul_total"] = fb.attention_matmul_total();
        entry["attention_matmul_cross_scale"] = fb.attention_matmul_cross_scale();
        entry["delta_vs_fusion_pct"] = delta_pct;
        breakdowns.push_back(std::move(entry));

        csv += std::string(fusion ? "fusion" : "selective") + "," + std::to_string(retention) +
               "," + std::to_string(total.conv) + "," + std::to_string(total.linear) + "," +
               std::to_string(total.matmul_qk) + "," + std::to_string(total.matmul_av) + "," +
               std::to_string(total.pool) + "," + std::to_string(total.resize) + "," +
               std::to_string(total.norm) + "," + std::to_string(total.blend) + "," +
               std::to_string(total.total()) + "," + std::to_string(delta_pct) + "\n";
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream jf(fs::path(cfg.out_dir) / "flops.json", std::ios::trunc);
    jf << breakdowns.dump(2) << "\n";
    std::ofstream cf(fs::path(cfg.out_dir) / "flops.csv", std::ios::trunc);
    cf << csv;
    std::cout << csv;
    return kExitOk;
}

int cmd_compare(const CommonArgs& args, const std::string& baseline) {
    const auto base_cfg = resolve_config(args);
    const auto dataset = invpt::data::read_dataset(base_cfg.data.train_path);
    const auto val = invpt::data::read_dataset(base_cfg.data.val_path);
    const std::int64_t tasks = static_cast<std::int64_t>(base_cfg.model.tasks.size());

    std::string header = "variant,retention,stages";
    for (const auto& t : base_cfg.model.tasks) header += "," + t.name + ":" + t.metric;
    header += ",delta_m,decoder_flops,flops_delta_pct\n";
    std::string csv = header;

    auto fusion_cfg = base_cfg.model.decoder;
    fusion_cfg.variant = invpt::AttentionVariant::Fusion;
    const auto fusion_total =
        invpt::metrics::flops_count(fusion_cfg, tasks, base_cfg.model.encoder.h0(),
                                    base_cfg.model.encoder.w0(), base_cfg.model.c0,
                                    base_cfg.model.encoder.width)
            .decoder_total()
            .total();

    for (const auto& [variant, retention] : variant_rows(base_cfg)) {
        auto cfg = base_cfg;
        cfg.model.decoder.variant = variant;
        cfg.model.decoder.retention = retention;
        const bool fusion = variant == invpt::AttentionVariant::Fusion;

        invpt::MultiTaskModel model;
        model.init(cfg.model, cfg.seed);
        invpt::train::train_loop(model, dataset, cfg.train, nullptr);
        const auto scores = invpt::train::evaluate(model, val);

        const auto fb = invpt::metrics::flops_count(cfg.model.decoder, tasks,
                                                    cfg.model.encoder.h0(), cfg.model.encoder.w0(),
                                                    cfg.model.c0, cfg.model.encoder.width);
        const auto total = fb.decoder_total().total();
        const double delta_pct =
            100.0 * (static_cast<double>(total) - static_cast<double>(fusion_total)) /
            static_cast<double>(fusion_total);

        std::string row = std::string(fusion ? "fusion" : "selective") + "," +
                          std::to_string(retention) + "," +
                          std::to_string(cfg.model.decoder.stages);
        for (const auto& t : cfg.model.tasks) {
            const auto& v = scores.at(t.name);
            row += v ? "," + std::to_string(*v) : ",undefined";
        }
        if (baseline.empty())
            row += ",";
        else
            row += "," + std::to_string(delta_m_against_baseline(cfg, scores, baseline));
        row += "," + std::to_string(total) + "," + std::to_string(delta_pct) + "\n";
        csv += row;
        std::cout << row;
    }

    fs::create_directories(base_cfg.out_dir);
    std::ofstream cf(fs::path(base_cfg.out_dir) / "compare.csv", std::ios::trunc);
    cf << csv;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"inverted-pyramid multi-task transformer workbench"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, flops_args, compare_args;
    std::string eval_checkpoint, eval_baseline, compare_baseline;
    std::string gradcheck_scope = "all";
    std::uint64_t gradcheck_seed = 7;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset files");
    add_common(gen, gen_args);
    auto* train = app.add_subcommand("train", "train a model and write checkpoint + log");
    add_common(train, train_args);
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path (default out_dir)");
    eval->add_option("--single-task-baseline", eval_baseline,
                     "baseline metrics.json; adds a delta_m field");
    auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient-check suite");
    gradcheck->add_option("--scope", gradcheck_scope, "op | module | end2end | all");
    gradcheck->add_option("--seed", gradcheck_seed, "seed for the random probes");
    auto* flops = app.add_subcommand("flops", "analytic decoder FLOPs per variant");
    add_common(flops, flops_args);
    auto* compare = app.add_subcommand("compare-variants",
                                       "train/eval each attention variant and emit a CSV table");
    add_common(compare, compare_args);
    compare->add_option("--single-task-baseline", compare_baseline,
                        "baseline metrics.json for the delta_m column");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_baseline);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_scope, gradcheck_seed);
        if (flops->parsed()) return cmd_flops(flops_args);
        if (compare->parsed()) return cmd_compare(compare_args, compare_baseline);
    } catch (const invpt::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const invpt::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const invpt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
