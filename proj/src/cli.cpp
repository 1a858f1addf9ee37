#include "felab/cli.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "felab/checkpoint.hpp"
#include "felab/config.hpp"
#include "felab/curves.hpp"
#include "felab/gradcheck.hpp"
#include "felab/knnlm.hpp"

namespace felab {

namespace {

namespace fs = std::filesystem;

int fail(const char* type, const std::string& message, int code) {
    const json rec{{"error", json{{"type", type}, {"message", message}}}};
    std::cerr << rec.dump() << "\n";
    return code;
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

double parse_radius_text(const std::string& text, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || std::isnan(v) || v < 0.0)
        throw ConfigError(where + ": expected a nonnegative number or \"inf\", got \"" + text + "\"");
    return v;
}

void echo_config(const ExperimentConfig& c) { save_config(c, c.out_dir + "/resolved_config.json"); }

// The structural model section plus the benchmark's vocabulary; the sequence
// budget is checked against the longest evidence up front.
ModelConfig resolved_model_config(const ExperimentConfig& c, const Benchmark& b) {
    ModelConfig mc = c.model;
    mc.vocab_size = static_cast<int32_t>(b.vocab.size());
    mc.mask_token_id = b.mask_id();
    if (b.max_evidence_tokens() > static_cast<size_t>(mc.max_seq_len))
        throw ConfigError("benchmark evidences are longer (" + std::to_string(b.max_evidence_tokens()) +
                          " tokens) than model.max_seq_len (" + std::to_string(mc.max_seq_len) + ")");
    mc.validate();
    return mc;
}

void check_model_matches_benchmark(const ModelConfig& mc, const Benchmark& b) {
    if (mc.vocab_size != static_cast<int32_t>(b.vocab.size()))
        throw ConfigError("checkpoint vocab size " + std::to_string(mc.vocab_size) +
                          " does not match the benchmark vocabulary (" + std::to_string(b.vocab.size()) + ")");
    if (mc.mask_token_id != b.mask_id())
        throw ConfigError("checkpoint mask token id does not match the benchmark vocabulary");
    if (b.max_evidence_tokens() > static_cast<size_t>(mc.max_seq_len))
        throw ConfigError("benchmark evidences exceed the checkpoint's max_seq_len");
}

Benchmark load_required_benchmark(const ExperimentConfig& c) {
    if (c.benchmark.empty()) throw ConfigError("no benchmark directory given (--benchmark or config.benchmark)");
    return load_benchmark_dir(c.benchmark);
}

bool is_modification_kind(RegimeKind k) {
    return k == RegimeKind::FTM || k == RegimeKind::FTA || k == RegimeKind::RI_FTM;
}

std::vector<TokenizedExample> unmodified_train_examples(const Benchmark& b) {
    std::vector<TokenizedExample> out;
    for (const auto& f : b.facts) {
        if (f.modified) continue;
        for (const auto& ev : f.evidences)
            if (ev.split == Split::Train) out.push_back(TokenizedExample{ev.tokens, ev.mask_pos, ev.gold});
    }
    return out;
}

void print_line(const std::string& s) { std::cout << s << "\n"; }

std::string acc3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

int cmd_gen(ExperimentConfig c) {
    const Benchmark bench = generate_benchmark(c.genspec);
    make_dir(c.out_dir);
    save_benchmark_dir(bench, c.out_dir);
    c.benchmark = c.out_dir;
    echo_config(c);
    size_t evidences = 0;
    for (const auto& f : bench.facts) evidences += f.evidences.size();
    print_line("generated " + std::to_string(bench.facts.size()) + " facts, " + std::to_string(evidences) +
               " evidences, vocab " + std::to_string(bench.vocab.size()) + " -> " + c.out_dir);
    for (const auto& w : bench.warnings) print_line("warning: " + w);
    return 0;
}

int cmd_import(ExperimentConfig c, const std::string& in_path) {
    const Benchmark bench = import_jsonl(in_path);
    make_dir(c.out_dir);
    save_benchmark_dir(bench, c.out_dir);
    c.benchmark = c.out_dir;
    echo_config(c);
    print_line("imported " + std::to_string(bench.facts.size()) + " facts, vocab " +
               std::to_string(bench.vocab.size()) + " -> " + c.out_dir);
    for (const auto& w : bench.warnings) print_line("warning: " + w);
    return 0;
}

template <typename T>
int cmd_pretrain(ExperimentConfig c) {
    const Benchmark bench = load_required_benchmark(c);
    if (!bench.modified.empty())
        throw ConfigError("pretrain expects an unmodified benchmark; this one has " +
                          std::to_string(bench.modified.size()) + " modified facts");
    const ModelConfig mc = resolved_model_config(c, bench);
    c.model = mc;
    if (c.regime.kind != RegimeKind::FT) throw ConfigError("pretrain runs the FT regime");
    Rng rng(c.seed);
    ParamSet<T> theta = init_params<T>(mc, rng);
    const TrainPools pools = build_train_pools(bench, RegimeKind::FT);
    const TrainResult res = train(mc, theta, pools, c.regime, rng);
    make_dir(c.out_dir);
    save_checkpoint(c.out_dir + "/model.ckpt", mc, theta);
    echo_config(c);

    const ExamplePools eval_pools = build_pools(bench);
    const double test_acc =
        evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(eval_pools.unmodified_test));
    const json metrics{{"epochs_run", res.epochs_run},
                       {"stopped_early", res.stopped_early},
                       {"train_accuracy", res.epoch_train_acc.back()},
                       {"test_accuracy", test_acc},
                       {"final_epoch_loss", res.epoch_loss.back()}};
    write_text_file(c.out_dir + "/metrics.json", metrics.dump(2) + "\n");
    print_line("pretrained " + std::to_string(res.epochs_run) + " epochs: train_acc=" +
               acc3(res.epoch_train_acc.back()) + " test_acc=" + acc3(test_acc) + " -> " + c.out_dir);
    return 0;
}

template <typename T>
int cmd_modify(ExperimentConfig c) {
    const Benchmark bench0 = load_required_benchmark(c);
    if (!bench0.modified.empty()) throw ConfigError("modify expects an unmodified benchmark (this one already has modifications)");
    if (c.regime.kind == RegimeKind::RI_FTM) c.random_init = true;
    if (c.random_init) c.regime.kind = RegimeKind::RI_FTM;
    if (!is_modification_kind(c.regime.kind)) throw ConfigError("modify runs FTM, FTA, or RI_FTM");

    ModelConfig mc;
    ParamSet<T> theta;
    if (!c.checkpoint.empty()) {
        auto [loaded_cfg, loaded] = load_checkpoint<T>(c.checkpoint);
        check_model_matches_benchmark(loaded_cfg, bench0);
        mc = loaded_cfg;
        theta = std::move(loaded);
    } else if (c.random_init) {
        mc = resolved_model_config(c, bench0);
    } else {
        throw ConfigError("modify needs --from CKPT (or --random-init)");
    }
    c.model = mc;

    Rng rng(c.seed);
    const Benchmark bench = modify_benchmark(bench0, c.m, rng, c.stratified);
    if (c.random_init) theta = init_params<T>(mc, rng);

    std::shared_ptr<const ParamSet<T>> fisher;
    if (c.regime.family == ConstraintFamily::FisherDiag) {
        const auto keep = unmodified_train_examples(bench);
        if (keep.empty()) throw ConfigError("fisher_diag needs unmodified train evidences to estimate Fisher weights");
        fisher = std::make_shared<const ParamSet<T>>(
            estimate_diag_fisher(mc, theta, std::span<const TokenizedExample>(keep)));
    }

    const ExamplePools eval_pools = build_pools(bench);
    if (eval_pools.modified_test.empty() || eval_pools.unmodified_test.empty())
        throw ConfigError("modified benchmark is missing a test slice");
    const double base_m =
        evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(eval_pools.modified_test));
    const double base_u =
        evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(eval_pools.unmodified_test));

    const TrainPools pools = build_train_pools(bench, c.regime.kind);
    const TrainResult res = train(mc, theta, pools, c.regime, rng, fisher);

    const double acc_m = evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(eval_pools.modified_test));
    const double acc_u = evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(eval_pools.unmodified_test));
    const MetricsRecord rec = make_metrics_record(acc_m, acc_u, c.regime.delta, c.regime.selector.to_string(),
                                                  c.seed, regime_name(c.regime.kind));

    make_dir(c.out_dir);
    make_dir(c.out_dir + "/benchmark");
    save_benchmark_dir(bench, c.out_dir + "/benchmark");
    save_checkpoint(c.out_dir + "/model.ckpt", mc, theta);
    const json metrics{{"baseline", json{{"acc_modified", base_m}, {"acc_unmodified", base_u}}},
                       {"result", json{{"acc_modified", rec.acc_modified},
                                       {"acc_unmodified", rec.acc_unmodified},
                                       {"acc_avg", rec.acc_avg},
                                       {"delta", radius_to_json(rec.delta)},
                                       {"selector", rec.selector},
                                       {"seed", rec.seed},
                                       {"regime", rec.regime}}},
                       {"epochs_run", res.epochs_run},
                       {"train_accuracy", res.epoch_train_acc.back()},
                       {"replacement_sampling", res.replacement_sampling}};
    write_text_file(c.out_dir + "/metrics.json", metrics.dump(2) + "\n");
    echo_config(c);
    print_line("modified " + std::to_string(c.m) + " facts, " + rec.regime + ": acc_M=" + acc3(acc_m) +
               " acc_FS=" + acc3(acc_u) + " abar=" + acc3(rec.acc_avg) + " (baseline acc_FS=" + acc3(base_u) +
               ") -> " + c.out_dir);
    return 0;
}

template <typename T>
int cmd_sweep(ExperimentConfig c) {
    const Benchmark bench = load_required_benchmark(c);
    if (bench.modified.empty()) throw ConfigError("sweep expects a modified benchmark (run modify first)");
    if (c.checkpoint.empty()) throw ConfigError("sweep needs --from CKPT");
    if (!is_modification_kind(c.regime.kind)) throw ConfigError("sweep runs FTM, FTA, or RI_FTM");
    // A radius sweep needs a norm family; unconstrained configs sweep the
    // canonical l-inf ball unless --norm picked something else.
    if (c.regime.family == ConstraintFamily::None) c.regime.family = ConstraintFamily::Linf;
    auto [mc, theta0] = load_checkpoint<T>(c.checkpoint);
    check_model_matches_benchmark(mc, bench);
    c.model = mc;

    if (c.grid.empty()) {
        ParamSet<T> probe = theta0;
        select_trainable(probe, mc, c.regime.selector);
        c.grid = default_delta_grid(c.regime.family, probe.trainable_numel());
    }

    const SweepResult res = sweep_delta(mc, theta0, bench, c.regime, std::span<const double>(c.grid),
                                        std::span<const uint64_t>(c.seeds), [](const MetricsRecord& r) {
                                            print_line("delta=" + format_double(r.delta) + " seed=" +
                                                       std::to_string(r.seed) + " acc_M=" + acc3(r.acc_modified) +
                                                       " acc_FS=" + acc3(r.acc_unmodified) + " abar=" +
                                                       acc3(r.acc_avg));
                                        });
    make_dir(c.out_dir);
    emit_curves(res, c.out_dir);
    echo_config(c);
    print_line("best delta=" + format_double(res.best.delta) + " mean_abar=" + acc3(res.best.mean_acc_avg) +
               " (acc_M=" + acc3(res.best.mean_acc_modified) + ", acc_FS=" + acc3(res.best.mean_acc_unmodified) +
               ") -> " + c.out_dir);
    return 0;
}

template <typename T>
int cmd_knn(ExperimentConfig c) {
    const Benchmark bench = load_required_benchmark(c);
    if (bench.modified.empty()) throw ConfigError("knn expects a modified benchmark (run modify first)");
    if (c.checkpoint.empty()) throw ConfigError("knn needs --from CKPT");
    auto [mc, theta0] = load_checkpoint<T>(c.checkpoint);
    check_model_matches_benchmark(mc, bench);
    c.model = mc;
    if (c.grid.empty()) c.grid = default_epsilon_grid();

    Datastore<T> ds = build_datastore(mc, theta0, bench);
    const SweepResult res =
        sweep_epsilon(mc, ds, theta0, bench, std::span<const double>(c.grid), [](const MetricsRecord& r) {
            print_line("eps=" + format_double(r.delta) + " acc_M=" + acc3(r.acc_modified) + " acc_FS=" +
                       acc3(r.acc_unmodified) + " abar=" + acc3(r.acc_avg));
        });
    ds.epsilon_default = res.best.delta;
    make_dir(c.out_dir);
    save_datastore(ds, c.out_dir + "/datastore.bin");
    emit_curves(res, c.out_dir);
    echo_config(c);
    print_line("best eps=" + format_double(res.best.delta) + " mean_abar=" + acc3(res.best.mean_acc_avg) + " (" +
               std::to_string(ds.count()) + " keys) -> " + c.out_dir);
    return 0;
}

template <typename T>
int cmd_eval(ExperimentConfig c, bool write_out) {
    const Benchmark bench = load_required_benchmark(c);
    if (c.checkpoint.empty()) throw ConfigError("eval needs --ckpt CKPT");
    auto [mc, theta] = load_checkpoint<T>(c.checkpoint);
    check_model_matches_benchmark(mc, bench);
    c.model = mc;
    const ExamplePools pools = build_pools(bench);
    json out;
    if (!bench.modified.empty()) {
        const double am = evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(pools.modified_test));
        const double au = evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(pools.unmodified_test));
        out = json{{"acc_modified", am},
                   {"acc_unmodified", au},
                   {"acc_avg", metric_abar(am, au)},
                   {"n_modified_test", pools.modified_test.size()},
                   {"n_unmodified_test", pools.unmodified_test.size()}};
    } else {
        const double train_acc =
            evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(pools.unmodified_train));
        const double test_acc = evaluate_accuracy(mc, theta, std::span<const TokenizedExample>(pools.unmodified_test));
        out = json{{"train_accuracy", train_acc},
                   {"test_accuracy", test_acc},
                   {"n_train", pools.unmodified_train.size()},
                   {"n_test", pools.unmodified_test.size()}};
    }
    print_line(out.dump(2));
    if (write_out) {
        make_dir(c.out_dir);
        write_text_file(c.out_dir + "/metrics.json", out.dump(2) + "\n");
        echo_config(c);
    }
    return 0;
}

int cmd_gradcheck(const ExperimentConfig& c, int samples, double h) {
    ModelConfig mc = c.model;
    mc.vocab_size = 64;
    mc.mask_token_id = 0;
    mc.validate();
    Rng rng(c.seed);
    const ParamSet<double> theta = init_params<double>(mc, rng);
    const size_t seq = std::min<size_t>(8, static_cast<size_t>(mc.max_seq_len));
    std::vector<TokenizedExample> batch(4);
    for (auto& ex : batch) {
        ex.tokens.resize(seq);
        for (auto& t : ex.tokens) t = 1 + static_cast<int32_t>(rng.bounded(63));
        ex.mask_pos = static_cast<size_t>(rng.bounded(seq));
        ex.tokens[ex.mask_pos] = mc.mask_token_id;
        ex.gold = 1 + static_cast<int32_t>(rng.bounded(63));
    }
    const GradCheckReport rep = finite_diff_check(mc, theta, std::span<const TokenizedExample>(batch), h,
                                                  static_cast<size_t>(samples), rng);
    const json out{{"max_rel_err", rep.max_rel_err},
                   {"samples", rep.n_checked},
                   {"worst", json{{"tensor", rep.worst.tensor},
                                  {"index", rep.worst.index},
                                  {"analytic", rep.worst.analytic},
                                  {"numeric", rep.worst.numeric}}}};
    print_line(out.dump(2));
    if (rep.max_rel_err > 1e-4)
        return fail("numeric", "gradient check failed: max relative error " + format_double(rep.max_rel_err) +
                                   " exceeds 1e-4",
                    4);
    return 0;
}

template <typename F>
int dispatch_precision(const ExperimentConfig& c, F&& f) {
    if (c.precision == "double") return f(static_cast<double*>(nullptr));
    return f(static_cast<float*>(nullptr));
}

}  // namespace

int run_command(int argc, const char* const* argv) {
    CLI::App app{"desk-scale laboratory for modifying memorized facts in a toy masked language model"};
    app.require_subcommand(1);

    std::string config_path, spec_path, in_path, out_dir, benchmark, ckpt, grid_path, selector, norm, regime_str,
        delta_str, precision;
    uint64_t seed = 0;
    int m = 0, n_seeds = 0, epochs = 0, batch_size = 0, samples = 256;
    double h = 1e-5;
    bool stratified = false, random_init = false;

    auto add_common = [&](CLI::App* sub, bool with_out = true) {
        sub->add_option("--config", config_path, "experiment config JSON (flags override it)");
        if (with_out) sub->add_option("--out", out_dir, "output directory");
    };

    CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic benchmark");
    add_common(c_gen);
    c_gen->add_option("--spec", spec_path, "benchmark generator spec JSON");

    CLI::App* c_import = app.add_subcommand("import", "import a JSONL fact corpus into a benchmark directory");
    add_common(c_import);
    c_import->add_option("--in", in_path, "JSONL input file")->required();

    CLI::App* c_pre = app.add_subcommand("pretrain", "memorize a benchmark's facts (FT regime)");
    add_common(c_pre);
    c_pre->add_option("--benchmark", benchmark, "benchmark directory");
    c_pre->add_option("--seed", seed, "run seed");
    c_pre->add_option("--epochs", epochs, "epoch budget");
    c_pre->add_option("--batch-size", batch_size, "minibatch size");

    CLI::App* c_mod = app.add_subcommand("modify", "modify m facts and fine-tune on them");
    add_common(c_mod);
    c_mod->add_option("--benchmark", benchmark, "unmodified benchmark directory");
    c_mod->add_option("--from", ckpt, "checkpoint of the model to modify");
    c_mod->add_option("--m", m, "number of facts to modify");
    c_mod->add_option("--selector", selector, "trainable subset: all | head | blockI[+blockJ...][+head]");
    c_mod->add_option("--norm", norm, "constraint family: none | linf | l2 | fisher_diag");
    c_mod->add_option("--delta", delta_str, "constraint radius (number or inf)");
    c_mod->add_option("--regime", regime_str, "FTM (default) | FTA | RI_FTM");
    c_mod->add_option("--seed", seed, "run seed");
    c_mod->add_option("--epochs", epochs, "epoch budget");
    c_mod->add_option("--batch-size", batch_size, "minibatch size");
    c_mod->add_flag("--stratified", stratified, "spread modified facts evenly over relations");
    c_mod->add_flag("--random-init", random_init, "start from random weights (RI_FTM)");

    CLI::App* c_sweep = app.add_subcommand("sweep", "delta sweep over a modified benchmark");
    add_common(c_sweep);
    c_sweep->add_option("--benchmark", benchmark, "modified benchmark directory");
    c_sweep->add_option("--from", ckpt, "base model checkpoint");
    c_sweep->add_option("--grid", grid_path, "JSON file with the delta grid");
    c_sweep->add_option("--seeds", n_seeds, "number of seeds (1..N)");
    c_sweep->add_option("--selector", selector, "trainable subset");
    c_sweep->add_option("--norm", norm, "constraint family");
    c_sweep->add_option("--regime", regime_str, "FTM (default) | FTA | RI_FTM");
    c_sweep->add_option("--epochs", epochs, "epoch budget");
    c_sweep->add_option("--batch-size", batch_size, "minibatch size");

    CLI::App* c_knn = app.add_subcommand("knn", "nearest-neighbor datastore baseline and epsilon sweep");
    add_common(c_knn);
    c_knn->add_option("--benchmark", benchmark, "modified benchmark directory");
    c_knn->add_option("--from", ckpt, "base model checkpoint");
    c_knn->add_option("--eps-grid", grid_path, "JSON file with the epsilon grid");

    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a benchmark");
    add_common(c_eval);
    c_eval->add_option("--benchmark", benchmark, "benchmark directory");
    c_eval->add_option("--ckpt", ckpt, "model checkpoint");

    CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
    c_grad->add_option("--config", config_path, "experiment config JSON");
    c_grad->add_option("--seed", seed, "run seed");
    c_grad->add_option("--samples", samples, "sampled coordinates");
    c_grad->add_option("--step", h, "finite-difference step");

    for (CLI::App* sub : {c_pre, c_mod, c_sweep, c_knn, c_eval})
        sub->add_option("--precision", precision, "single | double");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return fail("config", e.what(), 2);
    }

    try {
        ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        CLI::App* sub = app.get_subcommands().front();
        auto given = [&sub](const std::string& name) {
            const CLI::Option* o = sub->get_option_no_throw(name);
            return o != nullptr && o->count() > 0;
        };
        if (given("--out")) c.out_dir = out_dir;
        if (given("--benchmark")) c.benchmark = benchmark;
        if (given("--from") || given("--ckpt")) c.checkpoint = ckpt;
        if (given("--seed")) c.seed = seed;
        if (given("--precision")) c.precision = precision;
        if (given("--m")) c.m = m;
        if (given("--selector")) c.regime.selector = Selector::parse(selector);
        if (given("--norm")) c.regime.family = constraint_family_from_name(norm);
        if (given("--delta")) c.regime.delta = parse_radius_text(delta_str, "--delta");
        if (given("--regime")) c.regime.kind = regime_from_name(regime_str);
        if (given("--epochs")) c.regime.epochs = epochs;
        if (given("--batch-size")) c.regime.batch_size = batch_size;
        if (given("--stratified")) c.stratified = stratified;
        if (given("--random-init")) c.random_init = random_init;
        if (given("--grid") || given("--eps-grid")) c.grid = load_grid(grid_path);
        if (given("--seeds")) {
            if (n_seeds <= 0) throw ConfigError("--seeds must be positive");
            c.seeds.clear();
            for (int i = 1; i <= n_seeds; ++i) c.seeds.push_back(static_cast<uint64_t>(i));
        }
        if (sub == c_pre) {
            // pretrain pins the regime to FT; only its epoch/batch/adam knobs
            // carry over from the config file.
            RegimeConfig rc = RegimeConfig::defaults_for(RegimeKind::FT);
            rc.adam = c.regime.adam;
            rc.stop_train_acc = c.regime.stop_train_acc;
            if (given("--epochs")) rc.epochs = epochs;
            if (given("--batch-size")) rc.batch_size = batch_size;
            c.regime = rc;
        }
        c.validate();

        if (sub == c_gen) {
            if (!spec_path.empty()) c.genspec = genspec_from_json(parse_json_text(read_text_file(spec_path), spec_path), spec_path);
            return cmd_gen(std::move(c));
        }
        if (sub == c_import) return cmd_import(std::move(c), in_path);
        if (sub == c_pre) return dispatch_precision(c, [&](auto* tag) { return cmd_pretrain<std::remove_pointer_t<decltype(tag)>>(c); });
        if (sub == c_mod) return dispatch_precision(c, [&](auto* tag) { return cmd_modify<std::remove_pointer_t<decltype(tag)>>(c); });
        if (sub == c_sweep) return dispatch_precision(c, [&](auto* tag) { return cmd_sweep<std::remove_pointer_t<decltype(tag)>>(c); });
        if (sub == c_knn) return dispatch_precision(c, [&](auto* tag) { return cmd_knn<std::remove_pointer_t<decltype(tag)>>(c); });
        if (sub == c_eval)
            return dispatch_precision(c, [&](auto* tag) {
                return cmd_eval<std::remove_pointer_t<decltype(tag)>>(c, given("--out"));
            });
        if (sub == c_grad) {
            if (samples <= 0) throw ConfigError("--samples must be positive");
            return cmd_gradcheck(c, samples, h);
        }
        throw ValueError("unreachable subcommand");
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const IoError& e) {
        return fail("io", e.what(), 3);
    } catch (const NumericError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const ValueError& e) {
        return fail("config", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
}

int run_command(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("felab");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_command(static_cast<int>(argv.size()), argv.data());
}

}  // namespace felab
