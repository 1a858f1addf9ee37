#include "felab/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace felab {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path);
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + path);
}

void ExperimentConfig::validate() const {
    if (precision != "single" && precision != "double")
        throw ConfigError("config.precision must be \"single\" or \"double\"");
    if (m <= 0) throw ConfigError("config.m must be positive");
    if (seeds.empty()) throw ConfigError("config.seeds must be nonempty");
    for (size_t i = 0; i < seeds.size(); ++i)
        for (size_t j = 0; j < i; ++j)
            if (seeds[j] == seeds[i]) throw ConfigError("config.seeds contains a duplicate");
    for (double g : grid)
        if (std::isnan(g) || g < 0.0) throw ConfigError("config.grid entries must be >= 0 or \"inf\"");
    genspec.validate();
    regime.validate();
    // The model section is structural only; vocab_size and mask_token_id come
    // from the benchmark at use.
    if (model.d_model <= 0) throw ConfigError("config.model.d_model must be positive");
    if (model.n_heads <= 0) throw ConfigError("config.model.n_heads must be positive");
    if (model.d_model % model.n_heads != 0) throw ConfigError("config.model.d_model must be divisible by n_heads");
    if (model.n_blocks < 0) throw ConfigError("config.model.n_blocks must be nonnegative");
    if (model.ffn_mult <= 0) throw ConfigError("config.model.ffn_mult must be positive");
    if (model.max_seq_len <= 0) throw ConfigError("config.model.max_seq_len must be positive");
    if (model.layer_norm_eps <= 0) throw ConfigError("config.model.layer_norm_eps must be positive");
}

json grid_to_json(const std::vector<double>& grid) {
    json arr = json::array();
    for (double g : grid) {
        if (std::isinf(g))
            arr.push_back("inf");
        else
            arr.push_back(g);
    }
    return arr;
}

std::vector<double> grid_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected a JSON array");
    std::vector<double> out;
    for (const auto& v : j) {
        if (v.is_string()) {
            if (v.get<std::string>() != "inf")
                throw ConfigError(where + ": the only string entry allowed is \"inf\"");
            out.push_back(std::numeric_limits<double>::infinity());
        } else if (v.is_number()) {
            const double d = v.get<double>();
            if (std::isnan(d) || d < 0.0) throw ConfigError(where + ": entries must be >= 0");
            out.push_back(d);
        } else {
            throw ConfigError(where + ": entries must be numbers or \"inf\"");
        }
    }
    return out;
}

std::vector<double> load_grid(const std::string& path) {
    const json j = parse_json_text(read_text_file(path), path);
    return grid_from_json(j, path);
}

json radius_to_json(double d) {
    if (std::isinf(d)) return json("inf");
    return json(d);
}

double radius_from_json(const json& v, const std::string& where) {
    if (v.is_string()) {
        if (v.get<std::string>() != "inf") throw ConfigError(where + ": expected a number or \"inf\"");
        return std::numeric_limits<double>::infinity();
    }
    if (!v.is_number()) throw ConfigError(where + ": expected a number or \"inf\"");
    const double d = v.get<double>();
    if (std::isnan(d) || d < 0.0) throw ConfigError(where + ": must be >= 0 or \"inf\"");
    return d;
}

void to_json(json& j, const RegimeConfig& rc) {
    j = json{{"kind", regime_name(rc.kind)},
             {"epochs", rc.epochs},
             {"batch_size", rc.batch_size},
             {"stop_train_acc", rc.stop_train_acc},
             {"mixture_ratio", rc.mixture_ratio},
             {"selector", rc.selector.to_string()},
             {"constraint",
              json{{"family", constraint_family_name(rc.family)},
                   {"delta", radius_to_json(rc.delta)},
                   {"fisher_eps", rc.fisher_eps},
                   {"per_tensor", rc.per_tensor}}},
             {"adam", json{{"lr", rc.adam.lr}, {"beta1", rc.adam.beta1}, {"beta2", rc.adam.beta2}, {"eps", rc.adam.eps}}}};
}

RegimeConfig regime_from_json(const json& j, const std::string& where) {
    require_object(j, where);
    reject_unknown_keys(
        j, {"kind", "epochs", "batch_size", "stop_train_acc", "mixture_ratio", "selector", "constraint", "adam"},
        where);
    // Kind first: the epoch/batch defaults depend on it.
    RegimeConfig rc = RegimeConfig::defaults_for(regime_from_name(get_or<std::string>(j, "kind", "FTM", where)));
    rc.epochs = get_or(j, "epochs", rc.epochs, where);
    rc.batch_size = get_or(j, "batch_size", rc.batch_size, where);
    rc.stop_train_acc = get_or(j, "stop_train_acc", rc.stop_train_acc, where);
    rc.mixture_ratio = get_or(j, "mixture_ratio", rc.mixture_ratio, where);
    rc.selector = Selector::parse(get_or<std::string>(j, "selector", rc.selector.to_string(), where));
    if (j.contains("constraint")) {
        const json& c = j.at("constraint");
        const std::string cw = where + ".constraint";
        require_object(c, cw);
        reject_unknown_keys(c, {"family", "delta", "fisher_eps", "per_tensor"}, cw);
        rc.family = constraint_family_from_name(get_or<std::string>(c, "family", "none", cw));
        if (c.contains("delta")) rc.delta = radius_from_json(c.at("delta"), cw + ".delta");
        rc.fisher_eps = get_or(c, "fisher_eps", rc.fisher_eps, cw);
        rc.per_tensor = get_or(c, "per_tensor", rc.per_tensor, cw);
    }
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        const std::string aw = where + ".adam";
        require_object(a, aw);
        reject_unknown_keys(a, {"lr", "beta1", "beta2", "eps"}, aw);
        rc.adam.lr = get_or(a, "lr", rc.adam.lr, aw);
        rc.adam.beta1 = get_or(a, "beta1", rc.adam.beta1, aw);
        rc.adam.beta2 = get_or(a, "beta2", rc.adam.beta2, aw);
        rc.adam.eps = get_or(a, "eps", rc.adam.eps, aw);
    }
    rc.validate();
    return rc;
}

void to_json(json& j, const ExperimentConfig& c) {
    json model;
    to_json(model, c.model);
    json regime;
    to_json(regime, c.regime);
    json genspec;
    to_json(genspec, c.genspec);
    j = json{{"benchmark", c.benchmark},
             {"checkpoint", c.checkpoint},
             {"out_dir", c.out_dir},
             {"precision", c.precision},
             {"seed", c.seed},
             {"m", c.m},
             {"stratified", c.stratified},
             {"random_init", c.random_init},
             {"genspec", std::move(genspec)},
             {"model", std::move(model)},
             {"regime", std::move(regime)},
             {"grid", grid_to_json(c.grid)},
             {"seeds", c.seeds}};
}

ExperimentConfig config_from_json(const json& j, const std::string& where) {
    require_object(j, where);
    reject_unknown_keys(j,
                        {"benchmark", "checkpoint", "out_dir", "precision", "seed", "m", "stratified", "random_init",
                         "genspec", "model", "regime", "grid", "seeds"},
                        where);
    ExperimentConfig c;
    c.benchmark = get_or<std::string>(j, "benchmark", c.benchmark, where);
    c.checkpoint = get_or<std::string>(j, "checkpoint", c.checkpoint, where);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir, where);
    c.precision = get_or<std::string>(j, "precision", c.precision, where);
    c.seed = get_or(j, "seed", c.seed, where);
    c.m = get_or(j, "m", c.m, where);
    c.stratified = get_or(j, "stratified", c.stratified, where);
    c.random_init = get_or(j, "random_init", c.random_init, where);
    if (j.contains("genspec")) c.genspec = genspec_from_json(j.at("genspec"), where + ".genspec");
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), where + ".model");
    if (j.contains("regime")) c.regime = regime_from_json(j.at("regime"), where + ".regime");
    if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"), where + ".grid");
    c.seeds = get_or(j, "seeds", c.seeds, where);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    const json j = parse_json_text(read_text_file(path), path);
    return config_from_json(j, path);
}

void save_config(const ExperimentConfig& c, const std::string& path) {
    json j;
    to_json(j, c);
    write_text_file(path, j.dump(2) + "\n");
}

std::vector<double> default_delta_grid(ConstraintFamily family, size_t trainable_count) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> base{0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, inf};
    if (family == ConstraintFamily::Linf || family == ConstraintFamily::None) return base;
    if (trainable_count == 0) throw ValueError("default_delta_grid: no trainable parameters");
    const double scale = std::sqrt(static_cast<double>(trainable_count));
    for (double& d : base)
        if (d != 0.0 && !std::isinf(d)) d *= scale;
    return base;
}

std::vector<double> default_epsilon_grid() { return {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}; }

}  // namespace felab
