#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "felab/facts.hpp"
#include "felab/harness.hpp"
#include "felab/serde.hpp"

namespace felab {

// Everything a pipeline stage needs, with defaults filled at load time so the
// echoed resolved config replays the run exactly. model.vocab_size and
// model.mask_token_id are resolved from the benchmark vocabulary at use.
struct ExperimentConfig {
    std::string benchmark;   // benchmark directory (output of gen/import)
    std::string checkpoint;  // model checkpoint consumed by the stage
    std::string out_dir{"run"};
    std::string precision{"single"};
    uint64_t seed{1};
    int m{32};               // facts to modify
    bool stratified{false};  // stratify modification over relations
    bool random_init{false};
    GenSpec genspec{};
    ModelConfig model{};
    RegimeConfig regime{RegimeConfig::defaults_for(RegimeKind::FTM)};
    std::vector<double> grid;  // delta (or epsilon) grid; empty = family default
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

// Grids and radii serialize as nonnegative JSON numbers, with infinity
// spelled as the string "inf" (JSON has no infinity literal).
json radius_to_json(double d);
double radius_from_json(const json& v, const std::string& where);
json grid_to_json(const std::vector<double>& grid);
std::vector<double> grid_from_json(const json& j, const std::string& where);
std::vector<double> load_grid(const std::string& path);

void to_json(json& j, const RegimeConfig& rc);
RegimeConfig regime_from_json(const json& j, const std::string& where);

void to_json(json& j, const ExperimentConfig& c);
ExperimentConfig config_from_json(const json& j, const std::string& where);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& c, const std::string& path);

// Log-spaced radius grids with both endpoints included; the l2 and Fisher
// grids scale with sqrt(trainable count) so a per-coordinate displacement of
// the linf scale stays comparable across families.
std::vector<double> default_delta_grid(ConstraintFamily family, size_t trainable_count);
std::vector<double> default_epsilon_grid();

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace felab
