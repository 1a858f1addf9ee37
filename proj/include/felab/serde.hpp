#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "felab/errors.hpp"
#include "felab/model.hpp"

namespace felab {

using json = nlohmann::ordered_json;

// Strict object reader: every present key must be known, every required key
// must be present. Config typos fail loudly instead of silently defaulting.
inline void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline void to_json(json& j, const ModelConfig& m) {
    j = json{{"vocab_size", m.vocab_size},
             {"d_model", m.d_model},
             {"n_heads", m.n_heads},
             {"n_blocks", m.n_blocks},
             {"ffn_mult", m.ffn_mult},
             {"max_seq_len", m.max_seq_len},
             {"mask_token_id", m.mask_token_id},
             {"tie_output_embedding", m.tie_output_embedding},
             {"layer_norm_eps", m.layer_norm_eps}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& where) {
    require_object(j, where);
    reject_unknown_keys(j,
                        {"vocab_size", "d_model", "n_heads", "n_blocks", "ffn_mult", "max_seq_len", "mask_token_id",
                         "tie_output_embedding", "layer_norm_eps"},
                        where);
    ModelConfig m;
    m.vocab_size = get_or(j, "vocab_size", m.vocab_size, where);
    m.d_model = get_or(j, "d_model", m.d_model, where);
    m.n_heads = get_or(j, "n_heads", m.n_heads, where);
    m.n_blocks = get_or(j, "n_blocks", m.n_blocks, where);
    m.ffn_mult = get_or(j, "ffn_mult", m.ffn_mult, where);
    m.max_seq_len = get_or(j, "max_seq_len", m.max_seq_len, where);
    m.mask_token_id = get_or(j, "mask_token_id", m.mask_token_id, where);
    m.tie_output_embedding = get_or(j, "tie_output_embedding", m.tie_output_embedding, where);
    m.layer_norm_eps = get_or(j, "layer_norm_eps", m.layer_norm_eps, where);
    return m;
}

// Line and column of a byte offset in a text buffer, for parse errors.
inline std::string offset_to_line_col(const std::string& text, size_t byte_pos) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i < byte_pos && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline json parse_json_text(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // e.byte is 1-based position of the failure
        const size_t pos = e.byte > 0 ? e.byte - 1 : 0;
        throw ConfigError(where + ": JSON parse error at " + offset_to_line_col(text, pos) + ": " + e.what());
    }
}

}  // namespace felab
