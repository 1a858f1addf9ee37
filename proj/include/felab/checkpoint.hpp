#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "felab/model.hpp"
#include "felab/rng.hpp"
#include "felab/serde.hpp"

namespace felab {

// Checkpoint container: 8-byte magic, length-prefixed JSON metadata record
// (format version, precision, RNG algorithm, model config, tensor count),
// then one record per tensor: name, rank, dims, raw values. Everything is
// little-endian; values are IEEE floats of a single precision per file, and
// a load into the wrong element type is rejected rather than converted.
inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'L', 'B', '0', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
constexpr const char* precision_name() {
    if constexpr (std::is_same_v<T, float>)
        return "single";
    else
        return "double";
}

namespace detail {

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
bool read_pod(std::ifstream& in, V& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return static_cast<bool>(in);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamSet<T>& params) {
    json header;
    header["format_version"] = 1;
    header["precision"] = precision_name<T>();
    header["rng_algorithm"] = Rng::kAlgorithm;
    to_json(header["model"], cfg);
    header["tensor_count"] = params.size();
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::write_pod(out, static_cast<uint64_t>(htext.size()));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& e : params) {
        detail::write_pod(out, static_cast<uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_pod(out, static_cast<uint32_t>(e.value.rank()));
        for (size_t d : e.value.shape()) detail::write_pod(out, static_cast<uint64_t>(d));
        out.write(reinterpret_cast<const char*>(e.value.data()),
                  static_cast<std::streamsize>(e.value.numel() * sizeof(T)));
    }
    out.flush();
    if (!out) throw IoError("write failed for checkpoint: " + path);
}

template <typename T>
std::pair<ModelConfig, ParamSet<T>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);

    uint64_t hlen = 0;
    if (!detail::read_pod(in, hlen)) throw IoError("truncated checkpoint header length: " + path);
    if (hlen == 0 || hlen > (1ull << 30)) throw IoError("implausible checkpoint header size: " + path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);

    json header;
    try {
        header = json::parse(htext);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("corrupt checkpoint header JSON: " + std::string(e.what()));
    }
    const int version = get_or(header, "format_version", -1, "checkpoint");
    if (version != 1) throw IoError("unsupported checkpoint format version " + std::to_string(version));
    const auto precision = get_or<std::string>(header, "precision", "", "checkpoint");
    if (precision != precision_name<T>()) {
        throw IoError("checkpoint precision is \"" + precision + "\" but this load expects \"" +
                      precision_name<T>() + "\" (cross-precision loads are rejected)");
    }
    if (!header.contains("model")) throw IoError("checkpoint header missing model config");
    ModelConfig cfg = model_config_from_json(header.at("model"), "checkpoint.model");
    cfg.validate();
    const auto tensor_count = get_or<uint64_t>(header, "tensor_count", 0, "checkpoint");
    if (tensor_count == 0 || tensor_count > (1ull << 20)) throw IoError("implausible checkpoint tensor count: " + path);

    ParamSet<T> params;
    for (uint64_t t = 0; t < tensor_count; ++t) {
        uint32_t name_len = 0;
        if (!detail::read_pod(in, name_len)) throw IoError("truncated checkpoint tensor record: " + path);
        if (name_len == 0 || name_len > 4096) throw IoError("implausible tensor name length in " + path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IoError("truncated tensor name in " + path);
        uint32_t rank = 0;
        if (!detail::read_pod(in, rank)) throw IoError("truncated tensor rank for \"" + name + "\"");
        if (rank == 0 || rank > 8) throw IoError("implausible rank for tensor \"" + name + "\"");
        std::vector<size_t> shape(rank);
        for (auto& d : shape) {
            uint64_t dim = 0;
            if (!detail::read_pod(in, dim)) throw IoError("truncated dims for tensor \"" + name + "\"");
            if (dim == 0 || dim > (1ull << 32)) throw IoError("implausible dimension for tensor \"" + name + "\"");
            d = static_cast<size_t>(dim);
        }
        Tensor<T> value(shape);
        in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.numel() * sizeof(T)));
        if (!in) throw IoError("truncated checkpoint data at tensor \"" + name + "\"");
        params.add(name, std::move(value), group_for_name(name));
    }
    // A longer-than-expected file means the count and the data disagree.
    if (in.peek() != std::ifstream::traits_type::eof())
        throw IoError("checkpoint has trailing bytes beyond the tensor table: " + path);
    return {std::move(cfg), std::move(params)};
}

}  // namespace felab
