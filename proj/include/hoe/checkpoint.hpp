#pragma once

// Checkpoint container: a magic line, the manifest length, a JSON manifest and
// a blob of little-endian float32 tensors in manifest order.
//
//   HOE-CHECKPOINT\n
//   <manifest bytes>\n
//   <manifest JSON><blob>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoe/hoe_router.hpp"

namespace hoe {

inline constexpr int checkpoint_format_version = 1;
inline constexpr const char* checkpoint_magic = "HOE-CHECKPOINT";

enum class CheckpointKind { dense, lora_expert, router_expert, hoe_model };

inline std::string to_string(CheckpointKind k) {
    switch (k) {
    case CheckpointKind::dense: return "dense";
    case CheckpointKind::lora_expert: return "lora_expert";
    case CheckpointKind::router_expert: return "router_expert";
    case CheckpointKind::hoe_model: return "hoe_model";
    }
    return "?";
}

namespace detail {

using nlohmann::json;

class TensorWriter {
public:
    json table = json::array();
    std::string blob;

    void add(const std::string& name, std::size_t rows, std::size_t cols, std::span<const float> values) {
        table.push_back({{"name", name}, {"shape", {rows, cols}}});
        for (float v : values) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
        }
    }
    void add(const std::string& name, const Matrix& m) { add(name, m.rows(), m.cols(), m.data()); }
    void add(const std::string& name, const std::vector<float>& v) { add(name, 1, v.size(), v); }
};

class TensorReader {
public:
    TensorReader(const json& table, std::string_view blob) {
        if (!table.is_array()) fail(errc::corrupt_checkpoint, "manifest tensor table is not a list");
        std::size_t offset = 0;
        for (const auto& t : table) {
            if (!t.contains("name") || !t.contains("shape") || !t["shape"].is_array() || t["shape"].size() != 2)
                fail(errc::corrupt_checkpoint, "malformed tensor entry in manifest");
            const auto rows = t["shape"][0].get<std::size_t>();
            const auto cols = t["shape"][1].get<std::size_t>();
            if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
                fail(errc::corrupt_checkpoint, "implausible tensor shape in manifest");
            const std::size_t bytes = rows * cols * 4;
            if (offset + bytes > blob.size())
                fail(errc::corrupt_checkpoint, "blob shorter than the declared tensor shapes");
            std::vector<float> values(rows * cols);
            for (std::size_t i = 0; i < values.size(); ++i) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b)
                    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * i + b])) << (8 * b);
                values[i] = std::bit_cast<float>(bits);
            }
            offset += bytes;
            const auto name = t["name"].get<std::string>();
            if (!tensors_.emplace(name, Matrix(rows, cols, std::move(values))).second)
                fail(errc::corrupt_checkpoint, "duplicate tensor " + name);
        }
        if (offset != blob.size()) fail(errc::corrupt_checkpoint, "blob longer than the declared tensor shapes");
    }

    const Matrix& matrix(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) fail(errc::corrupt_checkpoint, "missing tensor " + name);
        return it->second;
    }

    std::vector<float> vector(const std::string& name) const {
        const auto& m = matrix(name);
        if (m.rows() != 1) fail(errc::corrupt_checkpoint, "tensor " + name + " is not a row vector");
        return {m.data().begin(), m.data().end()};
    }

private:
    std::map<std::string, Matrix> tensors_;
};

inline void write_dense(TensorWriter& w, json& meta, const PolicyNetwork& net, const std::string& prefix) {
    require(!net.layers.empty(), errc::invalid_input, "cannot save an empty network");
    json paths = json::array();
    for (const auto& l : net.layers) {
        require(l.attached.empty(), errc::invalid_input, "dense checkpoints hold networks without attached experts");
        paths.push_back(l.module_path);
        w.add(prefix + l.module_path + ".weight", l.w_pre);
        w.add(prefix + l.module_path + ".bias", l.bias);
    }
    meta["modules"] = paths;
    w.add(prefix + "value.weight", net.value_w);
    w.add(prefix + "value.bias", net.value_b);
}

inline PolicyNetwork read_dense(const TensorReader& r, const json& meta, const std::string& prefix) {
    PolicyNetwork net;
    if (!meta.contains("modules") || !meta["modules"].is_array() || meta["modules"].empty())
        fail(errc::corrupt_checkpoint, "dense section lists no modules");
    for (const auto& p : meta["modules"]) {
        PluginLinear l;
        l.module_path = p.get<std::string>();
        l.w_pre = r.matrix(prefix + l.module_path + ".weight");
        l.bias = r.vector(prefix + l.module_path + ".bias");
        if (l.bias.size() != l.d_out()) fail(errc::corrupt_checkpoint, "bias width mismatch at " + l.module_path);
        if (!net.layers.empty() && net.layers.back().d_out() != l.d_in())
            fail(errc::corrupt_checkpoint, "layer widths do not chain at " + l.module_path);
        net.layers.push_back(std::move(l));
    }
    net.value_w = r.matrix(prefix + "value.weight");
    net.value_b = r.vector(prefix + "value.bias");
    if (net.value_w.cols() != net.hidden_width() || net.value_b.size() != net.value_w.rows())
        fail(errc::corrupt_checkpoint, "value head shape mismatch");
    return net;
}

inline Preference read_preference(const json& meta) {
    if (!meta.contains("preference") || !meta["preference"].is_array())
        fail(errc::corrupt_checkpoint, "missing preference");
    try {
        return Preference(meta["preference"].get<std::vector<double>>());
    } catch (const error& e) {
        fail(errc::corrupt_checkpoint, std::string("invalid preference: ") + e.what());
    }
}

inline void write_lora(TensorWriter& w, json& meta, const LoraExpert& e, const std::string& prefix) {
    meta["id"] = e.id;
    meta["preference"] = e.preference.weights();
    meta["rank"] = e.rank;
    meta["rescale"] = e.rescale;
    json paths = json::array();
    for (const auto& [path, f] : e.modules) {
        paths.push_back(path);
        w.add(prefix + path + ".down", f.down);
        w.add(prefix + path + ".up", f.up);
    }
    meta["modules"] = paths;
}

inline LoraExpert read_lora(const TensorReader& r, const json& meta, const std::string& prefix) {
    LoraExpert e;
    e.id = meta.at("id").get<std::string>();
    e.preference = read_preference(meta);
    e.rank = meta.at("rank").get<std::size_t>();
    e.rescale = meta.at("rescale").get<double>();
    for (const auto& p : meta.at("modules")) {
        const auto path = p.get<std::string>();
        LowRankFactors f{r.matrix(prefix + path + ".down"), r.matrix(prefix + path + ".up")};
        if (f.down.rows() != f.up.cols()) fail(errc::corrupt_checkpoint, "factor ranks disagree at " + path);
        e.modules.emplace(path, std::move(f));
    }
    return e;
}

inline void write_router(TensorWriter& w, json& meta, const RouterExpert& e, const std::string& prefix) {
    meta["id"] = e.id;
    meta["preference"] = e.preference.weights();
    meta["assigned"] = e.assigned;
    json paths = json::array();
    for (const auto& [path, l] : e.modules) {
        paths.push_back(path);
        w.add(prefix + path + ".weight", l.weight);
        w.add(prefix + path + ".bias", l.bias);
    }
    meta["modules"] = paths;
}

inline RouterExpert read_router(const TensorReader& r, const json& meta, const std::string& prefix) {
    RouterExpert e;
    e.id = meta.at("id").get<std::string>();
    e.preference = read_preference(meta);
    e.assigned = meta.at("assigned").get<std::vector<std::string>>();
    for (const auto& p : meta.at("modules")) {
        const auto path = p.get<std::string>();
        RouterLayer l{r.matrix(prefix + path + ".weight"), r.vector(prefix + path + ".bias")};
        if (l.weight.rows() != e.assigned.size() || l.bias.size() != e.assigned.size())
            fail(errc::corrupt_checkpoint, "router scorer width mismatch at " + path);
        e.modules.emplace(path, std::move(l));
    }
    return e;
}

inline std::string pack(json manifest, const TensorWriter& w) {
    manifest["tensors"] = w.table;
    const std::string text = manifest.dump();
    std::string out = std::string(checkpoint_magic) + "\n" + std::to_string(text.size()) + "\n" + text;
    out += w.blob;
    return out;
}

struct Unpacked {
    json manifest;
    TensorReader tensors;
};

inline Unpacked unpack(std::string_view bytes, CheckpointKind expected) {
    const std::string magic = std::string(checkpoint_magic) + "\n";
    if (bytes.substr(0, magic.size()) != magic) fail(errc::corrupt_checkpoint, "not a checkpoint (bad magic)");
    bytes.remove_prefix(magic.size());
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos || nl == 0 || nl > 12) fail(errc::corrupt_checkpoint, "missing manifest length");
    std::size_t length = 0;
    for (char c : bytes.substr(0, nl)) {
        if (c < '0' || c > '9') fail(errc::corrupt_checkpoint, "manifest length is not a number");
        length = length * 10 + static_cast<std::size_t>(c - '0');
    }
    bytes.remove_prefix(nl + 1);
    if (length > bytes.size()) fail(errc::corrupt_checkpoint, "manifest truncated");
    json manifest = json::parse(bytes.substr(0, length), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) fail(errc::corrupt_checkpoint, "manifest is not valid JSON");
    if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer())
        fail(errc::corrupt_checkpoint, "manifest has no format_version");
    if (manifest["format_version"].get<int>() != checkpoint_format_version)
        fail(errc::corrupt_checkpoint, "unsupported format_version " + manifest["format_version"].dump());
    if (!manifest.contains("kind") || manifest["kind"] != to_string(expected))
        fail(errc::corrupt_checkpoint, "expected a " + to_string(expected) + " checkpoint");
    if (!manifest.contains("tensors")) fail(errc::corrupt_checkpoint, "manifest has no tensor table");
    return {manifest, TensorReader(manifest["tensors"], bytes.substr(length))};
}

inline json header(CheckpointKind kind, std::uint64_t seed) {
    return {{"format_version", checkpoint_format_version}, {"kind", to_string(kind)}, {"seed", seed},
            {"created_by", "hoe"}};
}

template <class F>
auto guarded(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::corrupt_checkpoint, std::string("malformed manifest: ") + e.what());
    }
}

} // namespace detail

inline std::string encode(const PolicyNetwork& net, std::uint64_t seed = 0) {
    detail::TensorWriter w;
    auto m = detail::header(CheckpointKind::dense, seed);
    detail::write_dense(w, m, net, "");
    return detail::pack(std::move(m), w);
}

inline std::string encode(const LoraExpert& e, std::uint64_t seed = 0) {
    detail::TensorWriter w;
    auto m = detail::header(CheckpointKind::lora_expert, seed);
    detail::write_lora(w, m, e, "");
    return detail::pack(std::move(m), w);
}

inline std::string encode(const RouterExpert& e, std::uint64_t seed = 0) {
    detail::TensorWriter w;
    auto m = detail::header(CheckpointKind::router_expert, seed);
    detail::write_router(w, m, e, "");
    return detail::pack(std::move(m), w);
}

inline std::string encode(const HoeModel& model, std::uint64_t seed = 0) {
    detail::TensorWriter w;
    auto m = detail::header(CheckpointKind::hoe_model, seed);
    nlohmann::json base = nlohmann::json::object();
    detail::write_dense(w, base, model.base, "base/");
    m["base"] = base;
    m["lora"] = nlohmann::json::array();
    for (const auto& e : model.lora) {
        nlohmann::json s;
        detail::write_lora(w, s, e, "lora/" + e.id + "/");
        m["lora"].push_back(s);
    }
    m["routers"] = nlohmann::json::array();
    for (const auto& r : model.routers) {
        nlohmann::json s;
        detail::write_router(w, s, r, "router/" + r.id + "/");
        m["routers"].push_back(s);
    }
    return detail::pack(std::move(m), w);
}

inline PolicyNetwork decode_dense(std::string_view bytes) {
    return detail::guarded([&] {
        auto u = detail::unpack(bytes, CheckpointKind::dense);
        return detail::read_dense(u.tensors, u.manifest, "");
    });
}

inline LoraExpert decode_lora(std::string_view bytes) {
    return detail::guarded([&] {
        auto u = detail::unpack(bytes, CheckpointKind::lora_expert);
        return detail::read_lora(u.tensors, u.manifest, "");
    });
}

inline RouterExpert decode_router(std::string_view bytes) {
    return detail::guarded([&] {
        auto u = detail::unpack(bytes, CheckpointKind::router_expert);
        return detail::read_router(u.tensors, u.manifest, "");
    });
}

inline HoeModel decode_model(std::string_view bytes) {
    return detail::guarded([&] {
        auto u = detail::unpack(bytes, CheckpointKind::hoe_model);
        auto base = detail::read_dense(u.tensors, u.manifest.at("base"), "base/");
        std::vector<LoraExpert> lora;
        for (const auto& s : u.manifest.at("lora"))
            lora.push_back(detail::read_lora(u.tensors, s, "lora/" + s.at("id").get<std::string>() + "/"));
        std::vector<RouterExpert> routers;
        for (const auto& s : u.manifest.at("routers"))
            routers.push_back(detail::read_router(u.tensors, s, "router/" + s.at("id").get<std::string>() + "/"));
        try {
            return assemble(base, std::move(lora), std::move(routers));
        } catch (const error& e) {
            fail(errc::corrupt_checkpoint, std::string("stored model does not assemble: ") + e.what());
        }
    });
}

/// Seed recorded in a checkpoint's manifest.
inline std::uint64_t checkpoint_seed(std::string_view bytes) {
    return detail::guarded([&]() -> std::uint64_t {
        for (auto kind : {CheckpointKind::dense, CheckpointKind::lora_expert, CheckpointKind::router_expert,
                          CheckpointKind::hoe_model}) {
            try {
                return detail::unpack(bytes, kind).manifest.at("seed").get<std::uint64_t>();
            } catch (const error&) {
            }
        }
        fail(errc::corrupt_checkpoint, "unreadable checkpoint");
    });
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(errc::io_failure, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(errc::io_failure, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(errc::io_failure, "cannot rename " + tmp.string() + ": " + ec.message());
}

template <class T>
void save(const std::filesystem::path& path, const T& value, std::uint64_t seed = 0) {
    write_file_atomic(path, encode(value, seed));
}

inline PolicyNetwork load_dense(const std::filesystem::path& p) { return decode_dense(read_file(p)); }
inline LoraExpert load_lora(const std::filesystem::path& p) { return decode_lora(read_file(p)); }
inline RouterExpert load_router(const std::filesystem::path& p) { return decode_router(read_file(p)); }
inline HoeModel load_model(const std::filesystem::path& p) { return decode_model(read_file(p)); }

} // namespace hoe
