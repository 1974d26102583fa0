#include "stt/param_store.hpp"

#include <fstream>

#include <json.hpp>

#include "stt/serialize.hpp"

namespace stt {

Tensor& ParameterStore::create(const std::string& name, std::vector<std::size_t> shape) {
    return put(name, Tensor::zeros(std::move(shape), true));
}

Tensor& ParameterStore::put(const std::string& name, Tensor t) {
    if (by_name_.contains(name)) throw contract_error("parameter already registered: " + name);
    names_.push_back(name);
    return by_name_.emplace(name, std::move(t)).first->second;
}

bool ParameterStore::contains(const std::string& name) const { return by_name_.contains(name); }

Tensor& ParameterStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterStore::erase_prefix(const std::string& prefix) {
    std::size_t removed = 0;
    std::vector<std::string> kept;
    kept.reserve(names_.size());
    for (const std::string& n : names_) {
        if (n.rfind(prefix, 0) == 0) {
            by_name_.erase(n);
            ++removed;
        } else {
            kept.push_back(n);
        }
    }
    names_ = std::move(kept);
    return removed;
}

void ParameterStore::zero_grad() {
    for (auto& [_, t] : by_name_) t.zero_grad();
}

std::size_t ParameterStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : by_name_) n += t.size();
    return n;
}

void ParameterStore::save(const std::string& path, const CheckpointMeta& meta) const {
    ByteWriter w;
    w.str_raw("STTW");
    w.u32(static_cast<std::uint32_t>(names_.size()));
    for (const std::string& name : names_) {
        const Tensor& t = by_name_.at(name);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str_raw(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.values()) w.f64(v);
    }
    w.write_file(path);

    nlohmann::json j;
    j["config_hash"] = meta.config_hash;
    j["train_config_hash"] = meta.train_config_hash;
    j["seed"] = meta.seed;
    j["epoch"] = meta.epoch;
    j["num_classes"] = meta.num_classes;
    if (meta.model_config_json.empty())
        j["model_config"] = nullptr;
    else
        j["model_config"] = nlohmann::json::parse(meta.model_config_json);
    std::ofstream out(path + ".json", std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + path + ".json");
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed: " + path + ".json");
}

ParameterStore ParameterStore::load(const std::string& path, CheckpointMeta* meta_out) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("STTW");
    const std::uint32_t count = r.u32();
    ParameterStore store;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = r.u16();
        std::string name = r.str(name_len);
        if (store.contains(name))
            throw format_error(path + ": duplicate parameter \"" + name + "\" at offset " +
                               std::to_string(r.offset()));
        const std::uint8_t rank = r.u8();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            shape[i] = r.u32();
            numel *= shape[i];
        }
        std::vector<double> values(numel);
        for (std::size_t i = 0; i < numel; ++i) values[i] = r.f64();
        store.put(name, Tensor::from_values(std::move(shape), std::move(values), true));
    }
    if (meta_out) *meta_out = load_meta(path);
    return store;
}

CheckpointMeta ParameterStore::load_meta(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw io_error("cannot open: " + path + ".json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path + ".json: " + e.what());
    }
    CheckpointMeta meta;
    meta.config_hash = j.value("config_hash", std::uint64_t{0});
    meta.train_config_hash = j.value("train_config_hash", std::uint64_t{0});
    meta.seed = j.value("seed", std::uint64_t{0});
    meta.epoch = j.value("epoch", 0);
    meta.num_classes = j.value("num_classes", 0);
    if (j.contains("model_config") && !j["model_config"].is_null())
        meta.model_config_json = j["model_config"].dump();
    return meta;
}

}  // namespace stt
