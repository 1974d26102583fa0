#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

/// Sidecar metadata written next to a serialized parameter file.
struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t train_config_hash = 0;
    std::uint64_t seed = 0;
    int epoch = 0;
    int num_classes = 0;
    std::string model_config_json;  // full model config, so checkpoints are self-describing
};

/// Named map parameter-name -> Tensor with deterministic iteration order
/// (insertion order, which itself is derived deterministically from the
/// model configuration). Names are unique.
class ParameterStore {
public:
    /// Creates a zero tensor with requires_grad = true and registers it.
    Tensor& create(const std::string& name, std::vector<std::size_t> shape);
    /// Registers an existing tensor under a new name.
    Tensor& put(const std::string& name, Tensor t);

    bool contains(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    /// Removes every parameter whose name starts with prefix. Returns the
    /// number removed. Iteration order of the survivors is preserved.
    std::size_t erase_prefix(const std::string& prefix);

    void zero_grad();
    std::size_t total_elements() const;

    /// Flat binary format: magic "STTW", u32 count, then per entry
    /// u16 name length, name bytes, u8 rank, u32 axis lengths, f64 payload
    /// (all little-endian). The sidecar JSON goes to path + ".json".
    void save(const std::string& path, const CheckpointMeta& meta) const;
    static ParameterStore load(const std::string& path, CheckpointMeta* meta_out = nullptr);
    static CheckpointMeta load_meta(const std::string& path);

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Tensor> by_name_;
};

}  // namespace stt
