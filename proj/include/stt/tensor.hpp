#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stt/common.hpp"

namespace stt {

class ParameterStore;

/// Dense multi-axis array of 64-bit reals. A Tensor is a cheap value-type
/// handle to a shared node; the node's identity (its address) is what the
/// Tape keys gradient accumulation on, so two handles to the same node share
/// one gradient accumulator. Values are treated as immutable once an op has
/// produced them; only initialization and the optimizer write through
/// values_mut().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;  // element count; 1 for rank-0 scalars

    std::span<const double> values() const;
    /// Mutable view. Const on the handle: a Tensor is a shared reference and
    /// copying it never deep-copies the storage.
    std::span<double> values_mut() const;

    bool requires_grad() const;
    /// Gradient accumulator, allocated zero-filled on first access.
    std::span<double> grad() const;
    std::span<const double> grad_view() const;  // empty span if never allocated
    void zero_grad() const;

    /// Value of a rank-0 or single-element tensor.
    double item() const;
    double at(std::initializer_list<std::size_t> idx) const;

    /// Stable identity for gradient keying and aliasing checks.
    const void* id() const { return node_.get(); }

private:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until requested
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
};

/// Ordered record of executed differentiable ops. backward() replays the
/// record in exact reverse execution order, accumulating into the grad
/// buffers of the input tensors. A tape that has run backward refuses to run
/// again until reset() — silent double accumulation is a bug class we reject
/// outright.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t num_ops() const { return records_.size(); }

    void record(std::function<void()> backward_step);

    /// Seeds d(loss)/d(loss) = 1 and walks the record backwards.
    /// loss must be a single-element tensor with requires_grad.
    void backward(Tensor loss);

    /// Clears the record and allows a fresh forward+backward.
    void reset();

private:
    std::vector<std::function<void()>> records_;
    bool recording_ = true;
    bool backward_done_ = false;
};

// ---- element-wise and structural ops ------------------------------------
// All ops validate shapes, compute forward values, verify the result is
// finite (non-finite results throw stt::error naming the op), and register
// their gradient rule on the tape when recording and any input requires grad.

Tensor add(Tape& t, const Tensor& a, const Tensor& b);  // same shape, or b rank-1 broadcast over last axis
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);  // Hadamard, same shape
Tensor scale(Tape& t, const Tensor& a, double c);
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);  // [M,K]x[K,N] or [B,M,K]x[B,K,N]
Tensor transpose(Tape& t, const Tensor& a);                // rank-2
Tensor permute(Tape& t, const Tensor& a, const std::vector<std::size_t>& perm);
Tensor reshape(Tape& t, const Tensor& a, std::vector<std::size_t> shape);
Tensor concat(Tape& t, const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_rows(Tape& t, const Tensor& a, std::size_t begin, std::size_t end);  // along axis 0
Tensor gather_rows(Tape& t, const Tensor& a, const std::vector<std::size_t>& rows);
Tensor mean_axis(Tape& t, const Tensor& a, std::size_t axis);
Tensor sum_all(Tape& t, const Tensor& a);  // -> rank-0 scalar
Tensor softmax(Tape& t, const Tensor& a, std::size_t axis);
Tensor log_softmax(Tape& t, const Tensor& a, std::size_t axis);
Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor gelu(Tape& t, const Tensor& a);
Tensor relu(Tape& t, const Tensor& a);
Tensor exp(Tape& t, const Tensor& a);
Tensor xlogx(Tape& t, const Tensor& a);  // x*log(x), with 0 -> 0
Tensor div_by_scalar(Tape& t, const Tensor& a, const Tensor& s);  // s rank-0
/// Euclidean distance matrix between row sets: [N,D],[M,D] -> [N,M].
/// Zero distances use the zero subgradient.
Tensor pairwise_distance(Tape& t, const Tensor& a, const Tensor& b);

/// x[N,K] * w[K,M] + b[M] (b optional: pass undefined Tensor to skip).
Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b);

/// layer_norm epsilon, fixed project-wide.
inline constexpr double kLayerNormEps = 1e-6;

/// Central-finite-difference check of d(scalar_fn)/d(params). Returns the
/// max over all parameter entries of |analytic - numeric| /
/// max(1e-12, |analytic| + |numeric|). scalar_fn must be deterministic and
/// produce a single-element tensor (anything else is a contract error).
double grad_check(const std::function<Tensor(Tape&)>& scalar_fn, ParameterStore& params, double eps);

}  // namespace stt
