#include "stt/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stt/param_store.hpp"

namespace stt {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void ensure_finite(std::span<const double> v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw error(std::string(op) + ": non-finite value in result");
}

bool wants_grad(const Tape& t, std::initializer_list<const Tensor*> inputs) {
    if (!t.recording()) return false;
    for (const Tensor* in : inputs)
        if (in->requires_grad()) return true;
    return false;
}

/// out-of-line so every op body reads the same way: compute values, make the
/// result tensor, verify finiteness, optionally register the pullback.
Tensor make_result(Tape& t, std::vector<std::size_t> shape, std::vector<double> values, bool track,
                   const char* op) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(values), track);
    ensure_finite(out.values(), op);
    return out;
}

/// Accumulates src into dst (dst += src), sizes must match.
void axpy(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct AxisSplit {
    std::size_t outer, n, inner;
};
AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

void permute_raw(std::span<const double> in, const std::vector<std::size_t>& shape,
                 const std::vector<std::size_t>& perm, std::span<double> out) {
    const std::size_t r = shape.size();
    std::vector<std::size_t> out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = shape[perm[i]];
    auto in_st = strides_of(shape);
    auto out_st = strides_of(out_shape);
    std::vector<std::size_t> idx(r, 0);
    const std::size_t n = in.size();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[perm[i]] * out_st[i];
        out[off] = in[flat];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->values.assign(numel_of(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
    if (numel_of(shape) != values.size())
        throw dimension_error("tensor: shape " + shape_str(shape) + " does not match " +
                              std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_values({}, {v}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
    if (!node_) throw error("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const {
    if (!node_) throw error("use of undefined tensor");
    return node_->values.size();
}

std::span<const double> Tensor::values() const {
    if (!node_) throw error("use of undefined tensor");
    return node_->values;
}

std::span<double> Tensor::values_mut() const {
    if (!node_) throw error("use of undefined tensor");
    return node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<double> Tensor::grad() const {
    if (!node_) throw error("use of undefined tensor");
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    return node_->grad;
}

std::span<const double> Tensor::grad_view() const {
    if (!node_ || node_->grad.empty()) return {};
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (node_) node_->grad.clear();
}

double Tensor::item() const {
    if (size() != 1) throw contract_error("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    const auto& sh = shape();
    if (idx.size() != sh.size()) throw dimension_error("at(): index rank mismatch");
    std::size_t off = 0, i = 0;
    auto st = strides_of(sh);
    for (std::size_t v : idx) {
        if (v >= sh[i]) throw dimension_error("at(): index out of range");
        off += v * st[i++];
    }
    return node_->values[off];
}

// ---- Tape ----------------------------------------------------------------

void Tape::record(std::function<void()> backward_step) {
    if (recording_) records_.push_back(std::move(backward_step));
}

void Tape::backward(Tensor loss) {
    if (!recording_) throw contract_error("backward on a non-recording tape");
    if (backward_done_) throw contract_error("backward already run on this tape; reset() first");
    if (loss.size() != 1) throw contract_error("backward: loss must be a single-element tensor");
    if (!loss.requires_grad()) throw contract_error("backward: loss does not require grad");
    backward_done_ = true;
    loss.grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void Tape::reset() {
    records_.clear();
    backward_done_ = false;
}

// ---- ops -----------------------------------------------------------------

namespace {

/// add/sub share validation: identical shapes, or b rank-1 matching a's last axis.
enum class Broadcast { none, last_axis };
Broadcast addsub_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.shape()[0]) return Broadcast::last_axis;
    throw dimension_error(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " are incompatible");
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    Broadcast mode = addsub_mode(a, b, "add");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    if (mode == Broadcast::none) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        const std::size_t d = bv.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % d];
    }
    bool track = wants_grad(t, {&a, &b});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "add");
    if (track)
        t.record([a, b, res, mode]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            if (a.requires_grad()) axpy(a.grad(), og);
            if (b.requires_grad()) {
                auto bg = b.grad();
                if (mode == Broadcast::none) {
                    axpy(bg, og);
                } else {
                    const std::size_t d = bg.size();
                    for (std::size_t i = 0; i < og.size(); ++i) bg[i % d] += og[i];
                }
            }
        });
    return res;
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
    Broadcast mode = addsub_mode(a, b, "sub");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    if (mode == Broadcast::none) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    } else {
        const std::size_t d = bv.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % d];
    }
    bool track = wants_grad(t, {&a, &b});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "sub");
    if (track)
        t.record([a, b, res, mode]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            if (a.requires_grad()) axpy(a.grad(), og);
            if (b.requires_grad()) {
                auto bg = b.grad();
                if (mode == Broadcast::none) {
                    for (std::size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
                } else {
                    const std::size_t d = bg.size();
                    for (std::size_t i = 0; i < og.size(); ++i) bg[i % d] -= og[i];
                }
            }
        });
    return res;
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw dimension_error("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                              " differ");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    bool track = wants_grad(t, {&a, &b});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "mul");
    if (track)
        t.record([a, b, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            if (a.requires_grad()) {
                auto ag = a.grad();
                auto bv = b.values();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto bg = b.grad();
                auto av = a.values();
                for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av[i];
            }
        });
    return res;
}

Tensor scale(Tape& t, const Tensor& a, double c) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "scale");
    if (track)
        t.record([a, res, c]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * c;
        });
    return res;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    const bool batched = as.size() == 3 && bs.size() == 3;
    if (!(as.size() == 2 && bs.size() == 2) && !batched)
        throw dimension_error("matmul: unsupported ranks for shapes " + shape_str(as) + " x " +
                              shape_str(bs));
    if (batched && as[0] != bs[0])
        throw dimension_error("matmul: batch axes disagree: " + shape_str(as) + " x " + shape_str(bs));
    const std::size_t B = batched ? as[0] : 1;
    const std::size_t M = batched ? as[1] : as[0];
    const std::size_t K = batched ? as[2] : as[1];
    const std::size_t Kb = batched ? bs[1] : bs[0];
    const std::size_t N = batched ? bs[2] : bs[1];
    if (K != Kb)
        throw dimension_error("matmul: inner axes disagree: " + shape_str(as) + " x " + shape_str(bs));

    std::vector<double> out(B * M * N);
    for (std::size_t i = 0; i < B; ++i) {
        ConstMap A(a.values().data() + i * M * K, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(K));
        ConstMap Bm(b.values().data() + i * K * N, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        MutMap C(out.data() + i * M * N, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
        C.noalias() = A * Bm;
    }
    std::vector<std::size_t> out_shape = batched ? std::vector<std::size_t>{B, M, N}
                                                 : std::vector<std::size_t>{M, N};
    bool track = wants_grad(t, {&a, &b});
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "matmul");
    if (track)
        t.record([a, b, res, B, M, K, N]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            for (std::size_t i = 0; i < B; ++i) {
                ConstMap dC(og.data() + i * M * N, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
                if (a.requires_grad()) {
                    ConstMap Bm(b.values().data() + i * K * N, static_cast<Eigen::Index>(K),
                                static_cast<Eigen::Index>(N));
                    MutMap dA(a.grad().data() + i * M * K, static_cast<Eigen::Index>(M),
                              static_cast<Eigen::Index>(K));
                    dA.noalias() += dC * Bm.transpose();
                }
                if (b.requires_grad()) {
                    ConstMap A(a.values().data() + i * M * K, static_cast<Eigen::Index>(M),
                               static_cast<Eigen::Index>(K));
                    MutMap dB(b.grad().data() + i * K * N, static_cast<Eigen::Index>(K),
                              static_cast<Eigen::Index>(N));
                    dB.noalias() += A.transpose() * dC;
                }
            }
        });
    return res;
}

Tensor transpose(Tape& t, const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("transpose: expects rank 2, got " + shape_str(a.shape()));
    return permute(t, a, {1, 0});
}

Tensor permute(Tape& t, const Tensor& a, const std::vector<std::size_t>& perm) {
    const auto& sh = a.shape();
    if (perm.size() != sh.size()) throw dimension_error("permute: perm rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw dimension_error("permute: invalid permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> out_shape(sh.size());
    for (std::size_t i = 0; i < sh.size(); ++i) out_shape[i] = sh[perm[i]];
    std::vector<double> out(a.size());
    permute_raw(a.values(), sh, perm, out);
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "permute");
    if (track) {
        t.record([a, res, perm]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            // scatter back: out[perm-position of idx] came from in[idx]
            std::vector<std::size_t> inv(perm.size());
            for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
            std::vector<double> scattered(og.size());
            std::vector<std::size_t> out_shape2(perm.size());
            for (std::size_t i = 0; i < perm.size(); ++i) out_shape2[i] = a.shape()[perm[i]];
            permute_raw(og, out_shape2, inv, scattered);
            axpy(a.grad(), scattered);
        });
    }
    return res;
}

Tensor reshape(Tape& t, const Tensor& a, std::vector<std::size_t> shape) {
    if (numel_of(shape) != a.size())
        throw dimension_error("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                              " changes element count");
    std::vector<double> out(a.values().begin(), a.values().end());
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, std::move(shape), std::move(out), track, "reshape");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            axpy(a.grad(), og);
        });
    return res;
}

Tensor concat(Tape& t, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw contract_error("concat: no inputs");
    const auto& ref = parts.front().shape();
    if (axis >= ref.size()) throw dimension_error("concat: axis out of range");
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        const auto& sh = p.shape();
        if (sh.size() != ref.size()) throw dimension_error("concat: rank mismatch");
        for (std::size_t i = 0; i < sh.size(); ++i)
            if (i != axis && sh[i] != ref[i])
                throw dimension_error("concat: shapes " + shape_str(ref) + " and " + shape_str(sh) +
                                      " differ off-axis");
        axis_total += sh[axis];
    }
    std::vector<std::size_t> out_shape = ref;
    out_shape[axis] = axis_total;
    AxisSplit s = split_axis(out_shape, axis);
    std::vector<double> out(numel_of(out_shape));
    std::size_t axis_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t pn = p.shape()[axis];
        const auto pv = p.values();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t j = 0; j < pn; ++j)
                std::copy_n(pv.data() + (o * pn + j) * s.inner, s.inner,
                            out.data() + (o * s.n + axis_off + j) * s.inner);
        axis_off += pn;
    }
    bool track = false;
    if (t.recording())
        for (const Tensor& p : parts)
            if (p.requires_grad()) track = true;
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "concat");
    if (track)
        t.record([parts, res, s, axis]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            std::size_t axis_off = 0;
            for (const Tensor& p : parts) {
                const std::size_t pn = p.shape()[axis];
                if (p.requires_grad()) {
                    auto pg = p.grad();
                    for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t j = 0; j < pn; ++j) {
                            const double* src = og.data() + (o * s.n + axis_off + j) * s.inner;
                            double* dst = pg.data() + (o * pn + j) * s.inner;
                            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                        }
                }
                axis_off += pn;
            }
        });
    return res;
}

Tensor slice_rows(Tape& t, const Tensor& a, std::size_t begin, std::size_t end) {
    const auto& sh = a.shape();
    if (sh.empty()) throw dimension_error("slice_rows: rank-0 input");
    if (begin > end || end > sh[0])
        throw dimension_error("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                              ") out of bounds for " + shape_str(sh));
    const std::size_t row = a.size() / sh[0];
    std::vector<std::size_t> out_shape = sh;
    out_shape[0] = end - begin;
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                            a.values().begin() + static_cast<std::ptrdiff_t>(end * row));
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "slice_rows");
    if (track)
        t.record([a, res, begin, row]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            for (std::size_t i = 0; i < og.size(); ++i) ag[begin * row + i] += og[i];
        });
    return res;
}

Tensor gather_rows(Tape& t, const Tensor& a, const std::vector<std::size_t>& rows) {
    const auto& sh = a.shape();
    if (sh.empty()) throw dimension_error("gather_rows: rank-0 input");
    const std::size_t row = a.size() / sh[0];
    for (std::size_t r : rows)
        if (r >= sh[0]) throw dimension_error("gather_rows: row index " + std::to_string(r) + " out of range");
    std::vector<std::size_t> out_shape = sh;
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * row);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(a.values().data() + rows[i] * row, row, out.data() + i * row);
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "gather_rows");
    if (track)
        t.record([a, res, rows, row]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t k = 0; k < row; ++k) ag[rows[i] * row + k] += og[i * row + k];
        });
    return res;
}

Tensor mean_axis(Tape& t, const Tensor& a, std::size_t axis) {
    const auto& sh = a.shape();
    if (axis >= sh.size()) throw dimension_error("mean_axis: axis out of range for " + shape_str(sh));
    AxisSplit s = split_axis(sh, axis);
    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < sh.size(); ++i)
        if (i != axis) out_shape.push_back(sh[i]);
    std::vector<double> out(s.outer * s.inner, 0.0);
    const auto av = a.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.n; ++j)
            for (std::size_t i = 0; i < s.inner; ++i)
                out[o * s.inner + i] += av[(o * s.n + j) * s.inner + i];
    const double inv = 1.0 / static_cast<double>(s.n);
    for (double& v : out) v *= inv;
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, std::move(out_shape), std::move(out), track, "mean_axis");
    if (track)
        t.record([a, res, s, inv]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t j = 0; j < s.n; ++j)
                    for (std::size_t i = 0; i < s.inner; ++i)
                        ag[(o * s.n + j) * s.inner + i] += og[o * s.inner + i] * inv;
        });
    return res;
}

Tensor sum_all(Tape& t, const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, {}, {acc}, track, "sum_all");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            for (double& g : ag) g += og[0];
        });
    return res;
}

Tensor softmax(Tape& t, const Tensor& a, std::size_t axis) {
    const auto& sh = a.shape();
    if (axis >= sh.size()) throw dimension_error("softmax: axis out of range for " + shape_str(sh));
    AxisSplit s = split_axis(sh, axis);
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[(o * s.n + j) * s.inner + i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
                double e = std::exp(av[(o * s.n + j) * s.inner + i] - mx);
                out[(o * s.n + j) * s.inner + i] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < s.n; ++j) out[(o * s.n + j) * s.inner + i] /= denom;
        }
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, sh, std::move(out), track, "softmax");
    if (track)
        t.record([a, res, s]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            auto y = res.values();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < s.n; ++j) {
                        std::size_t k = (o * s.n + j) * s.inner + i;
                        dot += og[k] * y[k];
                    }
                    for (std::size_t j = 0; j < s.n; ++j) {
                        std::size_t k = (o * s.n + j) * s.inner + i;
                        ag[k] += y[k] * (og[k] - dot);
                    }
                }
        });
    return res;
}

Tensor log_softmax(Tape& t, const Tensor& a, std::size_t axis) {
    const auto& sh = a.shape();
    if (axis >= sh.size()) throw dimension_error("log_softmax: axis out of range for " + shape_str(sh));
    AxisSplit s = split_axis(sh, axis);
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[(o * s.n + j) * s.inner + i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) denom += std::exp(av[(o * s.n + j) * s.inner + i] - mx);
            const double lse = mx + std::log(denom);
            for (std::size_t j = 0; j < s.n; ++j) {
                std::size_t k = (o * s.n + j) * s.inner + i;
                out[k] = av[k] - lse;
            }
        }
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, sh, std::move(out), track, "log_softmax");
    if (track)
        t.record([a, res, s]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            auto y = res.values();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i) {
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < s.n; ++j) gsum += og[(o * s.n + j) * s.inner + i];
                    for (std::size_t j = 0; j < s.n; ++j) {
                        std::size_t k = (o * s.n + j) * s.inner + i;
                        ag[k] += og[k] - std::exp(y[k]) * gsum;
                    }
                }
        });
    return res;
}

Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gain, const Tensor& bias) {
    const auto& sh = a.shape();
    if (sh.empty()) throw dimension_error("layer_norm: rank-0 input");
    const std::size_t d = sh.back();
    if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d)
        throw dimension_error("layer_norm: gain/bias must be rank-1 of length " + std::to_string(d));
    const std::size_t rows = a.size() / d;
    const auto av = a.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<double> out(a.size());
    std::vector<double> invs(rows), mus(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += x[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        mus[r] = mu;
        invs[r] = inv;
        for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (x[i] - mu) * inv * gv[i] + bv[i];
    }
    bool track = wants_grad(t, {&a, &gain, &bias});
    Tensor res = make_result(t, sh, std::move(out), track, "layer_norm");
    if (track)
        t.record([a, gain, bias, res, d, rows, mus, invs]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            const auto av = a.values();
            const auto gv = gain.values();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* x = av.data() + r * d;
                const double* dy = og.data() + r * d;
                const double mu = mus[r], inv = invs[r];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double xhat = (x[i] - mu) * inv;
                    const double dxhat = dy[i] * gv[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                if (a.requires_grad()) {
                    auto ag = a.grad();
                    for (std::size_t i = 0; i < d; ++i) {
                        const double xhat = (x[i] - mu) * inv;
                        const double dxhat = dy[i] * gv[i];
                        ag[r * d + i] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) /
                                                            static_cast<double>(d));
                    }
                }
                if (gain.requires_grad()) {
                    auto gg = gain.grad();
                    for (std::size_t i = 0; i < d; ++i) gg[i] += dy[i] * (x[i] - mu) * inv;
                }
                if (bias.requires_grad()) {
                    auto bg = bias.grad();
                    for (std::size_t i = 0; i < d; ++i) bg[i] += dy[i];
                }
            }
        });
    return res;
}

Tensor gelu(Tape& t, const Tensor& a) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "gelu");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            const auto av = a.values();
            for (std::size_t i = 0; i < og.size(); ++i) {
                const double x = av[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ag[i] += og[i] * (cdf + x * pdf);
            }
        });
    return res;
}

Tensor relu(Tape& t, const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "relu");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            const auto av = a.values();
            for (std::size_t i = 0; i < og.size(); ++i)
                if (av[i] > 0.0) ag[i] += og[i];
        });
    return res;
}

Tensor exp(Tape& t, const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "exp");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            auto y = res.values();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * y[i];
        });
    return res;
}

Tensor xlogx(Tape& t, const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        if (x < 0.0) throw contract_error("xlogx: negative input " + std::to_string(x));
        out[i] = x == 0.0 ? 0.0 : x * std::log(x);
    }
    bool track = wants_grad(t, {&a});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "xlogx");
    if (track)
        t.record([a, res]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            auto ag = a.grad();
            const auto av = a.values();
            // derivative log(x)+1; the x == 0 limit uses the 0 subgradient
            for (std::size_t i = 0; i < og.size(); ++i)
                if (av[i] > 0.0) ag[i] += og[i] * (std::log(av[i]) + 1.0);
        });
    return res;
}

Tensor div_by_scalar(Tape& t, const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw dimension_error("div_by_scalar: divisor must be single-element");
    const double sv = s.values()[0];
    if (sv == 0.0) throw contract_error("div_by_scalar: division by zero");
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / sv;
    bool track = wants_grad(t, {&a, &s});
    Tensor res = make_result(t, a.shape(), std::move(out), track, "div_by_scalar");
    if (track)
        t.record([a, s, res, sv]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            if (a.requires_grad()) {
                auto ag = a.grad();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] / sv;
            }
            if (s.requires_grad()) {
                const auto av = a.values();
                double acc = 0.0;
                for (std::size_t i = 0; i < og.size(); ++i) acc += og[i] * (-av[i] / (sv * sv));
                s.grad()[0] += acc;
            }
        });
    return res;
}

Tensor pairwise_distance(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        throw dimension_error("pairwise_distance: shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()) + " are incompatible");
    const std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = av[i * d + k] - bv[j * d + k];
                acc += diff * diff;
            }
            out[i * m + j] = std::sqrt(acc);
        }
    bool track = wants_grad(t, {&a, &b});
    Tensor res = make_result(t, {n, m}, std::move(out), track, "pairwise_distance");
    if (track)
        t.record([a, b, res, n, m, d]() mutable {
            auto og = res.grad_view();
            if (og.empty()) return;
            const auto av = a.values();
            const auto bv = b.values();
            auto y = res.values();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double dij = y[i * m + j];
                    const double g = og[i * m + j];
                    if (g == 0.0 || dij == 0.0) continue;  // zero subgradient at coincident points
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = (av[i * d + k] - bv[j * d + k]) / dij;
                        if (a.requires_grad()) a.grad()[i * d + k] += g * diff;
                        if (b.requires_grad()) b.grad()[j * d + k] -= g * diff;
                    }
                }
        });
    return res;
}

Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(t, x, w);
    if (!b.defined()) return y;
    return add(t, y, b);
}

// ---- grad_check ----------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&)>& scalar_fn, ParameterStore& params, double eps) {
    if (eps <= 0.0) throw contract_error("grad_check: eps must be > 0");
    params.zero_grad();
    Tape tape;
    Tensor out = scalar_fn(tape);
    if (out.size() != 1) throw contract_error("grad_check: scalar_fn must produce a single-element tensor");
    tape.backward(out);

    // Snapshot analytic gradients before perturbing anything.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const std::string& name : params.names()) {
        auto g = params.get(name).grad_view();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(params.get(name).size(), 0.0);
    }

    double max_err = 0.0;
    std::size_t pi = 0;
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        auto vals = p.values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + eps;
            Tape tp(false);
            const double fp = scalar_fn(tp).item();
            vals[i] = orig - eps;
            Tape tm(false);
            const double fm = scalar_fn(tm).item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
        ++pi;
    }
    return max_err;
}

}  // namespace stt
