#pragma once

// Dense row-major tensors of doubles with a reverse-mode tape.
//
// A Tensor is a shared handle to storage; copies alias. Operations live on
// Tape, which records one node per differentiable op whose inputs require
// gradients. Leaves (parameters, inputs) are plain Tensors created with
// requires_grad = true; their grad slot accumulates across backward calls
// until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lrclr/errors.hpp"

namespace lrclr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool leaf = true;
};
}  // namespace detail

class Tape;

class Tensor {
  public:
    Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : s_(std::make_shared<detail::Storage>()) {
        if (shape_size(shape) != data.size()) {
            throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                             std::to_string(shape_size(shape)) + " values, got " +
                             std::to_string(data.size()));
        }
        s_->shape = std::move(shape);
        s_->data = std::move(data);
        s_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{}, {v}, requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::vector<double>(values), requires_grad);
    }
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false) {
        return Tensor({values.size()}, std::vector<double>(values), requires_grad);
    }
    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.s_->data[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }

    // Matrix view: the last dimension is columns, everything before it rows.
    std::size_t cols() const { return s_->shape.empty() ? 1 : s_->shape.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    std::span<const double> data() const { return s_->data; }
    // Direct write access, for initialisation and optimizer updates only.
    std::span<double> mutable_data() { return s_->data; }

    double operator[](std::size_t i) const { return s_->data[i]; }
    double operator()(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
        return s_->data[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool on) { s_->requires_grad = on; }
    bool is_leaf() const { return s_->leaf; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const double> grad() const { return s_->grad; }
    // Grad slot, allocated (zero-filled) on first access. Like the data, it
    // belongs to the shared storage, so const handles may write it.
    std::span<double> grad_buffer() const {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
        return s_->grad;
    }
    void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

    bool all_finite() const {
        return std::all_of(s_->data.begin(), s_->data.end(), [](double v) { return std::isfinite(v); });
    }

    // Deep copy without gradient history.
    Tensor clone(bool requires_grad = false) const { return Tensor(shape(), s_->data, requires_grad); }

    bool aliases(const Tensor& other) const { return s_ == other.s_; }

  private:
    friend class Tape;
    std::shared_ptr<detail::Storage> s_;
};

// Records executed operations; backward() replays them in reverse.
class Tape {
  public:
    // With record = false no nodes are kept (inference / finite differences).
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }
    bool recording() const { return record_; }

    // ---- linear algebra -------------------------------------------------

    Tensor matmul(const Tensor& a, const Tensor& b) {
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        if (a.rank() > 2 || b.rank() > 2 || k != b.rows()) {
            throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                             shape_string(b.shape()));
        }
        std::vector<double> out(m * n, 0.0);
        gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
        return emit({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
            if (a.requires_grad()) {
                // dA += dC * B^T
                auto ga = a.grad_buffer();
                const double* bp = b.data().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bp[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                // dB += A^T * dC
                auto gb = b.grad_buffer();
                const double* ap = a.data().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = ap[i * k + p];
                        double* row = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) row[j] += aip * g[i * n + j];
                    }
            }
        });
    }

    // a * b^T without materialising the transpose.
    Tensor matmul_nt(const Tensor& a, const Tensor& b) {
        const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
        if (a.rank() > 2 || b.rank() > 2 || k != b.cols()) {
            throw ShapeError("matmul_nt: cannot multiply " + shape_string(a.shape()) + " by transpose of " +
                             shape_string(b.shape()));
        }
        std::vector<double> out(m * n);
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += ap[i * k + p] * bp[j * k + p];
                out[i * n + j] = acc;
            }
        return emit({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
            if (a.requires_grad()) {
                // dA += dC * B
                auto ga = a.grad_buffer();
                gemm_nn(g.data(), b.data().data(), ga.data(), m, n, k);
            }
            if (b.requires_grad()) {
                // dB += dC^T * A
                auto gb = b.grad_buffer();
                const double* ap2 = a.data().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j];
                        double* row = gb.data() + j * k;
                        for (std::size_t p = 0; p < k; ++p) row[p] += gij * ap2[i * k + p];
                    }
            }
        });
    }

    Tensor transpose(const Tensor& a) {
        require_matrix(a, "transpose");
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
        return emit({n, m}, std::move(out), {a}, [a, m, n](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }

    // ---- elementwise ------------------------------------------------------

    Tensor add(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "add");
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        return emit(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    Tensor sub(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "sub");
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
        return emit(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
            accumulate(a, g);
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "mul");
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        return emit(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
        });
    }

    Tensor scale(const Tensor& a, double s) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
        return emit(a.shape(), std::move(out), {a}, [a, s](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
    }

    // a[m x n] + bias[n] on every row (the only broadcast supported).
    Tensor add_row(const Tensor& a, const Tensor& bias) {
        const std::size_t m = a.rows(), n = a.cols();
        if (bias.size() != n) {
            throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                             shape_string(a.shape()));
        }
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
        return emit(a.shape(), std::move(out), {a, bias}, [a, bias, m, n](std::span<const double> g) {
            accumulate(a, g);
            if (bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }

    Tensor exp(const Tensor& a) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
        Tensor y = emit(a.shape(), out, {a}, {});
        set_rule(y, [a, out = std::move(out)](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
        });
        return y;
    }

    Tensor log(const Tensor& a) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!(a[i] > 0.0)) throw NumericalError("log: non-positive input " + std::to_string(a[i]));
            out[i] = std::log(a[i]);
        }
        return emit(a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        });
    }

    // Exact (erf-based) GELU.
    Tensor gelu(const Tensor& a) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * kInvSqrt2));
        return emit(a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = a[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * (cdf + x * pdf);
            }
        });
    }

    // ---- row-wise ---------------------------------------------------------

    Tensor softmax_rows(const Tensor& a) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < m; ++i) {
            const double* x = a.data().data() + i * n;
            double* y = out.data() + i * n;
            const double mx = *std::max_element(x, x + n);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
            for (std::size_t j = 0; j < n; ++j) y[j] /= total;
        }
        Tensor y = emit(a.shape(), out, {a}, {});
        set_rule(y, [a, m, n, out = std::move(out)](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * out[i * n + j];
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += out[i * n + j] * (g[i * n + j] - dot);
            }
        });
        return y;
    }

    // log(sum(exp(row))) per row, shape [m]; stabilised by the row max.
    Tensor logsumexp_rows(const Tensor& a) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(m);
        std::vector<double> prob(a.size());
        for (std::size_t i = 0; i < m; ++i) {
            const double* x = a.data().data() + i * n;
            const double mx = *std::max_element(x, x + n);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) total += (prob[i * n + j] = std::exp(x[j] - mx));
            for (std::size_t j = 0; j < n; ++j) prob[i * n + j] /= total;
            out[i] = mx + std::log(total);
        }
        Tensor y = emit({m}, std::move(out), {a}, {});
        set_rule(y, [a, m, n, prob = std::move(prob)](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * prob[i * n + j];
        });
        return y;
    }

    static constexpr double kLayerNormEps = 1e-5;

    Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
        const std::size_t m = a.rows(), d = a.cols();
        if (gain.size() != d || bias.size() != d) {
            throw ShapeError("layernorm: gain " + shape_string(gain.shape()) + " / bias " +
                             shape_string(bias.shape()) + " do not match " + shape_string(a.shape()));
        }
        std::vector<double> out(a.size()), xhat(a.size()), inv(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double* x = a.data().data() + i * d;
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += x[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= static_cast<double>(d);
            inv[i] = 1.0 / std::sqrt(var + kLayerNormEps);
            for (std::size_t j = 0; j < d; ++j) {
                xhat[i * d + j] = (x[j] - mean) * inv[i];
                out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
            }
        }
        Tensor y = emit(a.shape(), std::move(out), {a, gain, bias}, {});
        set_rule(y, [a, gain, bias, m, d, xhat = std::move(xhat), inv = std::move(inv)](
                        std::span<const double> g) {
            if (gain.requires_grad()) {
                auto gg = gain.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
            }
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                const double dd = static_cast<double>(d);
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_dx = 0.0, mean_dx_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[i * d + j] * gain[j];
                        mean_dx += dxh;
                        mean_dx_xhat += dxh * xhat[i * d + j];
                    }
                    mean_dx /= dd;
                    mean_dx_xhat /= dd;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[i * d + j] * gain[j];
                        ga[i * d + j] += inv[i] * (dxh - mean_dx - xhat[i * d + j] * mean_dx_xhat);
                    }
                }
            }
        });
        return y;
    }

    static constexpr double kDegenerateNorm = 1e-12;

    // Unit Euclidean norm per row. Rows with norm below kDegenerateNorm pass
    // through unchanged (identity gradient) and set *degenerate when given.
    Tensor l2_normalize_rows(const Tensor& a, bool* degenerate = nullptr) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(a.size()), norms(m);
        bool any_degenerate = false;
        for (std::size_t i = 0; i < m; ++i) {
            double ss = 0.0;
            for (std::size_t j = 0; j < n; ++j) ss += a[i * n + j] * a[i * n + j];
            norms[i] = std::sqrt(ss);
            const bool deg = norms[i] < kDegenerateNorm;
            any_degenerate |= deg;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = deg ? a[i * n + j] : a[i * n + j] / norms[i];
        }
        if (degenerate) *degenerate = any_degenerate;
        Tensor y = emit(a.shape(), out, {a}, {});
        set_rule(y, [a, m, n, out = std::move(out), norms = std::move(norms)](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                if (norms[i] < kDegenerateNorm) {
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j];
                    continue;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += out[i * n + j] * g[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += (g[i * n + j] - out[i * n + j] * dot) / norms[i];
            }
        });
        return y;
    }

    // ---- structural -------------------------------------------------------

    Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
        const std::size_t n = a.cols();
        std::vector<std::size_t> idx(index.begin(), index.end());
        std::vector<double> out(idx.size() * n);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= a.rows()) {
                throw ContractError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                                    shape_string(a.shape()));
            }
            std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
        }
        const std::size_t count = idx.size();
        return emit({count, n}, std::move(out), {a}, [a, n, idx = std::move(idx)](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
        });
    }
    Tensor gather_rows(const Tensor& a, std::initializer_list<std::size_t> index) {
        return gather_rows(a, std::span<const std::size_t>(index.begin(), index.size()));
    }
    Tensor row(const Tensor& a, std::size_t r) { return gather_rows(a, {r}); }

    Tensor concat_rows(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw ContractError("concat_rows: no inputs");
        const std::size_t n = parts.front().cols();
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p.cols() != n) {
                throw ShapeError("concat_rows: " + shape_string(parts.front().shape()) + " vs " +
                                 shape_string(p.shape()));
            }
            total += p.rows();
        }
        std::vector<double> out;
        out.reserve(total * n);
        for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
        return emit({total, n}, std::move(out), parts, [parts](std::span<const double> g) {
            std::size_t offset = 0;
            for (const auto& p : parts) {
                accumulate(p, g.subspan(offset, p.size()));
                offset += p.size();
            }
        });
    }

    Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
        const std::size_t m = a.rows(), n = a.cols();
        if (begin + count > n) {
            throw ContractError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                ") out of range for " + shape_string(a.shape()));
        }
        std::vector<double> out(m * count);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + begin + j];
        return emit({m, count}, std::move(out), {a}, [a, m, n, begin, count](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
        });
    }

    Tensor concat_cols(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw ContractError("concat_cols: no inputs");
        const std::size_t m = parts.front().rows();
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p.rows() != m) {
                throw ShapeError("concat_cols: " + shape_string(parts.front().shape()) + " vs " +
                                 shape_string(p.shape()));
            }
            total += p.cols();
        }
        std::vector<double> out(m * total);
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t c = p.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) out[i * total + offset + j] = p[i * c + j];
            offset += c;
        }
        return emit({m, total}, std::move(out), parts, [parts, m, total](std::span<const double> g) {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t c = p.cols();
                if (p.requires_grad()) {
                    auto gp = p.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
                }
                off += c;
            }
        });
    }

    // Main diagonal of a square matrix, shape [n].
    Tensor diagonal(const Tensor& a) {
        require_matrix(a, "diagonal");
        const std::size_t n = a.rows();
        if (a.cols() != n) throw ShapeError("diagonal: non-square " + shape_string(a.shape()));
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = a[i * n + i];
        return emit({n}, std::move(out), {a}, [a, n](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g[i];
        });
    }

    // ---- reductions -------------------------------------------------------

    Tensor sum(const Tensor& a) {
        double total = 0.0;
        for (double v : a.data()) total += v;
        return emit({}, {total}, {a}, [a](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (auto& v : ga) v += g[0];
        });
    }

    Tensor mean(const Tensor& a) {
        if (a.size() == 0) throw ContractError("mean: empty tensor");
        const double n = static_cast<double>(a.size());
        double total = 0.0;
        for (double v : a.data()) total += v;
        return emit({}, {total / n}, {a}, [a, n](std::span<const double> g) {
            auto ga = a.grad_buffer();
            for (auto& v : ga) v += g[0] / n;
        });
    }

    // ---- reverse pass -------------------------------------------------------

    // Accumulates dLoss/dLeaf into every requires_grad leaf reachable from
    // loss. Intermediate grads are reset first, so repeated calls add the
    // same gradient to the leaves again.
    void backward(const Tensor& loss) {
        if (loss.size() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_string(loss.shape()));
        }
        std::size_t end = nodes_.size();
        while (end > 0 && !nodes_[end - 1].output.aliases(loss)) --end;
        if (end == 0) throw ContractError("backward: loss was not produced on this tape");
        for (std::size_t i = 0; i < end; ++i) nodes_[i].output.zero_grad();
        Tensor seed = loss;
        seed.grad_buffer()[0] = 1.0;
        for (std::size_t i = end; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.output.has_grad()) continue;
            node.rule(node.output.grad());
        }
    }

    // Drops all recorded nodes (tensors stay alive while referenced).
    void clear() { nodes_.clear(); }

  private:
    using Rule = std::function<void(std::span<const double>)>;

    struct Node {
        Tensor output;
        Rule rule;
    };

    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

    static void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = a[i * k + p];
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    static void accumulate(const Tensor& t, std::span<const double> g) {
        if (!t.requires_grad()) return;
        auto gt = t.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.shape() != b.shape()) {
            throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
        }
    }
    static void require_matrix(const Tensor& a, const char* op) {
        if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
    }

    template <typename Inputs>
    Tensor emit(Shape shape, std::vector<double> data, const Inputs& inputs, Rule rule) {
        bool needs_grad = false;
        for (const auto& in : inputs) needs_grad |= in.requires_grad();
        Tensor out(std::move(shape), std::move(data));
        if (record_ && needs_grad) {
            out.s_->requires_grad = true;
            out.s_->leaf = false;
            nodes_.push_back(Node{out, std::move(rule)});
        }
        return out;
    }
    Tensor emit(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs, Rule rule) {
        return emit<std::initializer_list<Tensor>>(std::move(shape), std::move(data), inputs, std::move(rule));
    }

    // Attach the rule after emit() when the rule captures data that emit() consumed.
    void set_rule(const Tensor& out, Rule rule) {
        if (!nodes_.empty() && nodes_.back().output.aliases(out)) nodes_.back().rule = std::move(rule);
    }

    bool record_;
    std::vector<Node> nodes_;
};

// Result of comparing tape gradients with central finite differences.
struct GradcheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_leaf = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
};

// f builds a scalar from the leaves on the tape it is handed. Every leaf
// coordinate is perturbed by +/-eps; the relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradcheckReport gradcheck(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> leaves, double eps) {
    if (!(eps > 0.0)) throw ContractError("gradcheck: eps must be positive");
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    {
        Tape tape;
        Tensor loss = f(tape);
        tape.backward(loss);
    }
    GradcheckReport report;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        Tensor& leaf = leaves[l];
        std::vector<double> analytic(leaf.size(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            double up = 0.0;
            {
                Tape probe(false);
                up = f(probe).item();
            }
            values[i] = saved - eps;
            double down = 0.0;
            {
                Tape probe(false);
                down = f(probe).item();
            }
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double err =
                std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
            ++report.coordinates;
            if (err > report.max_relative_error || report.coordinates == 1) {
                report.max_relative_error = err;
                report.worst_leaf = l;
                report.worst_index = i;
                report.worst_analytic = analytic[i];
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace lrclr
