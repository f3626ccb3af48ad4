#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// A Tape records every operation in construction order; values live in one
// contiguous arena so a graph of a few thousand small nodes stays cheap to
// build and to tear down. backward() walks the nodes in reverse construction
// order exactly once and scatters parameter gradients into a ParameterStore.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dts/error.hpp"

namespace dts::ad {

class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false)
        : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad)
    {
        std::size_t n = 1;
        for (auto d : shape_) {
            if (d == 0) throw ShapeError("tensor: zero-sized dimension");
            n *= d;
        }
        if (shape_.size() > 2) throw ShapeError("tensor: rank above 2 is not supported");
        if (n != values_.size()) {
            throw ShapeError("tensor: shape " + describe(shape_) + " holds " + std::to_string(n) +
                             " values, got " + std::to_string(values_.size()));
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false)
    {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vector(std::vector<double> v)
    {
        auto n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
    {
        return Tensor({rows, cols}, std::move(v));
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : 1; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::vector<double>& storage() noexcept { return values_; }
    const std::vector<double>& storage() const noexcept { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

    double item() const
    {
        if (values_.size() != 1) throw ShapeError("tensor: item() on non-scalar " + describe(shape_));
        return values_[0];
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool v) noexcept { requires_grad_ = v; }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    static std::string describe(const std::vector<std::size_t>& shape)
    {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
};

struct ParameterEntry {
    std::string path;
    Tensor value;
    std::vector<double> grad;
};

/// Named learnable tensors with same-shape gradient buffers.
class ParameterStore {
public:
    std::size_t add(const std::string& path, Tensor init)
    {
        if (index_.count(path)) throw Error("parameter store: duplicate path '" + path + "'");
        init.set_requires_grad(true);
        std::vector<double> grad(init.size(), 0.0);
        entries_.push_back({path, std::move(init), std::move(grad)});
        index_.emplace(path, entries_.size() - 1);
        return entries_.size() - 1;
    }

    bool contains(const std::string& path) const { return index_.count(path) != 0; }

    std::size_t index(const std::string& path) const
    {
        auto it = index_.find(path);
        if (it == index_.end()) throw Error("parameter store: unknown path '" + path + "'");
        return it->second;
    }

    Tensor& value(const std::string& path) { return entries_[index(path)].value; }
    const Tensor& value(const std::string& path) const { return entries_[index(path)].value; }
    Tensor& value(std::size_t idx) { return entries_[idx].value; }
    const Tensor& value(std::size_t idx) const { return entries_[idx].value; }

    std::vector<double>& grad(std::size_t idx) { return entries_[idx].grad; }
    const std::vector<double>& grad(std::size_t idx) const { return entries_[idx].grad; }
    const std::vector<double>& grad(const std::string& path) const { return entries_[index(path)].grad; }

    std::vector<ParameterEntry>& entries() noexcept { return entries_; }
    const std::vector<ParameterEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Paths in lexicographic order.
    std::vector<std::string> paths() const
    {
        std::vector<std::string> out;
        out.reserve(index_.size());
        for (const auto& [p, _] : index_) out.push_back(p);
        return out;
    }

    void zero_grad()
    {
        for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
    }

    /// Snapshot of the gradient buffers keyed by path.
    std::map<std::string, Tensor> gradients() const
    {
        std::map<std::string, Tensor> out;
        for (const auto& e : entries_) out.emplace(e.path, Tensor(e.value.shape(), e.grad));
        return out;
    }

private:
    std::vector<ParameterEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

enum class Op : std::uint8_t {
    constant,
    param,
    param_row,
    matmul,
    add,
    sub,
    mul,
    add_scaled,
    scale,
    concat,
    stack_rows,
    transpose,
    element,
    sum,
    mean,
    dot,
    sigmoid,
    log_sigmoid,
    prelu,
    softmax,
    log,
    clamp,
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const noexcept { return tape != nullptr && id >= 0; }
    std::span<const double> value() const;
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const;
    double item() const;
    Tensor tensor() const;
};

class Tape {
public:
    struct Mark {
        std::size_t nodes = 0, values = 0, links = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Drops every node but keeps the allocated capacity.
    void clear()
    {
        nodes_.clear();
        values_.clear();
        links_.clear();
        param_nodes_.clear();
        store_ = nullptr;
    }

    Mark mark() const { return {nodes_.size(), values_.size(), links_.size()}; }

    /// Discards every node created after `m`.
    void rewind(const Mark& m)
    {
        nodes_.resize(m.nodes);
        values_.resize(m.values);
        links_.resize(m.links);
        for (auto& id : param_nodes_) {
            if (id >= static_cast<std::int32_t>(m.nodes)) id = -1;
        }
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    const ParameterStore* store() const noexcept { return store_; }

    Var constant(std::span<const double> values, std::size_t rows, std::size_t cols = 1)
    {
        if (values.size() != rows * cols) throw ShapeError("constant: value count does not match shape");
        auto id = push(Op::constant, rows, cols);
        std::copy(values.begin(), values.end(), data(id));
        return {this, id};
    }
    Var constant(const Tensor& t) { return constant(t.values(), t.rows(), t.cols()); }
    Var scalar(double v) { return constant(std::span<const double>(&v, 1), 1, 1); }

    /// Whole-parameter leaf; repeated requests within one graph share a node.
    Var param(ParameterStore& store, std::size_t idx)
    {
        bind(store);
        if (idx >= param_nodes_.size()) param_nodes_.resize(store.size(), -1);
        if (param_nodes_[idx] >= 0) return {this, param_nodes_[idx]};
        const auto& t = store.value(idx);
        auto id = push(Op::param, t.rows(), t.cols());
        std::copy(t.values().begin(), t.values().end(), data(id));
        nodes_[id].aux0 = static_cast<std::uint32_t>(idx);
        param_nodes_[idx] = id;
        return {this, id};
    }
    Var param(ParameterStore& store, const std::string& path) { return param(store, store.index(path)); }

    /// One row of a 2-D parameter (embedding lookup) as a column vector; the
    /// gradient is scattered back into that row only.
    Var param_row(ParameterStore& store, std::size_t idx, std::size_t row)
    {
        bind(store);
        const auto& t = store.value(idx);
        if (t.rank() != 2 || row >= t.rows()) throw ShapeError("param_row: row out of range");
        auto w = t.cols();
        auto id = push(Op::param_row, w, 1);
        std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(row * w), w, data(id));
        nodes_[id].aux0 = static_cast<std::uint32_t>(idx);
        nodes_[id].aux1 = static_cast<std::uint32_t>(row);
        return {this, id};
    }

    std::span<const double> value(std::int32_t id) const
    {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        return {values_.data() + n.off, static_cast<std::size_t>(n.rows) * n.cols};
    }
    std::size_t rows(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].rows; }
    std::size_t cols(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].cols; }

    // Low-level node construction shared by the op implementations below.
    struct Node {
        Op op;
        std::uint32_t rows, cols;
        std::size_t off;
        std::int32_t a = -1, b = -1;
        std::uint32_t aux0 = 0, aux1 = 0;
        double c0 = 0.0, c1 = 0.0;
    };

    std::int32_t push(Op op, std::size_t rows, std::size_t cols)
    {
        Node n{op, static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols), values_.size()};
        values_.resize(values_.size() + rows * cols);
        nodes_.push_back(n);
        return static_cast<std::int32_t>(nodes_.size() - 1);
    }
    double* data(std::int32_t id) { return values_.data() + nodes_[static_cast<std::size_t>(id)].off; }
    Node& node(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
    void link(std::int32_t id) { links_.push_back(id); }
    std::uint32_t link_count() const { return static_cast<std::uint32_t>(links_.size()); }

private:
    friend void backward(Var, ParameterStore&);

    void bind(ParameterStore& store)
    {
        if (store_ != nullptr && store_ != &store) throw Error("tape: a graph may draw parameters from one store only");
        store_ = &store;
    }

    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<std::int32_t> links_;
    std::vector<std::int32_t> param_nodes_;
    std::vector<double> grads_;
    ParameterStore* store_ = nullptr;
};

inline std::span<const double> Var::value() const { return tape->value(id); }
inline std::size_t Var::rows() const { return tape->rows(id); }
inline std::size_t Var::cols() const { return tape->cols(id); }
inline std::size_t Var::size() const { return rows() * cols(); }
inline double Var::item() const
{
    if (size() != 1) throw ShapeError("item(): variable is not a scalar");
    return value()[0];
}
inline Tensor Var::tensor() const
{
    auto v = value();
    std::vector<double> vals(v.begin(), v.end());
    if (cols() == 1) return Tensor({rows()}, std::move(vals));
    return Tensor({rows(), cols()}, std::move(vals));
}

namespace detail {

// Eight independent partial sums so the loop vectorizes without reassociation
// flags; the summation order is fixed, so results stay reproducible.
inline double dot_kernel(const double* x, const double* y, std::size_t n)
{
    double s[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) s[j] += x[i + j] * y[i + j];
    double t = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
    for (; i < n; ++i) t += x[i] * y[i];
    return t;
}

// y += a·x; the operands never overlap (distinct nodes of the arena).
inline void axpy(double* __restrict y, const double* __restrict x, double a, std::size_t n)
{
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline std::string dims(Var v) { return "[" + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + "]"; }

inline void same_tape(Var a, Var b, const char* op)
{
    if (a.tape != b.tape || a.tape == nullptr) throw Error(std::string(op) + ": operands live on different tapes");
}

inline void same_shape(Var a, Var b, const char* op)
{
    same_tape(a, b, op);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
    }
}

inline double sigmoid(double x)
{
    // branch-free: the sign of x is unpredictable inside the dynamics
    const double e = std::exp(-std::fabs(x));
    const double r = 1.0 / (1.0 + e);
    return x >= 0 ? r : e * r;
}

inline double log_sigmoid(double x)
{
    // log(1/(1+e^-x)) without overflow for large |x|
    if (x >= 0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

} // namespace detail

inline Var matmul(Var a, Var b)
{
    detail::same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ " + detail::dims(a) + " vs " + detail::dims(b));
    Tape& t = *a.tape;
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto id = t.push(Op::matmul, m, n);
    t.node(id).a = a.id;
    t.node(id).b = b.id;
    double* c = t.data(id);
    const double* pa = t.data(a.id);
    const double* pb = t.data(b.id);
    if (n == 1) {
        for (std::size_t i = 0; i < m; ++i) c[i] = detail::dot_kernel(pa + i * k, pb, k);
    } else {
        std::fill_n(c, m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* brow = pb + p * n;
                double* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    return {a.tape, id};
}

namespace detail {

template <class F>
Var binary(Op op, Var a, Var b, const char* name, F f)
{
    same_shape(a, b, name);
    Tape& t = *a.tape;
    auto id = t.push(op, a.rows(), a.cols());
    t.node(id).a = a.id;
    t.node(id).b = b.id;
    double* out = t.data(id);
    const double* x = t.data(a.id);
    const double* y = t.data(b.id);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
    return {a.tape, id};
}

template <class F>
Var unary(Op op, Var a, F f)
{
    Tape& t = *a.tape;
    auto id = t.push(op, a.rows(), a.cols());
    t.node(id).a = a.id;
    double* out = t.data(id);
    const double* x = t.data(a.id);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
    return {a.tape, id};
}

} // namespace detail

inline Var operator+(Var a, Var b) { return detail::binary(Op::add, a, b, "add", [](double x, double y) { return x + y; }); }
inline Var operator-(Var a, Var b) { return detail::binary(Op::sub, a, b, "sub", [](double x, double y) { return x - y; }); }
inline Var operator*(Var a, Var b) { return detail::binary(Op::mul, a, b, "mul", [](double x, double y) { return x * y; }); }

/// a + c·b
inline Var add_scaled(Var a, Var b, double c)
{
    Var r = detail::binary(Op::add_scaled, a, b, "add_scaled", [c](double x, double y) { return x + c * y; });
    a.tape->node(r.id).c0 = c;
    return r;
}

inline Var scale(Var a, double c)
{
    Var r = detail::unary(Op::scale, a, [c](double x) { return c * x; });
    a.tape->node(r.id).c0 = c;
    return r;
}

inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var neg(Var a) { return scale(a, -1.0); }

/// Stacks column vectors end to end.
inline Var concat(std::span<const Var> parts)
{
    if (parts.empty()) throw ShapeError("concat: no operands");
    Tape& t = *parts[0].tape;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::same_tape(parts[0], p, "concat");
        if (p.cols() != 1) throw ShapeError("concat: operand " + detail::dims(p) + " is not a column vector");
        total += p.rows();
    }
    auto id = t.push(Op::concat, total, 1);
    t.node(id).aux0 = t.link_count();
    t.node(id).aux1 = static_cast<std::uint32_t>(parts.size());
    double* out = t.data(id);
    for (const auto& p : parts) {
        t.link(p.id);
        auto v = t.value(p.id);
        out = std::copy(v.begin(), v.end(), out);
    }
    return {&t, id};
}
inline Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

/// Column vectors of equal length become the rows of a matrix.
inline Var stack_rows(std::span<const Var> rows)
{
    if (rows.empty()) throw ShapeError("stack_rows: no operands");
    Tape& t = *rows[0].tape;
    const std::size_t w = rows[0].rows();
    for (const auto& r : rows) {
        detail::same_tape(rows[0], r, "stack_rows");
        if (r.cols() != 1 || r.rows() != w) {
            throw ShapeError("stack_rows: operand " + detail::dims(r) + " vs [" + std::to_string(w) + "x1]");
        }
    }
    auto id = t.push(Op::stack_rows, rows.size(), w);
    t.node(id).aux0 = t.link_count();
    t.node(id).aux1 = static_cast<std::uint32_t>(rows.size());
    double* out = t.data(id);
    for (const auto& r : rows) {
        t.link(r.id);
        auto v = t.value(r.id);
        out = std::copy(v.begin(), v.end(), out);
    }
    return {&t, id};
}

inline Var transpose(Var a)
{
    Tape& t = *a.tape;
    const std::size_t m = a.rows(), n = a.cols();
    auto id = t.push(Op::transpose, n, m);
    t.node(id).a = a.id;
    double* out = t.data(id);
    const double* x = t.data(a.id);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return {a.tape, id};
}

/// Scalar view of entry i (row-major).
inline Var element(Var a, std::size_t i)
{
    if (i >= a.size()) throw ShapeError("element: index " + std::to_string(i) + " outside " + detail::dims(a));
    Tape& t = *a.tape;
    auto id = t.push(Op::element, 1, 1);
    t.node(id).a = a.id;
    t.node(id).aux0 = static_cast<std::uint32_t>(i);
    *t.data(id) = t.value(a.id)[i];
    return {a.tape, id};
}

inline Var sum(Var a)
{
    Tape& t = *a.tape;
    auto v = a.value();
    double s = std::accumulate(v.begin(), v.end(), 0.0);
    auto id = t.push(Op::sum, 1, 1);
    t.node(id).a = a.id;
    *t.data(id) = s;
    return {a.tape, id};
}

inline Var mean(Var a)
{
    Tape& t = *a.tape;
    auto v = a.value();
    double s = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    auto id = t.push(Op::mean, 1, 1);
    t.node(id).a = a.id;
    *t.data(id) = s;
    return {a.tape, id};
}

inline Var dot(Var a, Var b)
{
    detail::same_shape(a, b, "dot");
    Tape& t = *a.tape;
    const double* x = t.data(a.id);
    const double* y = t.data(b.id);
    const double s = detail::dot_kernel(x, y, a.size());
    auto id = t.push(Op::dot, 1, 1);
    t.node(id).a = a.id;
    t.node(id).b = b.id;
    *t.data(id) = s;
    return {a.tape, id};
}

inline Var sigmoid(Var a) { return detail::unary(Op::sigmoid, a, [](double x) { return detail::sigmoid(x); }); }
inline Var log_sigmoid(Var a) { return detail::unary(Op::log_sigmoid, a, [](double x) { return detail::log_sigmoid(x); }); }
inline Var log(Var a) { return detail::unary(Op::log, a, [](double x) { return std::log(x); }); }

/// Parametric ReLU with a learnable scalar slope for the negative side.
inline Var prelu(Var x, Var slope)
{
    detail::same_tape(x, slope, "prelu");
    if (slope.size() != 1) throw ShapeError("prelu: slope must be a scalar, got " + detail::dims(slope));
    Tape& t = *x.tape;
    const double s = t.value(slope.id)[0];
    auto id = t.push(Op::prelu, x.rows(), x.cols());
    t.node(id).a = x.id;
    t.node(id).b = slope.id;
    double* out = t.data(id);
    const double* in = t.data(x.id);
    for (std::size_t i = 0, n = x.size(); i < n; ++i) out[i] = in[i] > 0 ? in[i] : s * in[i];
    return {x.tape, id};
}

inline Var softmax(Var a)
{
    Tape& t = *a.tape;
    const std::size_t n = a.size();
    auto id = t.push(Op::softmax, a.rows(), a.cols());
    t.node(id).a = a.id;
    double* out = t.data(id);
    const double* x = t.data(a.id);
    double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(x[i] - mx);
        z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= z;
    return {a.tape, id};
}

/// Elementwise clamp to [lo, hi]; gradient is zero where the bound is active.
inline Var clamp(Var a, double lo, double hi)
{
    Var r = detail::unary(Op::clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    a.tape->node(r.id).c0 = lo;
    a.tape->node(r.id).c1 = hi;
    return r;
}

/// Accumulates dLoss/dParam into the gradient buffers of `store`.
///
/// Repeated calls without ParameterStore::zero_grad() add up.
inline void backward(Var loss, ParameterStore& store)
{
    if (!loss.valid()) throw Error("backward: invalid loss variable");
    if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + detail::dims(loss));
    Tape& t = *loss.tape;
    if (t.store_ != &store) throw Error("backward: graph is detached from the given parameter store");

    auto& g = t.grads_;
    g.assign(t.values_.size(), 0.0);
    const double* v = t.values_.data();
    g[t.nodes_[static_cast<std::size_t>(loss.id)].off] = 1.0;

    for (std::int32_t id = loss.id; id >= 0; --id) {
        const auto& n = t.nodes_[static_cast<std::size_t>(id)];
        const std::size_t sz = static_cast<std::size_t>(n.rows) * n.cols;
        const double* dy = g.data() + n.off;
        const double* y = v + n.off;
        auto in_off = [&](std::int32_t k) { return t.nodes_[static_cast<std::size_t>(k)].off; };

        switch (n.op) {
        case Op::constant:
            break;
        case Op::param: {
            auto& dst = store.grad(n.aux0);
            for (std::size_t i = 0; i < sz; ++i) dst[i] += dy[i];
            break;
        }
        case Op::param_row: {
            auto& dst = store.grad(n.aux0);
            double* row = dst.data() + static_cast<std::size_t>(n.aux1) * sz;
            for (std::size_t i = 0; i < sz; ++i) row[i] += dy[i];
            break;
        }
        case Op::matmul: {
            const auto& A = t.nodes_[static_cast<std::size_t>(n.a)];
            const std::size_t m = A.rows, k = A.cols, c = n.cols;
            const double* a = v + A.off;
            const double* b = v + in_off(n.b);
            double* da = g.data() + A.off;
            double* db = g.data() + in_off(n.b);
            if (c == 1) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double d = dy[i];
                    if (d == 0.0) continue;
                    detail::axpy(da + i * k, b, d, k);
                    detail::axpy(db, a + i * k, d, k);
                }
            } else {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = b + p * c;
                        const double* dyrow = dy + i * c;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < c; ++j) acc += dyrow[j] * brow[j];
                        da[i * k + p] += acc;
                        const double av = a[i * k + p];
                        double* dbrow = db + p * c;
                        for (std::size_t j = 0; j < c; ++j) dbrow[j] += av * dyrow[j];
                    }
                }
            }
            break;
        }
        case Op::add: {
            double* da = g.data() + in_off(n.a);
            double* db = g.data() + in_off(n.b);
            for (std::size_t i = 0; i < sz; ++i) {
                da[i] += dy[i];
                db[i] += dy[i];
            }
            break;
        }
        case Op::sub: {
            double* da = g.data() + in_off(n.a);
            double* db = g.data() + in_off(n.b);
            for (std::size_t i = 0; i < sz; ++i) {
                da[i] += dy[i];
                db[i] -= dy[i];
            }
            break;
        }
        case Op::mul: {
            const double* a = v + in_off(n.a);
            const double* b = v + in_off(n.b);
            double* da = g.data() + in_off(n.a);
            double* db = g.data() + in_off(n.b);
            for (std::size_t i = 0; i < sz; ++i) {
                da[i] += dy[i] * b[i];
                db[i] += dy[i] * a[i];
            }
            break;
        }
        case Op::add_scaled: {
            double* da = g.data() + in_off(n.a);
            double* db = g.data() + in_off(n.b);
            for (std::size_t i = 0; i < sz; ++i) {
                da[i] += dy[i];
                db[i] += n.c0 * dy[i];
            }
            break;
        }
        case Op::scale: {
            double* da = g.data() + in_off(n.a);
            for (std::size_t i = 0; i < sz; ++i) da[i] += n.c0 * dy[i];
            break;
        }
        case Op::concat:
        case Op::stack_rows: {
            std::size_t pos = 0;
            for (std::uint32_t k = 0; k < n.aux1; ++k) {
                const auto& src = t.nodes_[static_cast<std::size_t>(t.links_[n.aux0 + k])];
                const std::size_t len = static_cast<std::size_t>(src.rows) * src.cols;
                double* ds = g.data() + src.off;
                for (std::size_t i = 0; i < len; ++i) ds[i] += dy[pos + i];
                pos += len;
            }
            break;
        }
        case Op::transpose: {
            double* da = g.data() + in_off(n.a);
            const std::size_t m = n.cols, c = n.rows; // input is m x c
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dy[j * m + i];
            break;
        }
        case Op::element:
            g[in_off(n.a) + n.aux0] += dy[0];
            break;
        case Op::sum:
        case Op::mean: {
            const auto& A = t.nodes_[static_cast<std::size_t>(n.a)];
            const std::size_t len = static_cast<std::size_t>(A.rows) * A.cols;
            const double d = n.op == Op::sum ? dy[0] : dy[0] / static_cast<double>(len);
            double* da = g.data() + A.off;
            for (std::size_t i = 0; i < len; ++i) da[i] += d;
            break;
        }
        case Op::dot: {
            const auto& A = t.nodes_[static_cast<std::size_t>(n.a)];
            const std::size_t len = static_cast<std::size_t>(A.rows) * A.cols;
            const double* a = v + A.off;
            const double* b = v + in_off(n.b);
            double* da = g.data() + A.off;
            double* db = g.data() + in_off(n.b);
            for (std::size_t i = 0; i < len; ++i) {
                da[i] += dy[0] * b[i];
                db[i] += dy[0] * a[i];
            }
            break;
        }
        case Op::sigmoid: {
            double* da = g.data() + in_off(n.a);
            for (std::size_t i = 0; i < sz; ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
            break;
        }
        case Op::log_sigmoid: {
            const double* a = v + in_off(n.a);
            double* da = g.data() + in_off(n.a);
            for (std::size_t i = 0; i < sz; ++i) da[i] += dy[i] * detail::sigmoid(-a[i]);
            break;
        }
        case Op::log: {
            const double* a = v + in_off(n.a);
            double* da = g.data() + in_off(n.a);
            for (std::size_t i = 0; i < sz; ++i) da[i] += dy[i] / a[i];
            break;
        }
        case Op::prelu: {
            const double* a = v + in_off(n.a);
            double* da = g.data() + in_off(n.a);
            const double s = v[in_off(n.b)];
            double ds = 0.0;
            for (std::size_t i = 0; i < sz; ++i) {
                if (a[i] > 0) {
                    da[i] += dy[i];
                } else {
                    da[i] += s * dy[i];
                    ds += dy[i] * a[i];
                }
            }
            g[in_off(n.b)] += ds;
            break;
        }
        case Op::softmax: {
            double* da = g.data() + in_off(n.a);
            double inner = 0.0;
            for (std::size_t i = 0; i < sz; ++i) inner += dy[i] * y[i];
            for (std::size_t i = 0; i < sz; ++i) da[i] += y[i] * (dy[i] - inner);
            break;
        }
        case Op::clamp: {
            const double* a = v + in_off(n.a);
            double* da = g.data() + in_off(n.a);
            for (std::size_t i = 0; i < sz; ++i) {
                if (a[i] > n.c0 && a[i] < n.c1) da[i] += dy[i];
            }
            break;
        }
        }
    }
}

/// Central-difference gradient of a scalar function; the test oracle for backward().
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x, double eps = 1e-6)
{
    if (!(eps >= 1e-8 && eps <= 1e-3)) throw UsageError("finite_diff_grad: eps must lie in [1e-8, 1e-3]");
    Tensor probe = x;
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double orig = probe[k];
        probe[k] = orig + eps;
        const double up = fn(probe);
        probe[k] = orig - eps;
        const double down = fn(probe);
        probe[k] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(k));
        }
        out[k] = (up - down) / (2.0 * eps);
    }
    return out;
}

/// |a−b| / max(1, |a|, |b|)
inline double relative_error(double a, double b)
{
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace dts::ad
