#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rdsal/util.hpp"

namespace rdsal {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Extra runtime checks (non-finite detection after every op). Off by default.
void set_checked_mode(bool on);
bool checked_mode();

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;       // empty until first accumulation
    bool requires_grad = false;
    bool graph_output = false;  // produced by a recorded op (non-leaf)
};

}  // namespace detail

// Shared handle to a dense row-major tensor. Copying a Tensor aliases the
// same storage; clone() makes a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v);
    static Tensor scalar(T v) { return full({1}, v); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t size(int axis) const;
    std::int64_t numel() const;

    std::span<T> data();
    std::span<const T> data() const;
    T value() const;  // single-element tensors only
    T at(std::initializer_list<std::int64_t> idx) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const T> grad() const;   // throws StateError when absent
    std::span<T> grad_accum();         // allocates zeros on first use
    T grad_at(std::int64_t i) const;   // 0 when no grad buffer
    void zero_grad();                  // allocate-or-zero
    void clear_grad();

    Tensor clone() const;  // deep copy; result is a fresh leaf without grad

    // Identity of the underlying storage (used by the tape).
    const void* id() const { return impl_.get(); }

    // Internal: called by autograd::record.
    std::shared_ptr<detail::TensorImpl<T>>& impl_handle() { return impl_; }
    const std::shared_ptr<detail::TensorImpl<T>>& impl_handle() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Reverse-mode tape: ops append entries in execution order, backward()
// replays them in reverse. The tape owns the closures, and the closures
// keep the participating tensors alive.
template <typename T>
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;
    ~GradTape();

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Seeds d(loss)/d(loss) = 1, replays the tape backwards, then drops
    // intermediate (non-leaf) gradient buffers. Leaf gradients accumulate,
    // so zero_grad() between steps is the caller's job.
    void backward(const Tensor<T>& loss);

    // Internal: used by autograd::record.
    void push(std::shared_ptr<detail::TensorImpl<T>> out, std::function<void()> fn);

private:
    struct Entry {
        std::shared_ptr<detail::TensorImpl<T>> out;
        std::function<void()> fn;
    };
    std::vector<Entry> entries_;
};

// RAII activation; ops record onto the innermost active tape of matching T.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* prev_;
};

namespace autograd {

template <typename T>
GradTape<T>* active_tape();

// Marks `out` as the result of an op over `inputs` and registers the
// backward closure when a tape is active and some input requires grad.
// Otherwise `out` stays a plain leaf and `fn` is discarded.
template <typename T>
void record(std::span<const Tensor<T>> inputs, Tensor<T>& out, std::function<void()> fn);

template <typename T>
void record(std::initializer_list<Tensor<T>> inputs, Tensor<T>& out, std::function<void()> fn) {
    record(std::span<const Tensor<T>>(inputs.begin(), inputs.size()), out, std::move(fn));
}

}  // namespace autograd

// Throws VerificationError if any element is NaN/Inf (used in checked mode).
template <typename T>
void check_finite(const Tensor<T>& t, const char* what);

}  // namespace rdsal
