#include "rdsal/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace rdsal {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream ss;
    ss << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) ss << ",";
        ss << s[i];
    }
    ss << ")";
    return ss.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

static std::atomic<bool> g_checked{false};
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }
bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

template <typename T>
Tensor<T>::Tensor(Shape shape) {
    std::int64_t n = shape_numel(shape);
    impl_ = std::make_shared<detail::TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<std::size_t>(n), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
    std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<detail::TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (T& x : t.impl_->data) x = v;
    return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!impl_) throw StateError("operation on undefined tensor");
    return impl_->shape;
}

template <typename T>
std::int64_t Tensor<T>::size(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
    if (!impl_) throw StateError("operation on undefined tensor");
    return static_cast<std::int64_t>(impl_->data.size());
}

template <typename T>
std::span<T> Tensor<T>::data() {
    if (!impl_) throw StateError("operation on undefined tensor");
    return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!impl_) throw StateError("operation on undefined tensor");
    return impl_->data;
}

template <typename T>
T Tensor<T>::value() const {
    if (numel() != 1) throw ShapeError("value() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size())
        throw ShapeError("index rank mismatch for " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (std::int64_t i : idx) {
        if (i < 0 || i >= s[k]) throw ShapeError("index out of bounds for " + shape_str(s));
        flat = flat * s[k] + i;
        ++k;
    }
    return impl_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return impl_ && impl_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool v) {
    if (!impl_) throw StateError("set_requires_grad on undefined tensor");
    impl_->requires_grad = v;
    return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
    if (!impl_) throw StateError("is_leaf on undefined tensor");
    return !impl_->graph_output;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient buffer");
    return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_accum() {
    if (!impl_) throw StateError("grad_accum on undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
T Tensor<T>::grad_at(std::int64_t i) const {
    if (!has_grad()) return T(0);
    return impl_->grad[static_cast<std::size_t>(i)];
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!impl_) throw StateError("zero_grad on undefined tensor");
    impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
    if (impl_) impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    if (!impl_) return Tensor();
    Tensor c;
    c.impl_ = std::make_shared<detail::TensorImpl<T>>();
    c.impl_->shape = impl_->shape;
    c.impl_->data = impl_->data;
    return c;
}

template <typename T>
GradTape<T>::~GradTape() = default;

template <typename T>
void GradTape<T>::push(std::shared_ptr<detail::TensorImpl<T>> out, std::function<void()> fn) {
    entries_.push_back(Entry{std::move(out), std::move(fn)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw StateError("backward on undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar, got " + shape_str(loss.shape()));
    auto& impl = const_cast<Tensor<T>&>(loss).impl_handle();
    if (impl->grad.empty()) impl->grad.assign(1, T(0));
    impl->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // no downstream contribution
        it->fn();
    }
    // Intermediates are owned by the tape; their grads are scratch space.
    for (auto& e : entries_) e.out->grad.clear();
}

namespace {
template <typename T>
GradTape<T>*& tape_slot() {
    thread_local GradTape<T>* slot = nullptr;
    return slot;
}
}  // namespace

template <typename T>
TapeScope<T>::TapeScope(GradTape<T>& tape) {
    prev_ = tape_slot<T>();
    tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
    tape_slot<T>() = prev_;
}

namespace autograd {

template <typename T>
GradTape<T>* active_tape() {
    return tape_slot<T>();
}

template <typename T>
void record(std::span<const Tensor<T>> inputs, Tensor<T>& out, std::function<void()> fn) {
    GradTape<T>* tape = active_tape<T>();
    if (!tape) return;
    bool needs = false;
    for (const auto& in : inputs)
        if (in.defined() && in.requires_grad()) {
            needs = true;
            break;
        }
    if (!needs) return;
    auto& impl = out.impl_handle();
    impl->requires_grad = true;
    impl->graph_output = true;
    tape->push(impl, std::move(fn));
}

}  // namespace autograd

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
    for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw VerificationError(std::string("non-finite value in ") + what);
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

namespace autograd {
template GradTape<float>* active_tape<float>();
template GradTape<double>* active_tape<double>();
template void record<float>(std::span<const Tensor<float>>, Tensor<float>&, std::function<void()>);
template void record<double>(std::span<const Tensor<double>>, Tensor<double>&, std::function<void()>);
}  // namespace autograd

}  // namespace rdsal
