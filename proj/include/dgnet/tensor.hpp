#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgnet/errors.hpp"

namespace dgnet {

/// NCHW extent of a Tensor.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::size_t numel() const { return static_cast<std::size_t>(n * c * h * w); }
    std::int64_t plane() const { return h * w; }
    std::string str() const
    {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
               std::to_string(w) + ")";
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

template <class T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until a gradient is written
    bool requires_grad = false;

    void ensure_grad()
    {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

} // namespace detail

/// Dense 4-D array with optional participation in reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage, the same way a
/// recorded operation keeps its inputs alive. Use clone() or detach() for an
/// independent copy.
template <class T>
class Tensor {
public:
    using value_type = T;
    using Storage = detail::TensorStorage<T>;

    Tensor() : storage_(std::make_shared<Storage>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : storage_(std::make_shared<Storage>())
    {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
            throw DimensionError("negative tensor extent " + shape.str());
        }
        storage_->shape = shape;
        storage_->data.assign(shape.numel(), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : storage_(std::make_shared<Storage>())
    {
        if (values.size() != shape.numel()) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape.str());
        }
        storage_->shape = shape;
        storage_->data = std::move(values);
    }

    static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

    const Shape& shape() const { return storage_->shape; }
    std::size_t numel() const { return storage_->data.size(); }

    std::span<T> data() { return storage_->data; }
    std::span<const T> data() const { return storage_->data; }
    T* raw() { return storage_->data.data(); }
    const T* raw() const { return storage_->data.data(); }

    std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const
    {
        const Shape& s = storage_->shape;
        return static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x);
    }
    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x)
    {
        return storage_->data[offset(n, c, y, x)];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const
    {
        return storage_->data[offset(n, c, y, x)];
    }

    T item() const
    {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
        return storage_->data[0];
    }

    bool requires_grad() const { return storage_->requires_grad; }
    const Tensor& set_requires_grad(bool value) const
    {
        storage_->requires_grad = value;
        return *this;
    }

    bool has_grad() const { return !storage_->grad.empty(); }
    std::span<const T> grad() const
    {
        if (!has_grad()) throw UsageError("tensor has no gradient");
        return storage_->grad;
    }
    /// Gradient buffer, allocated as zeros on first access.
    std::span<T> grad_mut() const
    {
        storage_->ensure_grad();
        return storage_->grad;
    }
    void zero_grad() const
    {
        std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
    }

    /// Independent copy of the values, outside any tape.
    Tensor detach() const { return Tensor(shape(), storage_->data); }
    /// Independent copy of the values that keeps the requires_grad flag.
    Tensor clone() const
    {
        Tensor copy(shape(), storage_->data);
        copy.set_requires_grad(requires_grad());
        return copy;
    }

    bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }
    const std::shared_ptr<Storage>& storage() const { return storage_; }

private:
    std::shared_ptr<Storage> storage_;
};

/// Ordered record of executed differentiable operations.
///
/// Each entry is the vector-Jacobian product of one op: it reads the
/// gradient of the op's output and accumulates into the gradients of its
/// inputs. backward() replays the entries in reverse order and then releases
/// them.
template <class T>
class Tape {
public:
    using Entry = std::function<void()>;

    void record(Entry entry) { entries_.push_back(std::move(entry)); }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    void backward(const Tensor<T>& loss)
    {
        if (loss.numel() != 1) {
            throw UsageError("backward() needs a scalar loss, got shape " + loss.shape().str());
        }
        if (!loss.requires_grad()) {
            throw UsageError("backward() on a loss that was not produced under an active tape");
        }
        loss.storage()->ensure_grad();
        loss.storage()->grad[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
    }

private:
    std::vector<Entry> entries_;
};

namespace detail {

template <class T>
Tape<T>*& active_tape_slot()
{
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

} // namespace detail

template <class T>
Tape<T>* active_tape()
{
    return detail::active_tape_slot<T>();
}

/// Makes a tape the recording target on the current thread for its lifetime.
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>())
    {
        detail::active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<T>() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Disables recording on the current thread for its lifetime.
template <class T>
class NoGradScope {
public:
    NoGradScope() : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = nullptr; }
    ~NoGradScope() { detail::active_tape_slot<T>() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Back-propagates a scalar loss through the active tape.
template <class T>
void backward(const Tensor<T>& loss)
{
    Tape<T>* tape = active_tape<T>();
    if (tape == nullptr) throw UsageError("backward() called without an active tape");
    tape->backward(loss);
}

} // namespace dgnet
