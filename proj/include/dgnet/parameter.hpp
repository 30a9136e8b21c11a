#pragma once

#include <string>
#include <utility>

#include "dgnet/tensor.hpp"

namespace dgnet {

/// A named model tensor. Fixed kernels are Parameters with trainable = false:
/// they still receive gradients, the optimizer never writes them.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string param_name, Tensor<T> value, bool is_trainable = true)
        : name(std::move(param_name)), tensor(std::move(value)), trainable(is_trainable)
    {
        tensor.set_requires_grad(true);
    }
};

} // namespace dgnet
