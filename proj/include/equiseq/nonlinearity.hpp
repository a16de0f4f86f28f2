#pragma once

#include <cmath>
#include <string>

#include "equiseq/errors.hpp"
#include "equiseq/matrix.hpp"

namespace equiseq {

enum class Nonlinearity { Identity, Relu, Tanh, Exp };

inline double sigma_eval(Nonlinearity nl, double x) {
    switch (nl) {
        case Nonlinearity::Identity: return x;
        case Nonlinearity::Relu: return x > 0.0 ? x : 0.0;
        case Nonlinearity::Tanh: return std::tanh(x);
        case Nonlinearity::Exp: return std::exp(x);
    }
    throw InvalidInputError("sigma_eval: unknown nonlinearity");
}

/// Derivative at x; relu uses the subgradient 0 at the kink.
inline double sigma_prime(Nonlinearity nl, double x) {
    switch (nl) {
        case Nonlinearity::Identity: return 1.0;
        case Nonlinearity::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Nonlinearity::Tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Nonlinearity::Exp: return std::exp(x);
    }
    throw InvalidInputError("sigma_prime: unknown nonlinearity");
}

inline Matrix sigma_apply(Nonlinearity nl, const Matrix& a) {
    Matrix r = a;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) = sigma_eval(nl, r(i, j));
    return r;
}

inline std::string nonlinearity_name(Nonlinearity nl) {
    switch (nl) {
        case Nonlinearity::Identity: return "identity";
        case Nonlinearity::Relu: return "relu";
        case Nonlinearity::Tanh: return "tanh";
        case Nonlinearity::Exp: return "exp";
    }
    return "?";
}

inline Nonlinearity nonlinearity_from_name(const std::string& name) {
    if (name == "identity") return Nonlinearity::Identity;
    if (name == "relu") return Nonlinearity::Relu;
    if (name == "tanh") return Nonlinearity::Tanh;
    if (name == "exp") return Nonlinearity::Exp;
    throw InvalidInputError("unknown nonlinearity: " + name);
}

} // namespace equiseq
