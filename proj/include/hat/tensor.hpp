#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "hat/errors.hpp"

namespace hat {

// Dense row-major float matrix. Vectors are 1xN.
// Elements are validated finite on construction from external data.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Tensor() = default;

    Tensor(int r, int c) : rows(r), cols(c) {
        check_dims(r, c);
        data.assign(static_cast<size_t>(r) * c, 0.0f);
    }

    static Tensor from(int r, int c, std::vector<float> values) {
        check_dims(r, c);
        if (values.size() != static_cast<size_t>(r) * c)
            throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(r, c));
        Tensor t;
        t.rows = r;
        t.cols = c;
        t.data = std::move(values);
        t.check_finite();
        return t;
    }

    static Tensor row(std::vector<float> values) {
        const int n = static_cast<int>(values.size());
        return from(1, n, std::move(values));
    }

    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    size_t size() const { return data.size(); }

    void check_finite() const {
        for (float v : data)
            if (!std::isfinite(v))
                throw NumericError("Tensor: non-finite element in tensor of shape " +
                                   shape_str(rows, cols));
    }

    static std::string shape_str(int r, int c) {
        return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
    }
    std::string shape_str() const { return shape_str(rows, cols); }

private:
    static void check_dims(int r, int c) {
        // cols may be 0 (empty row vector, a legal concat operand)
        if (r <= 0 || c < 0)
            throw ContractError("Tensor: bad dimensions " + shape_str(r, c));
    }
};

}  // namespace hat
