#pragma once

#include <cstddef>
#include <vector>

namespace cbfkit {

using Vec = std::vector<double>;

// Dense row-major matrix. Rows are contiguous so the kernels can run
// unit-stride over them; no expression templates, no views.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    double* data() { return a.data(); }
    const double* data() const { return a.data(); }
    std::size_t size() const { return a.size(); }

    void fill(double v) { a.assign(a.size(), v); }
};

}  // namespace cbfkit
