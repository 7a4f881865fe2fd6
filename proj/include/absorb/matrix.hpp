#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace absorb {

// Thrown when operand shapes disagree.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Dense row-major matrix of doubles. Rows are the unit of meaning throughout
// the library: a feature direction, an encoder vector, one sample.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>> & rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double & operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::vector<std::vector<double>> to_rows() const;
    Matrix transposed() const;

    bool operator==(const Matrix &) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

[[noreturn]] void throw_shape(const char * what);

inline void require_shape(bool ok, const char * what) {
    if (!ok) {
        throw_shape(what);
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_shape(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm(std::span<const double> a);
// Zero-norm operands give 0.
double cosine(std::span<const double> a, std::span<const double> b);

// a * b^T, i.e. out(i, j) = dot(a.row(i), b.row(j)).
Matrix matmul_bt(const Matrix & a, const Matrix & b);
// a * b.
Matrix matmul(const Matrix & a, const Matrix & b);

// out += scale * x
inline void axpy(double scale, std::span<const double> x, std::span<double> out) {
    require_shape(x.size() == out.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] += scale * x[i];
    }
}

bool all_finite(std::span<const double> values);


// SplitMix64 step, used to derive independent sub-seeds from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace absorb
