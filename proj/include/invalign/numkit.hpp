#pragma once

// Dense numeric kernel shared by every other module: a row-major double
// matrix, a few vector helpers, stable elementwise primitives, a seeded RNG
// and the central finite-difference checker the gradient tests rely on.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace invalign {

/// Raised when a computation produces NaN/Inf. Training converts this into
/// an aborted run rather than continuing with poisoned state.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    std::string shape() const;
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix identity(std::size_t n);

/// Throws NumericalError naming `what` if any entry is NaN/Inf.
void require_finite(const Matrix& m, std::string_view what);
void require_finite(std::span<const double> v, std::string_view what);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double distance(std::span<const double> a, std::span<const double> b);
/// Cosine similarity; throws std::invalid_argument if either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Rows of a matrix divided by their Euclidean norms, plus what is needed to
/// pull an upstream gradient back through the normalization.
struct NormalizedRows {
    Matrix out;
    Vector norms;

    /// Per row: (g − (g·ẑ)ẑ) / ‖z‖.
    Matrix backward(const Matrix& upstream) const;
};

/// Guard on normalization denominators; rows at or below it are rejected.
inline constexpr double kNormEpsilon = 1e-12;

NormalizedRows l2_normalize_rows(const Matrix& z);

/// log Σ exp(v_k) with max subtraction.
double stable_logsumexp(std::span<const double> v);

double sigmoid(double x) noexcept;
/// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept;

using ScalarFunction = std::function<double(const Matrix&)>;

/// Central differences (f(x + h·e_ij) − f(x − h·e_ij)) / 2h for every entry.
Matrix finite_diff_grad(const ScalarFunction& f, const Matrix& x, double h = 1e-5);

/// ‖a − b‖ / max(‖a‖, ‖b‖, floor). Used by every gradient check.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// Purposes that get their own sub-seeded stream so that, for example,
/// changing the batch composition never perturbs parameter initialization.
enum class Stream : std::uint64_t {
    Data = 1,
    Init = 2,
    Batching = 3,
    Augmentation = 4,
    Hyperplanes = 5,
    Test = 6,
};

/// xoshiro256** seeded through splitmix64. The stream is fully determined by
/// the seed and does not depend on the standard library implementation:
/// uniforms use the top 53 bits, normals use Box–Muller with no caching
/// across calls other than the paired second deviate.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed);

    /// Child generator for `stream`, optionally indexed (layer number, run
    /// number, ...). Child seed = splitmix64(seed ⊕ splitmix64(stream · 2^32 + index)).
    Rng derive(Stream stream, std::uint64_t index = 0) const;

    std::uint64_t seed() const noexcept { return seed_; }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    result_type operator()() noexcept { return next(); }

    std::uint64_t next() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
    /// Uniform integer in [0, n) by rejection; n > 0.
    std::size_t index(std::size_t n) noexcept;

    /// Fisher–Yates shuffle driven by index().
    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace invalign
