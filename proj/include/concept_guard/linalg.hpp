#pragma once

// Dense real linear algebra for subspace projection.
//
// Everything here works in double precision. A Projector factors its basis
// once with a thin SVD and keeps only the singular directions above a
// relative cutoff, so collinear or duplicated basis columns are fine: the
// projector is the orthogonal projector onto the column space and the
// coefficient solve returns the minimum-norm least-squares solution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "concept_guard/error.hpp"

namespace concept_guard {

using Vector = std::vector<double>;

inline constexpr double kDefaultPinvTolerance = 1e-10;

/// Row-major dense matrix with at least one row and one column and only
/// finite entries.
class DenseMatrix {
public:
    DenseMatrix(std::size_t rows, std::size_t cols) : DenseMatrix(rows, cols, Vector(rows * cols, 0.0)) {}

    DenseMatrix(std::size_t rows, std::size_t cols, Vector data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(rows_ >= 1 && cols_ >= 1, ErrorCode::InvalidDimensions, "matrix needs at least one row and column");
        detail::require(data_.size() == rows_ * cols_, ErrorCode::InvalidDimensions, "matrix data length != rows*cols");
        detail::require(std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); }),
                        ErrorCode::NonFiniteInput, "matrix has non-finite entries");
    }

    static DenseMatrix from_rows(const std::vector<Vector>& rows) {
        detail::require(!rows.empty(), ErrorCode::InvalidDimensions, "no rows");
        const std::size_t cols = rows.front().size();
        Vector data;
        data.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            detail::require(r.size() == cols, ErrorCode::InvalidDimensions, "ragged rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return DenseMatrix(rows.size(), cols, std::move(data));
    }

    static DenseMatrix from_columns(const std::vector<Vector>& cols) {
        detail::require(!cols.empty(), ErrorCode::InvalidDimensions, "no columns");
        const std::size_t rows = cols.front().size();
        Vector data(rows * cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            detail::require(cols[j].size() == rows, ErrorCode::InvalidDimensions, "ragged columns");
            for (std::size_t i = 0; i < rows; ++i) data[i * cols.size() + j] = cols[j][i];
        }
        return DenseMatrix(rows, cols.size(), std::move(data));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    Vector column(std::size_t c) const {
        Vector out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    const Vector& data() const noexcept { return data_; }

    DenseMatrix transposed() const {
        DenseMatrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    Vector data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double frobenius_norm(const DenseMatrix& m) { return norm2(m.data()); }

namespace detail {

using RowMajorXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajorXd> as_eigen(const DenseMatrix& m) {
    return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline Vector to_vector(const Eigen::VectorXd& v) { return Vector(v.data(), v.data() + v.size()); }

inline void require_finite(std::span<const double> v, const char* what) {
    require(std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }), ErrorCode::NonFiniteInput, what);
}

}  // namespace detail

/// Orthogonal projector onto the column space of a D x K basis.
///
/// The basis is factored as U S V^T; singular values at or below
/// `tolerance * s_max` are dropped. A projector may also be the zero map on
/// R^D (no basis, rank 0).
class Projector {
public:
    explicit Projector(DenseMatrix basis, double tolerance = kDefaultPinvTolerance)
        : dim_(basis.rows()), tolerance_(tolerance), basis_(std::move(basis)) {
        detail::require(tolerance_ >= 0.0 && std::isfinite(tolerance_), ErrorCode::InvalidParameter,
                        "pseudo-inverse tolerance must be finite and >= 0");
        const auto b = detail::as_eigen(*basis_);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(b), Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double smax = s.size() > 0 ? s(0) : 0.0;
        Eigen::Index rank = 0;
        if (smax > 0.0)
            while (rank < s.size() && s(rank) > tolerance_ * smax) ++rank;
        range_ = svd.matrixU().leftCols(rank);
        coeff_ = svd.matrixV().leftCols(rank) * s.head(rank).cwiseInverse().asDiagonal();
    }

    /// Zero map on R^dim.
    static Projector zero(std::size_t dim, double tolerance = kDefaultPinvTolerance) { return Projector(dim, tolerance); }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t rank() const noexcept { return static_cast<std::size_t>(range_.cols()); }
    double tolerance() const noexcept { return tolerance_; }
    bool has_basis() const noexcept { return basis_.has_value(); }
    const DenseMatrix& basis() const { return basis_.value(); }

    /// Orthonormal basis of the retained range, D x rank, column-major.
    const Eigen::MatrixXd& range_basis() const noexcept { return range_; }

    Vector apply(std::span<const double> v) const {
        check_dim(v);
        if (rank() == 0) return Vector(dim_, 0.0);
        const auto x = detail::as_eigen(v);
        const Eigen::VectorXd p = range_ * (range_.transpose() * x);
        return detail::to_vector(p);
    }

    /// Minimum-norm least-squares coefficients z with basis * z ~ v.
    Vector coefficients(std::span<const double> v) const {
        check_dim(v);
        detail::require(basis_.has_value(), ErrorCode::InvalidDimensions, "projector has no basis columns");
        if (rank() == 0) return Vector(basis_->cols(), 0.0);
        const auto x = detail::as_eigen(v);
        const Eigen::VectorXd z = coeff_ * (range_.transpose() * x);
        return detail::to_vector(z);
    }

    /// Explicit D x D projection matrix; meant for small problems and tests.
    DenseMatrix explicit_matrix() const {
        DenseMatrix p(dim_, dim_);
        if (rank() == 0) return p;
        const Eigen::MatrixXd m = range_ * range_.transpose();
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) p(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        return p;
    }

private:
    Projector(std::size_t dim, double tolerance) : dim_(dim), tolerance_(tolerance), range_(dim, 0), coeff_(0, 0) {
        detail::require(dim_ >= 1, ErrorCode::InvalidDimensions, "projector dimension must be >= 1");
    }

    void check_dim(std::span<const double> v) const {
        detail::require(v.size() == dim_, ErrorCode::InvalidDimensions, "vector length does not match projector dimension");
        detail::require_finite(v, "vector has non-finite entries");
    }

    std::size_t dim_;
    double tolerance_;
    std::optional<DenseMatrix> basis_;
    Eigen::MatrixXd range_;
    Eigen::MatrixXd coeff_;
};

inline Vector solve_coefficients(const DenseMatrix& basis, std::span<const double> v,
                                 double tolerance = kDefaultPinvTolerance) {
    detail::require(v.size() == basis.rows(), ErrorCode::InvalidDimensions, "vector length != basis rows");
    detail::require_finite(v, "vector has non-finite entries");
    return Projector(basis, tolerance).coefficients(v);
}

inline Vector project(const Projector& proj, std::span<const double> v) { return proj.apply(v); }

inline Vector residual(const Projector& proj, std::span<const double> v) {
    Vector r = proj.apply(v);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[i] - r[i];
    return r;
}

}  // namespace concept_guard
