#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "concept_guard/linalg.hpp"
#include "oracles.hpp"

namespace testutil {

inline concept_guard::DenseMatrix to_dense(const oracle::Mat& m) { return concept_guard::DenseMatrix::from_rows(m); }

inline oracle::Mat to_mat(const concept_guard::DenseMatrix& m) {
    oracle::Mat out = oracle::zeros(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

inline double rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    return oracle::norm(oracle::sub(got, want)) / std::max(1.0, oracle::norm(want));
}

/// D x K Gaussian basis, optionally with column `dup` copied over column `dup + 1`.
inline oracle::Mat random_basis(oracle::Rng& rng, std::size_t d, std::size_t k, bool duplicate) {
    oracle::Mat b = rng.gaussian(d, k);
    if (duplicate && k >= 2) {
        const std::size_t src = rng.index(0, k - 2);
        for (std::size_t r = 0; r < d; ++r) b[r][src + 1] = b[r][src];
    }
    return b;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("cg-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
