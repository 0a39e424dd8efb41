#include <algorithm>
#include <cmath>
#include <numeric>

#include <catch_amalgamated.hpp>

#include "concept_guard/linalg.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace concept_guard;
using Catch::Matchers::WithinAbs;

TEST_CASE("solve_coefficients on an axis-aligned basis", "[linalg]") {
    const auto z = solve_coefficients(DenseMatrix::from_columns({{1, 0}}), Vector{3, 4});
    REQUIRE(z.size() == 1);
    REQUIRE(z[0] == 3.0);
}

TEST_CASE("solve_coefficients splits evenly across duplicated columns", "[linalg]") {
    const Vector c{1, 2, -1};
    const auto basis = DenseMatrix::from_columns({c, c});
    const Vector v{2, -1, 5};
    const auto z = solve_coefficients(basis, v);
    REQUIRE_THAT(z[0], WithinAbs(z[1], 1e-12));
    // basis * z is the projection of v onto span(c)
    const double scale = dot(v, c) / dot(c, c);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE_THAT(c[i] * (z[0] + z[1]), WithinAbs(scale * c[i], 1e-12));
}

TEST_CASE("solve_coefficients matches the normal equations", "[linalg][oracle]") {
    oracle::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = rng.gaussian(6, 2);
        const auto v = rng.gaussian(6);
        const auto want = oracle::normal_equation_coefficients(b, v);
        const auto got = solve_coefficients(testutil::to_dense(b), v);
        REQUIRE(oracle::norm(oracle::sub(got, want)) <= 1e-8 * oracle::norm(want));
    }
}

TEST_CASE("solve_coefficients rejects bad input", "[linalg][errors]") {
    const auto basis = DenseMatrix::from_columns({{1, 0}});
    REQUIRE_THROWS_MATCHES(solve_coefficients(basis, Vector{1, 2, 3}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.code() == ErrorCode::InvalidDimensions;
                           }));
    REQUIRE_THROWS_MATCHES(solve_coefficients(basis, Vector{1, NAN}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.code() == ErrorCode::NonFiniteInput;
                           }));
    REQUIRE_THROWS_AS(DenseMatrix(1, 2, Vector{1.0, INFINITY}), Error);
}

TEST_CASE("project and residual on e1", "[linalg]") {
    const Projector p(DenseMatrix::from_columns({{1, 0}}));
    REQUIRE(project(p, Vector{3, 4}) == Vector{3, 0});
    const auto r = residual(p, Vector{3, 4});
    REQUIRE(r == Vector{0, 4});
    REQUIRE(norm2(r) == 4.0);
}

TEST_CASE("projection is the identity on the range", "[linalg]") {
    oracle::Rng rng(3);
    const auto b = rng.gaussian(7, 3);
    const Projector p(testutil::to_dense(b));
    const auto v = oracle::matvec(b, rng.gaussian(3));
    const auto pv = project(p, v);
    REQUIRE(oracle::norm(oracle::sub(pv, v)) <= 1e-12 * oracle::norm(v));
    REQUIRE(norm2(residual(p, v)) <= 1e-12 * oracle::norm(v));
}

TEST_CASE("project and residual match the explicit projector", "[linalg][oracle]") {
    oracle::Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        const auto b = rng.gaussian(8, 3);
        const auto v = rng.gaussian(8);
        const auto P = oracle::explicit_projector(b);
        const auto want = oracle::matvec(P, v);
        const Projector p(testutil::to_dense(b));
        REQUIRE(testutil::rel_err(project(p, v), want) <= 1e-8);
        const double wantRes = oracle::norm(oracle::sub(v, want));
        REQUIRE_THAT(norm2(residual(p, v)), WithinAbs(wantRes, 1e-8 * std::max(1.0, wantRes)));
    }
}

TEST_CASE("zero projector", "[linalg]") {
    const auto p = Projector::zero(3);
    REQUIRE(p.rank() == 0);
    REQUIRE(project(p, Vector{1, 2, 3}) == Vector{0, 0, 0});
    REQUIRE(residual(p, Vector{1, 2, 3}) == Vector{1, 2, 3});
    // an all-zero basis has no retained directions either
    const Projector z(DenseMatrix(3, 2));
    REQUIRE(z.rank() == 0);
    REQUIRE(z.coefficients(Vector{1, 2, 3}) == Vector{0, 0});
}

TEST_CASE("projector invariants over random bases", "[linalg][property]") {
    oracle::Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = rng.index(1, 64);
        const std::size_t k = rng.index(1, std::min<std::size_t>(8, d));
        const auto b = testutil::random_basis(rng, d, k, trial % 3 == 0);
        const Projector p(testutil::to_dense(b));
        const auto v = rng.gaussian(d);
        const double nv = oracle::norm(v);
        const auto pv = project(p, v);
        const auto rv = residual(p, v);

        // idempotence
        REQUIRE(oracle::norm(oracle::sub(project(p, pv), pv)) <= 1e-9 * nv);
        // residual orthogonal to every basis column
        const double bf = frobenius_norm(p.basis());
        for (std::size_t j = 0; j < k; ++j) REQUIRE(std::abs(dot(p.basis().column(j), rv)) <= 1e-9 * bf * nv);
        // Pythagoras
        const double lhs = nv * nv;
        const double rhs = dot(pv, pv) + dot(rv, rv);
        REQUIRE(std::abs(lhs - rhs) <= 1e-8 * lhs);
        // scale equivariance
        const double c = rng.uniform(-5, 5);
        Vector cv = v;
        for (auto& x : cv) x *= c;
        const auto rcv = residual(p, cv);
        for (std::size_t i = 0; i < d; ++i) REQUIRE(std::abs(rcv[i] - c * rv[i]) <= 1e-10 * std::abs(c) * nv);
        // symmetry of the explicit matrix
        const auto P = p.explicit_matrix();
        REQUIRE(frobenius_norm(DenseMatrix(d, d, oracle::sub(P.data(), P.transposed().data()))) <=
                1e-9 * std::max(1.0, frobenius_norm(P)));
    }
}

TEST_CASE("duplicating or permuting columns keeps the projector", "[linalg][property]") {
    oracle::Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = rng.index(3, 20);
        const std::size_t k = rng.index(1, std::min<std::size_t>(5, d - 1));
        auto cols = oracle::transpose(rng.gaussian(d, k));
        const Projector base(DenseMatrix::from_columns(cols));

        auto dup = cols;
        dup.push_back(cols[rng.index(0, k - 1)]);
        const Projector withDup(DenseMatrix::from_columns(dup));

        auto perm = cols;
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        const Projector permuted(DenseMatrix::from_columns(perm));

        REQUIRE(withDup.rank() == base.rank());
        const auto v = rng.gaussian(d);
        const auto pv = project(base, v);
        REQUIRE(testutil::max_abs_diff(project(withDup, v), pv) <= 1e-10 * std::max(1.0, oracle::norm(v)));
        REQUIRE(testutil::max_abs_diff(project(permuted, v), pv) <= 1e-10 * std::max(1.0, oracle::norm(v)));
    }
}

TEST_CASE("relative cutoff drops near-collinear directions", "[linalg]") {
    const Vector a{1, 0, 0};
    const Vector b{1, 1e-13, 0};
    const Projector p(DenseMatrix::from_columns({a, b}));
    REQUIRE(p.rank() == 1);
    const Projector loose(DenseMatrix::from_columns({a, b}), 0.0);
    REQUIRE(loose.rank() == 2);
}
