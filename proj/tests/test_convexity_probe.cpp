#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "consol/convexity_probe.hpp"
#include "consol/errors.hpp"
#include "helpers.hpp"

using namespace consol;
using testing_util::close_rel;

namespace {

struct ToyData {
    Eigen::MatrixXd X, Y;
};

ToyData toy_data(double lo, double hi, int n = 200) {
    const auto s = testing_util::toy();
    ToyData d;
    d.X = testing_util::uniform(n, 2, lo, hi, 1);
    d.Y = predict(s, testing_util::toy_weights(s, 3.0, 2.5), d.X);
    return d;
}

// live parameter order is (inner w2, coefficient w1)
Eigen::VectorXd along(double inner, double coef) {
    Eigen::VectorXd d(2);
    d << inner, coef;
    return d;
}

}  // namespace

TEST_CASE("segment test: a convex quadratic never violates") {
    const ScalarField f = [](const Eigen::VectorXd& u) { return u.squaredNorm(); };
    const auto r = segment_convexity_test(f, Eigen::VectorXd::Constant(4, -3), Eigen::VectorXd::Constant(4, 3), 5000,
                                          1e-9, 1);
    CHECK(r.triples == 5000);
    CHECK(r.violations == 0);
}

TEST_CASE("segment test: a concave quadratic violates almost everywhere") {
    const ScalarField f = [](const Eigen::VectorXd& u) { return -u.squaredNorm(); };
    const auto r = segment_convexity_test(f, Eigen::VectorXd::Constant(4, -3), Eigen::VectorXd::Constant(4, 3), 5000,
                                          1e-9, 1);
    CHECK(r.violations >= 4950);
    CHECK(r.worst_excess > 0.0);
}

TEST_CASE("directional derivatives of the toy at (3, 2.5)") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.0, 2.5);
    const std::vector<double> x{1.0, 1.0};
    const auto d_coef = analytic_directional_derivs(s, w, x, along(0, 1));
    CHECK(d_coef.y_prime == doctest::Approx(std::cos(2.5)).epsilon(1e-14));
    CHECK(d_coef.y_prime == doctest::Approx(-0.80114).epsilon(1e-5));
    CHECK(d_coef.y_doubleprime == 0.0);
    const auto d_inner = analytic_directional_derivs(s, w, x, along(1, 0));
    CHECK(d_inner.y_prime == doctest::Approx(-3.0 * std::sin(2.5)).epsilon(1e-14));
    CHECK(d_inner.y_prime == doctest::Approx(-1.79541).epsilon(1e-5));
    CHECK(d_inner.y_doubleprime == doctest::Approx(-3.0 * std::cos(2.5)).epsilon(1e-13));
    const auto fd = numeric_directional_derivs(s, w, x, along(1, 0));
    CHECK(close_rel(fd.y_prime, d_inner.y_prime, 1e-8));
    CHECK(close_rel(fd.y_doubleprime, d_inner.y_doubleprime, 1e-6));
}

TEST_CASE("zero direction gives zero derivatives") {
    const auto s = testing_util::toy();
    const std::vector<double> x{1.3, 0.4};
    const auto d = analytic_directional_derivs(s, testing_util::toy_weights(s, 3.0, 2.5), x, along(0, 0));
    CHECK(d.y_prime == 0.0);
    CHECK(d.y_doubleprime == 0.0);
}

TEST_CASE("analytic derivatives match Richardson differences on random in-scope probes") {
    std::mt19937_64 rng(17);
    int probes = 0;
    while (probes < 200) {
        const auto net = testing_util::random_net(rng);
        const auto params = live_parameters(net.s);
        if (params.empty()) continue;
        const auto X = testing_util::uniform(1, net.s.n_inputs(), 1.0, 2.0, static_cast<unsigned>(probes));
        const std::vector<double> x(X.data(), X.data() + X.size());
        const auto dir = random_unit_direction(static_cast<int>(params.size()), rng);
        const int out = static_cast<int>(rng() % static_cast<unsigned>(net.s.n_outputs()));
        DirectionalDerivs a;
        try {
            a = analytic_directional_derivs(net.s, net.w, x, dir, out);
        } catch (const DomainError&) {
            continue;  // a factor is exactly zero; the log form does not apply
        }
        const auto n = numeric_directional_derivs(net.s, net.w, x, dir, out);
        CHECK_MESSAGE(close_rel(a.y_prime, n.y_prime, 1e-4, 1e-7), "probe " << probes);
        CHECK_MESSAGE(close_rel(a.y_doubleprime, n.y_doubleprime, 1e-4, 1e-6), "probe " << probes);
        ++probes;
    }
}

TEST_CASE("structures outside the single-block form are refused") {
    const auto lib = SymbolLibrary::from_names({"id", "square"});
    auto s = LocalStructure::layered(lib, 1, {LayerKind::Activation, LayerKind::Multiplication, LayerKind::Summation},
                                     {0, 1, 1});
    s.indicators[2](0, 0) = 1;
    s.indicators[3](0, 0) = 1;
    const auto w = LocalWeights::filled(s, 1.0);
    const std::vector<double> x{1.0};
    CHECK_THROWS_AS(analytic_directional_derivs(s, w, x, Eigen::VectorXd::Ones(1)), StructureError);
}

TEST_CASE("loss curvature of a linear model is the mean of x squared") {
    auto s = LocalStructure::standard(SymbolLibrary::from_names({"id"}), 1, 1, 1);
    s.indicators[1](0, 0) = 1;
    s.indicators[2](0, 0) = 1;
    auto w = LocalWeights::filled(s, 0.0);
    w.summation[2](0, 0) = 0.7;
    const auto X = testing_util::uniform(30, 1, -2.0, 2.0, 4);
    const auto Y = testing_util::uniform(30, 1, -1.0, 1.0, 5);
    const double want = X.col(0).squaredNorm() / 30.0;
    CHECK(loss_second_derivative(s, w, X, Y, Eigen::VectorXd::Ones(1)) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("at the toy optimum curvature is the mean squared first derivative") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.0, 2.5);
    const auto d = toy_data(1.0, 2.0);
    std::mt19937_64 rng(2);
    for (int n = 0; n < 100; ++n) {
        const auto dir = random_unit_direction(2, rng);
        double mean_sq = 0.0;
        for (int r = 0; r < d.X.rows(); ++r) {
            const std::vector<double> x{d.X(r, 0), d.X(r, 1)};
            const double yp = analytic_directional_derivs(s, w, x, dir).y_prime;
            mean_sq += yp * yp / static_cast<double>(d.X.rows());
        }
        const double v = loss_second_derivative(s, w, d.X, d.Y, dir);
        CHECK(v > 0.0);
        CHECK(v == doctest::Approx(mean_sq).epsilon(1e-10));
    }
}

TEST_CASE("curvature is positive around (3.5, 2.7)") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.5, 2.7);
    const auto d = toy_data(1.0, 2.0);
    std::mt19937_64 rng(3);
    for (int n = 0; n < 10; ++n) CHECK(loss_second_derivative(s, w, d.X, d.Y, random_unit_direction(2, rng)) > 0.0);
}

TEST_CASE("chain rule and differences must agree or the probe refuses") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.5, 2.7);
    const auto d = toy_data(1.0, 2.0);
    const auto dir = along(0.6, 0.8);
    const double chain = loss_second_derivative(s, w, d.X, d.Y, dir);
    CHECK(close_rel(chain, loss_second_derivative_fd(s, w, d.X, d.Y, dir), 1e-4));
    CHECK_THROWS_AS(loss_second_derivative(s, w, d.X, d.Y, dir, 1e-18), ConsistencyError);
}

TEST_CASE("region membership at the optimum and far from it") {
    const auto s = testing_util::toy();
    const auto d = toy_data(1.0, 2.0);
    const auto at_opt = estimate_region(s, testing_util::toy_weights(s, 3.0, 2.5), d.X, d.Y, 100, 7);
    CHECK(at_opt.membership);
    CHECK(at_opt.directions == 100);
    CHECK(at_opt.max_residual == 0.0);
    // golden from the seeded run
    CHECK(at_opt.eta == doctest::Approx(8280.5862749822372).epsilon(1e-9));
    CHECK(std::isfinite(at_opt.eta));
    const auto far = estimate_region(s, testing_util::toy_weights(s, 10.0, 10.0), d.X, d.Y, 100, 7);
    CHECK_FALSE(far.membership);
    CHECK(far.max_residual > 1.0);
}

TEST_CASE("scaling residuals up never turns membership on") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.0, 2.5);
    // a narrow box keeps cos(2.5 x2) away from zero so the left side is sizeable
    Eigen::MatrixXd X = testing_util::uniform(100, 2, 1.0, 1.2, 2);
    X.col(1) = testing_util::uniform(100, 1, 0.1, 0.2, 3);
    const Eigen::MatrixXd Y = predict(s, w, X);
    const double lhs = estimate_region(s, w, X, Y, 20, 1).lhs;
    REQUIRE(lhs > 1e-10);
    const Eigen::MatrixXd noise = testing_util::uniform(100, 1, -1.0, 1.0, 4);
    int flipped = 0;
    for (double f : {1e-3, 0.05, 0.3, 0.9, 2.0, 30.0}) {
        const Eigen::MatrixXd Yn = Y + f * lhs * noise;
        const bool base = estimate_region(s, w, X, Yn, 20, 1).membership;
        const bool scaled = estimate_region(s, w, X, Yn, 20, 1, 10.0).membership;
        CHECK(!(scaled && !base));
        flipped += base && !scaled;
    }
    CHECK(flipped > 0);
}

TEST_CASE("region estimate refuses when every first derivative vanishes") {
    const auto s = testing_util::toy();
    Eigen::MatrixXd X = testing_util::uniform(20, 2, 1.0, 2.0, 3);
    X.col(0).setZero();
    const Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(20, 1);
    CHECK_THROWS_AS(estimate_region(s, testing_util::toy_weights(s, 3.0, 2.5), X, Y, 10, 1), DegenerateError);
}

TEST_CASE("initialization sweep on the toy landscape") {
    const auto s = testing_util::toy();
    const auto d = toy_data(0.0, 1.0, 2000);
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.batch_size = 20;
    const auto rows = init_sweep(s, d.X, d.Y, {-10.0, 0.0, 1.0, 3.0, 5.0}, cfg);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].w0 == -10.0);
    CHECK(rows[0].final_loss > 1e-3);
    CHECK(rows[1].final_loss > 1e-6);
    for (int i = 2; i < 5; ++i) CHECK(rows[static_cast<std::size_t>(i)].final_loss < 1e-6);
    const auto csv = sweep_csv(rows);
    CHECK(csv.rfind("w0,loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("perturbation helpers") {
    const auto s = testing_util::toy();
    const auto w = testing_util::toy_weights(s, 3.0, 2.5);
    CHECK(weight_vector(s, w) == along(2.5, 3.0));
    const auto p = perturbed(s, w, along(1.0, -1.0), 0.5);
    CHECK(weight_vector(s, p) == along(3.0, 2.5));
    CHECK_THROWS_AS(perturbed(s, w, Eigen::VectorXd::Ones(3), 1.0), ShapeError);
    std::mt19937_64 rng(1);
    CHECK(random_unit_direction(7, rng).norm() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<int> hits(100, 0);
    parallel_for(100, [&](int i) { hits[static_cast<std::size_t>(i)] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, [](int i) {
                        if (i == 3) throw DomainError("boom");
                    }),
                    DomainError);
    CHECK(worker_count() >= 1);
}
