#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "consol/local_net.hpp"
#include "consol/symbol_library.hpp"

namespace testing_util {

inline bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

// y = w1 * x1^2 * cos(w2 * x2) built by hand from the generic layered pieces.
inline consol::LocalStructure toy() {
    auto lib = consol::SymbolLibrary::from_names({"square", "cos"});
    auto s = consol::LocalStructure::standard(lib, 2, 1, 1);
    s.indicators[1](0, 0) = 1;  // x1^2
    s.indicators[1](3, 0) = 1;  // cos(w x2)
    s.indicators[2](0, 0) = 1;
    return s;
}

inline consol::LocalWeights toy_weights(const consol::LocalStructure& s, double w1, double w2) {
    auto w = consol::LocalWeights::filled(s, 0.0);
    w.summation[2](0, 0) = w1;
    w.inner[0](3) = w2;
    return w;
}

// Random three-layer structure over a random library, every product neuron
// fed by 1..3 activations and every output summing 1..3 products. Inputs
// drawn from [1,2] and inner weights from [0.3,1.5] keep log and sqrt in domain.
struct RandomNet {
    consol::LocalStructure s;
    consol::LocalWeights w;
};

inline RandomNet random_net(std::mt19937_64& rng) {
    using consol::SymbolKind;
    std::vector<SymbolKind> pool{SymbolKind::Identity, SymbolKind::Square, SymbolKind::Sqrt,
                                 SymbolKind::Log,      SymbolKind::Cos,    SymbolKind::Sin};
    std::shuffle(pool.begin(), pool.end(), rng);
    const int n_ops = std::uniform_int_distribution<int>(1, 4)(rng);
    pool.resize(static_cast<std::size_t>(n_ops));
    const consol::SymbolLibrary lib(pool);
    const int n_in = std::uniform_int_distribution<int>(1, 3)(rng);
    const int n_mult = std::uniform_int_distribution<int>(1, 4)(rng);
    const int n_out = std::uniform_int_distribution<int>(1, 2)(rng);
    auto s = consol::LocalStructure::standard(lib, n_in, n_mult, n_out);
    const int n_act = n_in * n_ops;
    for (int j = 0; j < n_mult; ++j) {
        const int k = std::uniform_int_distribution<int>(1, std::min(3, n_act))(rng);
        for (int n = 0; n < k; ++n) s.indicators[1](std::uniform_int_distribution<int>(0, n_act - 1)(rng), j) = 1;
    }
    for (int o = 0; o < n_out; ++o) {
        const int k = std::uniform_int_distribution<int>(1, std::min(3, n_mult))(rng);
        for (int n = 0; n < k; ++n) s.indicators[2](std::uniform_int_distribution<int>(0, n_mult - 1)(rng), o) = 1;
    }
    auto w = consol::LocalWeights::filled(s, 0.0);
    std::uniform_real_distribution<double> coef(-2.0, 2.0), inner(0.3, 1.5);
    for (auto& m : w.summation)
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) m(r, c) = coef(rng);
    for (auto& v : w.inner)
        for (int r = 0; r < v.size(); ++r) v(r) = inner(rng);
    return {s, w};
}

inline Eigen::MatrixXd uniform(int n, int d, double lo, double hi, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd m(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) m(r, c) = u(rng);
    return m;
}

}  // namespace testing_util
