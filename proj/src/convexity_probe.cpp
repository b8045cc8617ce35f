#include "consol/convexity_probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "consol/errors.hpp"

namespace consol {

namespace {

constexpr double kDerivGuard = 1e-10;
constexpr double kResidualFloor = 1e-12;

bool single_block(const LocalStructure& s) {
    return s.layer_kinds ==
           std::vector<LayerKind>{LayerKind::Activation, LayerKind::Multiplication, LayerKind::Summation};
}

double output_at(const LocalStructure& structure, const LocalWeights& weights, std::span<const double> x,
                 const Eigen::VectorXd& direction, double t, int output) {
    return forward(structure, perturbed(structure, weights, direction, t), x)(output);
}

double loss_at(const LocalStructure& structure, const LocalWeights& weights, const Eigen::MatrixXd& X,
               const Eigen::MatrixXd& Y, const Eigen::VectorXd& direction, double t) {
    return loss(structure, perturbed(structure, weights, direction, t), X, Y);
}

}  // namespace

int worker_count() {
    if (const char* env = std::getenv("CONSOL_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, const std::function<void(int)>& body) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

SegmentReport segment_convexity_test(const ScalarField& f, const Eigen::VectorXd& lower,
                                     const Eigen::VectorXd& upper, long n_triples, double tol,
                                     std::uint64_t seed) {
    if (lower.size() != upper.size()) throw ShapeError("box bounds differ in length");
    if (!lower.allFinite() || !upper.allFinite()) throw std::invalid_argument("box bounds must be finite");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SegmentReport rep;
    rep.worst_excess = -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd span = upper - lower;
    auto draw = [&] {
        Eigen::VectorXd p(lower.size());
        for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = lower(i) + span(i) * unit(rng);
        return p;
    };
    for (long n = 0; n < n_triples; ++n) {
        const Eigen::VectorXd u = draw();
        const Eigen::VectorXd v = draw();
        const double lambda = unit(rng);
        const double excess = f(lambda * u + (1.0 - lambda) * v) - (lambda * f(u) + (1.0 - lambda) * f(v));
        rep.worst_excess = std::max(rep.worst_excess, excess);
        if (excess > tol) ++rep.violations;
    }
    rep.triples = n_triples;
    return rep;
}

Eigen::VectorXd weight_vector(const LocalStructure& structure, const LocalWeights& weights) {
    return pack(weights, live_parameters(structure));
}

LocalWeights perturbed(const LocalStructure& structure, const LocalWeights& weights,
                       const Eigen::VectorXd& direction, double t) {
    const auto params = live_parameters(structure);
    if (direction.size() != static_cast<Eigen::Index>(params.size())) {
        throw ShapeError("direction length " + std::to_string(direction.size()) + " does not match " +
                         std::to_string(params.size()) + " live parameters");
    }
    LocalWeights out = weights;
    unpack(out, params, pack(weights, params) + t * direction);
    return out;
}

Eigen::VectorXd random_unit_direction(int n, std::mt19937_64& rng) {
    if (n <= 0) throw std::invalid_argument("direction needs a positive length");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd d(n);
    do {
        for (int i = 0; i < n; ++i) d(i) = normal(rng);
    } while (d.norm() == 0.0);
    return d / d.norm();
}

DirectionalDerivs analytic_directional_derivs(const LocalStructure& structure, const LocalWeights& weights,
                                              std::span<const double> x, const Eigen::VectorXd& direction,
                                              int output) {
    if (!single_block(structure)) {
        throw StructureError("analytic derivatives need one activation, one product and one summation layer");
    }
    if (static_cast<int>(x.size()) != structure.n_inputs()) throw ShapeError("input length mismatch");
    if (output < 0 || output >= structure.n_outputs()) throw ShapeError("output index out of range");
    const auto params = live_parameters(structure);
    if (direction.size() != static_cast<Eigen::Index>(params.size())) throw ShapeError("direction length mismatch");

    std::map<int, double> d_inner;           // activation neuron -> dw
    std::map<int, double> d_coef;            // product neuron -> dc on the link to `output`
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        if (p.kind == ParamRef::Kind::Inner) d_inner[p.row] = direction(static_cast<Eigen::Index>(k));
        if (p.kind == ParamRef::Kind::Summation && p.col == output) d_coef[p.row] = direction(static_cast<Eigen::Index>(k));
    }

    const int lib = structure.library.size();
    const auto& z_act = structure.indicators[1];
    const auto& z_sum = structure.indicators[2];
    DirectionalDerivs out;
    for (int m = 0; m < z_sum.rows(); ++m) {
        if (!z_sum(m, output)) continue;
        // log-form pieces: u = f'/f, v = f''/f per factor
        double prod = 1.0, sum_u = 0.0, sum_v_minus_u2 = 0.0;
        for (int n = 0; n < z_act.rows(); ++n) {
            if (!z_act(n, m)) continue;
            const auto& op = structure.library.op(n % lib);
            const double xv = x[static_cast<std::size_t>(n / lib)];
            std::optional<double> w;
            if (op.has_inner_weight) w = weights.inner[0](n);
            const double f = eval(op, w, xv);
            if (f == 0.0) {
                throw DomainError("factor " + std::to_string(n) + " is zero; the log form is undefined");
            }
            prod *= f;
            double u = 0.0, v = 0.0;
            if (auto it = d_inner.find(n); it != d_inner.end()) {
                const auto g = eval_grads(op, w, xv);
                const auto h = eval_second(op, w, xv);
                u = g.d_dw.value_or(0.0) * it->second / f;
                v = h.d2_dw2.value_or(0.0) * it->second * it->second / f;
            }
            sum_u += u;
            sum_v_minus_u2 += v - u * u;
        }
        const double p1 = prod * sum_u;
        const double p2 = prod * (sum_u * sum_u + sum_v_minus_u2);
        const double c = weights.summation[2](m, output);
        const auto dc_it = d_coef.find(m);
        const double dc = dc_it == d_coef.end() ? 0.0 : dc_it->second;
        out.y_prime += dc * prod + c * p1;
        out.y_doubleprime += 2.0 * dc * p1 + c * p2;
    }
    return out;
}

DirectionalDerivs numeric_directional_derivs(const LocalStructure& structure, const LocalWeights& weights,
                                             std::span<const double> x, const Eigen::VectorXd& direction,
                                             int output) {
    auto g = [&](double t) { return output_at(structure, weights, x, direction, t, output); };
    const double g0 = g(0.0);
    auto first = [&](double h) { return (g(h) - g(-h)) / (2.0 * h); };
    auto second = [&](double h) { return (g(h) - 2.0 * g0 + g(-h)) / (h * h); };
    DirectionalDerivs out;
    // central differences have O(h^2) error; combine two steps to cancel it
    const double d1a = first(1e-5), d1b = first(1e-6);
    out.y_prime = (1e-10 * d1b - 1e-12 * d1a) / (1e-10 - 1e-12);
    // smaller steps drown the second difference in rounding
    const double d2a = second(2e-4), d2b = second(1e-4);
    out.y_doubleprime = (4.0 * d2b - d2a) / 3.0;
    return out;
}

double loss_second_derivative_fd(const LocalStructure& structure, const LocalWeights& weights,
                                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const Eigen::VectorXd& direction) {
    const double l0 = loss_at(structure, weights, X, Y, direction, 0.0);
    auto second = [&](double h) {
        return (loss_at(structure, weights, X, Y, direction, h) - 2.0 * l0 +
                loss_at(structure, weights, X, Y, direction, -h)) /
               (h * h);
    };
    const double a = second(2e-4), b = second(1e-4);
    return (4.0 * b - a) / 3.0;
}

double loss_second_derivative(const LocalStructure& structure, const LocalWeights& weights,
                              const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Eigen::VectorXd& direction,
                              double rel_tol) {
    if (direction.norm() == 0.0) throw std::invalid_argument("direction must be nonzero");
    if (X.rows() != Y.rows() || Y.cols() != structure.n_outputs()) throw ShapeError("data shape mismatch");
    const Eigen::MatrixXd pred = predict(structure, weights, X);
    double acc = 0.0;
    std::vector<double> row(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
        for (int j = 0; j < structure.n_outputs(); ++j) {
            const auto d = analytic_directional_derivs(structure, weights, row, direction, j);
            const double e = pred(r, j) - Y(r, j);
            acc += d.y_prime * d.y_prime + e * d.y_doubleprime;
        }
    }
    const double chain = acc / static_cast<double>(X.rows());
    const double fd = loss_second_derivative_fd(structure, weights, X, Y, direction);
    const double gap = std::abs(chain - fd);
    if (gap > rel_tol * std::max(std::abs(chain), std::abs(fd)) + 1e-12) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "chain rule %.10g vs finite difference %.10g (relative gap %.3g)", chain, fd,
                      gap / std::max(std::abs(chain), std::abs(fd)));
        throw ConsistencyError(buf);
    }
    return chain;
}

RegionEstimate estimate_region(const LocalStructure& structure, const LocalWeights& weights,
                               const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int n_directions,
                               std::uint64_t seed, double residual_scale) {
    if (n_directions <= 0) throw std::invalid_argument("need at least one direction");
    if (X.rows() != Y.rows() || Y.cols() != structure.n_outputs()) throw ShapeError("data shape mismatch");
    const int n_params = static_cast<int>(live_parameters(structure).size());
    std::mt19937_64 rng(seed);
    std::vector<Eigen::VectorXd> dirs;
    for (int d = 0; d < n_directions; ++d) dirs.push_back(random_unit_direction(n_params, rng));

    // derivatives per direction, sample and output; NaN marks a skipped sample
    const int n_out = structure.n_outputs();
    std::vector<std::vector<DirectionalDerivs>> table(dirs.size());
    std::vector<char> skipped(static_cast<std::size_t>(X.rows()), 0);
    parallel_for(n_directions, [&](int d) {
        auto& col = table[static_cast<std::size_t>(d)];
        col.resize(static_cast<std::size_t>(X.rows() * n_out));
        std::vector<double> row(static_cast<std::size_t>(X.cols()));
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
            for (int j = 0; j < n_out; ++j) {
                auto& cell = col[static_cast<std::size_t>(r * n_out + j)];
                try {
                    cell = analytic_directional_derivs(structure, weights, row, dirs[static_cast<std::size_t>(d)], j);
                } catch (const DomainError&) {
                    cell = {std::nan(""), std::nan("")};
                    if (d == 0) skipped[static_cast<std::size_t>(r)] = 1;
                }
            }
        }
    });

    RegionEstimate est;
    est.directions = n_directions;
    est.skipped_samples = static_cast<int>(std::count(skipped.begin(), skipped.end(), 1));
    bool any = false;
    for (const auto& col : table) {
        for (const auto& cell : col) {
            if (std::isnan(cell.y_prime) || std::abs(cell.y_prime) <= kDerivGuard) continue;
            any = true;
            est.eta = std::max(est.eta, std::abs(cell.y_doubleprime) / std::abs(cell.y_prime));
        }
    }
    if (!any) throw DegenerateError("every |y'| is below 1e-10; the region estimate is undefined");
    const Eigen::MatrixXd pred = predict(structure, weights, X);
    est.max_residual = residual_scale * (pred - Y).cwiseAbs().maxCoeff();
    // an exact fit still leaves rounding-level residuals; those count as zero
    if (est.max_residual <= kResidualFloor * std::max(1.0, Y.cwiseAbs().maxCoeff())) est.max_residual = 0.0;

    est.lhs = std::numeric_limits<double>::infinity();
    for (const auto& col : table) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        std::vector<double> mags;
        for (const auto& cell : col) {
            if (std::isnan(cell.y_prime)) continue;
            const double a = std::abs(cell.y_prime);
            mags.push_back(a);
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        // eta == 0 means y'' vanishes everywhere; the bound is then unconstrained
        const double lhs = hi == 0.0 ? 0.0 : est.eta == 0.0 ? std::numeric_limits<double>::infinity()
                                                              : lo * lo / (est.eta * hi);
        if (lhs < est.lhs) {
            est.lhs = lhs;
            est.abs_y_prime = std::move(mags);
        }
    }
    est.membership = est.lhs > est.max_residual;
    return est;
}

nlohmann::json to_json(const RegionEstimate& r) {
    return {{"eta", r.eta},
            {"lhs", r.lhs},
            {"max_residual", r.max_residual},
            {"membership", r.membership},
            {"directions", r.directions},
            {"skipped_samples", r.skipped_samples},
            {"abs_y_prime", r.abs_y_prime}};
}

std::vector<SweepRow> init_sweep(const LocalStructure& structure, const Eigen::MatrixXd& X,
                                 const Eigen::MatrixXd& Y, const std::vector<double>& grid,
                                 const TrainConfig& train) {
    if (grid.empty()) throw std::invalid_argument("init_sweep needs a non-empty grid");
    std::vector<SweepRow> rows(grid.size());
    parallel_for(static_cast<int>(grid.size()), [&](int i) {
        TrainConfig cfg = train;
        cfg.init_value = grid[static_cast<std::size_t>(i)];
        auto& row = rows[static_cast<std::size_t>(i)];
        row.w0 = cfg.init_value;
        try {
            row.final_loss = fit(structure, cfg, X, Y).final_loss;
        } catch (const DomainError&) {
            row.final_loss = std::numeric_limits<double>::infinity();
        }
    });
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "w0,loss\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", r.w0, r.final_loss);
        out += buf;
    }
    return out;
}

}  // namespace consol
