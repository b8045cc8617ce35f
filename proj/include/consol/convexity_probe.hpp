#pragma once

#include <Eigen/Dense>
#include <functional>
#include <json.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "consol/local_net.hpp"

namespace consol {

using ScalarField = std::function<double(const Eigen::VectorXd&)>;

struct SegmentReport {
    long triples = 0;
    long violations = 0;
    double worst_excess = 0.0;  // largest f(mid) - chord seen, before tol
};

/// Samples (u, v, lambda) in the box and counts triples where
/// f(lambda u + (1 - lambda) v) > lambda f(u) + (1 - lambda) f(v) + tol.
SegmentReport segment_convexity_test(const ScalarField& f, const Eigen::VectorXd& lower,
                                     const Eigen::VectorXd& upper, long n_triples, double tol,
                                     std::uint64_t seed);

/// Trainable weights in live_parameters() order.
Eigen::VectorXd weight_vector(const LocalStructure& structure, const LocalWeights& weights);

/// `weights` moved by t * direction along the live parameters.
LocalWeights perturbed(const LocalStructure& structure, const LocalWeights& weights,
                       const Eigen::VectorXd& direction, double t);

/// Uniformly random unit vector of length n.
Eigen::VectorXd random_unit_direction(int n, std::mt19937_64& rng);

struct DirectionalDerivs {
    double y_prime = 0.0;
    double y_doubleprime = 0.0;
};

/// d/dt and d2/dt2 of output `output` at t = 0 along W + tX, from the log form
/// of each product: with u_i = f_i'/f_i and v_i = f_i''/f_i, a product P has
/// P' = P sum(u) and P'' = P ((sum u)^2 + sum(v - u^2)).
///
/// Scope: activation, multiplication, summation layers only. Throws
/// StructureError outside that scope and DomainError when a factor is zero.
DirectionalDerivs analytic_directional_derivs(const LocalStructure& structure, const LocalWeights& weights,
                                              std::span<const double> x, const Eigen::VectorXd& direction,
                                              int output = 0);

/// Same quantities by central differences of forward(), Richardson-combined:
/// steps 1e-5 and 1e-6 for y', 2e-4 and 1e-4 for y''.
DirectionalDerivs numeric_directional_derivs(const LocalStructure& structure, const LocalWeights& weights,
                                             std::span<const double> x, const Eigen::VectorXd& direction,
                                             int output = 0);

/// d2/dt2 L(W + tX) at t = 0 for L = 1/(2N) sum e^2, by the chain rule
/// (1/N) sum (y'^2 + e y'') with analytic y', y''. A Richardson finite
/// difference of L is computed alongside; a relative gap above `rel_tol`
/// throws ConsistencyError.
double loss_second_derivative(const LocalStructure& structure, const LocalWeights& weights,
                              const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Eigen::VectorXd& direction,
                              double rel_tol = 1e-4);

/// Finite-difference value of the same quantity (what the check compares against).
double loss_second_derivative_fd(const LocalStructure& structure, const LocalWeights& weights,
                                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const Eigen::VectorXd& direction);

struct RegionEstimate {
    double eta = 0.0;
    std::vector<double> abs_y_prime;  // per (sample, output), for the worst direction
    double max_residual = 0.0;
    double lhs = 0.0;                 // min over directions of min|y'|^2 / (eta max|y'|)
    int directions = 0;
    int skipped_samples = 0;          // zero-factor samples left out of the log form
    bool membership = false;
};

/// eta = max |y''| / |y'| over sampled unit directions and samples with
/// |y'| > 1e-10. Membership holds when, for every sampled direction,
/// min|y'|^2 / (eta max|y'|) exceeds the largest absolute residual.
/// `residual_scale` multiplies the residuals (1 for the plain estimate).
/// Residuals within 1e-12 max(1, max|y|) are rounding and count as zero.
/// Throws DegenerateError when every |y'| is below the guard.
RegionEstimate estimate_region(const LocalStructure& structure, const LocalWeights& weights,
                               const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int n_directions,
                               std::uint64_t seed, double residual_scale = 1.0);

nlohmann::json to_json(const RegionEstimate& r);

struct SweepRow {
    double w0 = 0.0;
    double final_loss = 0.0;  // +inf when the fit left the domain
};

/// Fits from every weight set to w0, for each w0 in the grid.
std::vector<SweepRow> init_sweep(const LocalStructure& structure, const Eigen::MatrixXd& X,
                                 const Eigen::MatrixXd& Y, const std::vector<double>& grid,
                                 const TrainConfig& train);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Worker count: CONSOL_THREADS if set and positive, else hardware concurrency.
int worker_count();

/// Runs body(i) for i in [0, n) across worker_count() threads.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace consol
