#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <json.hpp>
#include <random>
#include <span>
#include <vector>

namespace consol {

/// One layer of a fully input-convex network:
///   z_out = act(wz * z_in + wy * u + bias)
/// wz is empty for the first layer and must stay entrywise nonnegative.
struct IcnnLayer {
    Eigen::MatrixXd wz;
    Eigen::MatrixXd wy;
    Eigen::VectorXd bias;

    bool operator==(const IcnnLayer& o) const {
        return wz == o.wz && wy == o.wy && bias == o.bias;
    }
};

/// Scalar network convex in its whole input u = (s, a). Hidden layers use
/// softplus (convex, nondecreasing); the last layer is linear with one row.
struct IcnnParams {
    int input_dim = 0;
    std::vector<IcnnLayer> layers;

    /// Wz ~ |N(0, 0.1)|, Wy ~ N(0, 0.1), zero biases.
    static IcnnParams init(int input_dim, const std::vector<int>& hidden, std::mt19937_64& rng);

    /// Constant-output network.
    static IcnnParams constant(int input_dim, const std::vector<int>& hidden, double bias);

    /// Smallest passthrough entry over all layers (+inf when there are none).
    double min_passthrough() const;

    bool operator==(const IcnnParams&) const = default;
};

double softplus(double x);

double icnn_forward(const IcnnParams& params, const Eigen::VectorXd& u);

/// Forward on the concatenation (s, a). Throws ShapeError on dimension mismatch.
double icnn_forward(const IcnnParams& params, std::span<const double> s, std::span<const double> a);

/// Value and gradient with respect to the input.
double icnn_value_and_input_grad(const IcnnParams& params, const Eigen::VectorXd& u,
                                 Eigen::VectorXd& grad);

struct IcnnSample {
    Eigen::VectorXd input;
    double target = 0.0;
};

struct IcnnFitConfig {
    double learning_rate = 5e-3;
    int epochs = 50;
    int batch_size = 100;
};

/// Mean-squared-error regression with Adam; every passthrough weight is
/// clamped to >= 0 after each step. Mini-batches are drawn by shuffling with `rng`.
IcnnParams icnn_fit(IcnnParams params, std::span<const IcnnSample> samples, const IcnnFitConfig& config,
                    std::mt19937_64& rng);

double icnn_mse(const IcnnParams& params, std::span<const IcnnSample> samples);

/// Convex objective over the action box: returns f(a) and writes grad f(a).
using BoxObjective = std::function<double(const Eigen::VectorXd& a, Eigen::VectorXd& grad)>;

struct BoxResult {
    Eigen::VectorXd a_star;
    double value = 0.0;
    double kkt_residual = 0.0;           // inf-norm of the projected-gradient step at a_star
    std::vector<double> restart_values;  // final value of every restart
};

struct BoxOptions {
    int restarts = 3;
    int steps = 500;
    double tolerance = 1e-9;
};

/// Projected gradient descent with Barzilai-Borwein steps and Armijo
/// backtracking over lower <= a <= upper. Restart 0 starts at the box
/// midpoint, the rest at uniform draws. Returns the best restart.
BoxResult minimize_box(const BoxObjective& objective, const Eigen::VectorXd& lower,
                       const Eigen::VectorXd& upper, const BoxOptions& options, std::mt19937_64& rng);

/// argmin over a in [lower, upper] of icnn(s, a).
BoxResult minimize_over_box(const IcnnParams& params, std::span<const double> s,
                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            const BoxOptions& options, std::mt19937_64& rng);

/// Same with the unit box [0,1]^n_a.
BoxResult minimize_over_unit_box(const IcnnParams& params, std::span<const double> s, int n_a,
                                 const BoxOptions& options, std::mt19937_64& rng);

/// Serialization. Binary: "ICNN" magic, u32 version, u32 input_dim, u32 layer
/// count, then per layer wz, wy, bias each as (u32 rows, u32 cols, raw f64).
void write_icnn_binary(std::ostream& out, const IcnnParams& params);
IcnnParams read_icnn_binary(std::istream& in);
nlohmann::json icnn_to_json(const IcnnParams& params);
IcnnParams icnn_from_json(const nlohmann::json& j);

}  // namespace consol
