#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "consol/equation.hpp"

namespace consol {

/// Population standard deviation of each column.
Eigen::VectorXd population_std(const Eigen::MatrixXd& y);

/// sqrt(mean squared error) / sigma_y. Throws DegenerateError when sigma_y is 0.
double nrmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth, double sigma_y);

/// Mean over columns of the per-column NRMSE.
double nrmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const Eigen::VectorXd& sigma_y);

/// 1 / (1 + nrmse).
inline double reward_from_nrmse(double value) { return 1.0 / (1.0 + value); }

/// 100 * |learned - truth| / |truth|, capped at 100.
double percentage_error(double truth, double learned);

/// One coefficient slot of the true equation and how it was matched.
struct SlotMatch {
    int output = 0;
    std::string term;   // text of the true term
    std::string slot;   // "coefficient" or "inner(x2)" style label
    double truth = 0.0;
    std::optional<double> learned;
    double pe = 100.0;
};

struct ExtraTerm {
    int output = 0;
    std::string term;
};

struct CoefficientError {
    double e_c_percent = 0.0;
    std::vector<double> per_output;  // mean PE over that output's slots (0 if it has none)
    std::vector<SlotMatch> slots;
    std::vector<ExtraTerm> learned_only;  // reported, not averaged
};

/// Average percentage error over the true equation's coefficient slots.
/// Terms are matched on (input, symbol) signatures; unmatched slots score 100.
CoefficientError e_c(const CanonicalEquation& truth, const CanonicalEquation& learned);

/// True when every output has the same set of term signatures.
bool same_structure(const CanonicalEquation& truth, const CanonicalEquation& learned);

struct MetricReport {
    double nrmse_train = 0.0;
    double nrmse_test = 0.0;
    std::optional<CoefficientError> coefficients;
};

nlohmann::json to_json(const CoefficientError& ce);
nlohmann::json to_json(const MetricReport& report);

}  // namespace consol
