#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "consol/local_net.hpp"
#include "consol/symbol_library.hpp"

namespace consol {

/// phi(inner * x_input), or phi(x_input) when inner is absent.
struct Factor {
    int input = 0;
    SymbolKind symbol = SymbolKind::Identity;
    std::optional<double> inner;

    bool operator==(const Factor&) const = default;
};

struct Term {
    double coefficient = 0.0;
    std::vector<Factor> factors;

    bool operator==(const Term&) const = default;
};

/// Sum-of-products form, one term list per output.
struct CanonicalEquation {
    std::vector<std::vector<Term>> outputs;

    bool operator==(const CanonicalEquation&) const = default;
};

inline constexpr double kDefaultPruneThreshold = 0.01;

/// (input, symbol) pairs of a term, ignoring inner weights; used for matching.
std::vector<std::pair<int, SymbolKind>> signature(const Term& term);

/// Applies the simplification rules, merges identical terms, drops terms with
/// |coefficient| < prune_threshold and sorts. Idempotent.
///
/// Rules: cos(-w x) -> cos(w x); sin(-w x) -> -sin(w x); c*sqrt(w x) -> c*sqrt(w)*sqrt(x);
/// x*x -> x^2; sqrt(x)*sqrt(x) -> x; cos with |w| below the threshold -> 1;
/// sin with |w| below the threshold drops the term.
CanonicalEquation canonicalize(CanonicalEquation eq, double prune_threshold = kDefaultPruneThreshold);

/// Expands a network into canonical sum-of-terms form.
///
/// Nested activations are supported when their argument reduces to a single
/// input monomial; other nestings raise StructureError.
CanonicalEquation extract_equation(const LocalStructure& structure, const LocalWeights& weights,
                                   double prune_threshold = kDefaultPruneThreshold);

/// Evaluates an equation at one input point.
std::vector<double> evaluate(const CanonicalEquation& eq, const std::vector<double>& x);

/// e.g. "y1 = 3.000*x1^2*cos(2.500*x2)", one line per output.
std::string to_text(const CanonicalEquation& eq);

nlohmann::json to_json(const CanonicalEquation& eq);
CanonicalEquation equation_from_json(const nlohmann::json& j);

}  // namespace consol
