#include "consol/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "consol/errors.hpp"

namespace consol {

namespace {

std::string term_text(const Term& t) {
    CanonicalEquation eq;
    eq.outputs.push_back({t});
    std::string s = to_text(eq);
    const auto eq_pos = s.find("= ");
    if (eq_pos != std::string::npos) s = s.substr(eq_pos + 2);
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
    return s;
}

}  // namespace

Eigen::VectorXd population_std(const Eigen::MatrixXd& y) {
    Eigen::VectorXd out(y.cols());
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double mean = y.col(c).mean();
        out(c) = std::sqrt((y.col(c).array() - mean).square().mean());
    }
    return out;
}

double nrmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth, double sigma_y) {
    if (pred.size() != truth.size() || pred.size() == 0) throw ShapeError("nrmse needs equal, non-empty series");
    if (!(sigma_y > 0.0)) throw DegenerateError("nrmse undefined for zero output deviation");
    return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size())) / sigma_y;
}

double nrmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const Eigen::VectorXd& sigma_y) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || sigma_y.size() != pred.cols()) {
        throw ShapeError("nrmse shapes disagree");
    }
    double total = 0.0;
    for (Eigen::Index c = 0; c < pred.cols(); ++c) total += nrmse(pred.col(c), truth.col(c), sigma_y(c));
    return total / static_cast<double>(pred.cols());
}

double percentage_error(double truth, double learned) {
    if (truth == 0.0) return learned == 0.0 ? 0.0 : 100.0;
    return std::min(100.0, 100.0 * std::abs(learned - truth) / std::abs(truth));
}

CoefficientError e_c(const CanonicalEquation& truth_in, const CanonicalEquation& learned_in) {
    const auto truth = canonicalize(truth_in, 0.0);
    const auto learned = canonicalize(learned_in, 0.0);
    CoefficientError out;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t o = 0; o < truth.outputs.size(); ++o) {
        static const std::vector<Term> kNone;
        const auto& got = o < learned.outputs.size() ? learned.outputs[o] : kNone;
        std::vector<bool> taken(got.size(), false);
        double out_sum = 0.0;
        std::size_t out_count = 0;
        for (const auto& t : truth.outputs[o]) {
            const Term* match = nullptr;
            const auto sig = signature(t);
            for (std::size_t g = 0; g < got.size(); ++g) {
                if (!taken[g] && signature(got[g]) == sig) {
                    taken[g] = true;
                    match = &got[g];
                    break;
                }
            }
            const std::string text = term_text(t);
            auto add = [&](std::string slot, double w, std::optional<double> w_hat) {
                SlotMatch m{static_cast<int>(o), text, std::move(slot), w, w_hat,
                            w_hat ? percentage_error(w, *w_hat) : 100.0};
                out_sum += m.pe;
                ++out_count;
                out.slots.push_back(std::move(m));
            };
            add("coefficient", t.coefficient, match ? std::optional<double>(match->coefficient) : std::nullopt);
            for (std::size_t f = 0; f < t.factors.size(); ++f) {
                if (!t.factors[f].inner) continue;
                std::optional<double> w_hat;
                if (match && match->factors[f].inner) w_hat = match->factors[f].inner;
                const std::string label = "inner(" + std::string(symbol_name(t.factors[f].symbol)) + " x" +
                                          std::to_string(t.factors[f].input + 1) + ")";
                add(label, *t.factors[f].inner, w_hat);
            }
        }
        for (std::size_t g = 0; g < got.size(); ++g) {
            if (!taken[g]) out.learned_only.push_back({static_cast<int>(o), term_text(got[g])});
        }
        out.per_output.push_back(out_count ? out_sum / static_cast<double>(out_count) : 0.0);
        sum += out_sum;
        count += out_count;
    }
    out.e_c_percent = count ? sum / static_cast<double>(count) : 0.0;
    return out;
}

bool same_structure(const CanonicalEquation& truth_in, const CanonicalEquation& learned_in) {
    const auto truth = canonicalize(truth_in, 0.0);
    const auto learned = canonicalize(learned_in, 0.0);
    if (truth.outputs.size() != learned.outputs.size()) return false;
    for (std::size_t o = 0; o < truth.outputs.size(); ++o) {
        std::vector<std::vector<std::pair<int, SymbolKind>>> a, b;
        for (const auto& t : truth.outputs[o]) a.push_back(signature(t));
        for (const auto& t : learned.outputs[o]) b.push_back(signature(t));
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) return false;
    }
    return true;
}

nlohmann::json to_json(const CoefficientError& ce) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : ce.slots) {
        slots.push_back({{"output", s.output + 1},
                         {"term", s.term},
                         {"slot", s.slot},
                         {"true", s.truth},
                         {"learned", s.learned ? nlohmann::json(*s.learned) : nlohmann::json(nullptr)},
                         {"pe", s.pe}});
    }
    nlohmann::json extra = nlohmann::json::array();
    for (const auto& e : ce.learned_only) extra.push_back({{"output", e.output + 1}, {"term", e.term}});
    return {{"e_c_percent", ce.e_c_percent},
            {"per_output", ce.per_output},
            {"slots", slots},
            {"learned_only_terms", extra},
            {"learned_only_excluded_from_average", true}};
}

nlohmann::json to_json(const MetricReport& report) {
    nlohmann::json j = {{"nrmse_train", report.nrmse_train}, {"nrmse_test", report.nrmse_test}};
    j["coefficient_error"] = report.coefficients ? to_json(*report.coefficients) : nlohmann::json(nullptr);
    return j;
}

}  // namespace consol
