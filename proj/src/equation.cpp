#include "consol/equation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "consol/errors.hpp"

namespace consol {

namespace {

using Expr = std::vector<Term>;

bool factor_less(const Factor& a, const Factor& b) {
    const double ia = a.inner.value_or(0.0);
    const double ib = b.inner.value_or(0.0);
    return std::tuple(a.input, static_cast<int>(a.symbol), a.inner.has_value(), ia) <
           std::tuple(b.input, static_cast<int>(b.symbol), b.inner.has_value(), ib);
}

bool term_less(const Term& a, const Term& b) {
    if (std::lexicographical_compare(a.factors.begin(), a.factors.end(), b.factors.begin(),
                                     b.factors.end(), factor_less)) {
        return true;
    }
    if (std::lexicographical_compare(b.factors.begin(), b.factors.end(), a.factors.begin(),
                                     a.factors.end(), factor_less)) {
        return false;
    }
    return a.coefficient < b.coefficient;
}

/// Merges x*x into x^2 and sqrt(wx)*sqrt(wx) into w*x until nothing changes.
void merge_products(Term& t) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::sort(t.factors.begin(), t.factors.end(), factor_less);
        for (std::size_t a = 0; a + 1 < t.factors.size() && !changed; ++a) {
            const Factor& f = t.factors[a];
            const Factor& g = t.factors[a + 1];
            if (!(f == g)) continue;
            if (f.symbol == SymbolKind::Identity) {
                t.factors[a] = Factor{f.input, SymbolKind::Square, std::nullopt};
                t.factors.erase(t.factors.begin() + static_cast<std::ptrdiff_t>(a) + 1);
                changed = true;
            } else if (f.symbol == SymbolKind::Sqrt) {
                t.coefficient *= f.inner.value_or(1.0);
                t.factors[a] = Factor{f.input, SymbolKind::Identity, std::nullopt};
                t.factors.erase(t.factors.begin() + static_cast<std::ptrdiff_t>(a) + 1);
                changed = true;
            }
        }
    }
}

Term multiply(const Term& a, const Term& b) {
    Term t;
    t.coefficient = a.coefficient * b.coefficient;
    t.factors = a.factors;
    t.factors.insert(t.factors.end(), b.factors.begin(), b.factors.end());
    merge_products(t);
    return t;
}

Expr multiply(const Expr& a, const Expr& b) {
    Expr out;
    for (const auto& ta : a) {
        for (const auto& tb : b) out.push_back(multiply(ta, tb));
    }
    return out;
}

/// sqrt of a single factor, if expressible.
std::optional<Term> sqrt_factor(const Factor& f) {
    switch (f.symbol) {
        case SymbolKind::Square:  // sqrt(x^2) = |x|, taken as x
            return Term{1.0, {Factor{f.input, SymbolKind::Identity, std::nullopt}}};
        case SymbolKind::Identity: return Term{1.0, {Factor{f.input, SymbolKind::Sqrt, 1.0}}};
        default: return std::nullopt;
    }
}

Expr apply_symbol(SymbolKind kind, std::optional<double> inner, const Expr& arg) {
    if (kind == SymbolKind::Identity) return arg;
    if (kind == SymbolKind::Square) return multiply(arg, arg);
    const double w = inner.value_or(1.0);
    if (arg.empty()) {
        return Expr{Term{phi(kind, 0.0), {}}};
    }
    if (arg.size() != 1) {
        throw StructureError("activation of a multi-term sum has no canonical term form");
    }
    const Term& m = arg.front();
    const double scale = w * m.coefficient;
    if (m.factors.empty()) return Expr{Term{phi(kind, scale), {}}};
    if (m.factors.size() == 1 && m.factors.front().symbol == SymbolKind::Identity) {
        return Expr{Term{1.0, {Factor{m.factors.front().input, kind, scale}}}};
    }
    if (kind == SymbolKind::Sqrt && scale >= 0.0) {
        // sqrt(c * prod f) = sqrt(c) * prod sqrt(f), pairing identical factors first
        Term acc{std::sqrt(scale), {}};
        auto factors = m.factors;
        std::sort(factors.begin(), factors.end(), factor_less);
        for (std::size_t a = 0; a < factors.size(); ++a) {
            if (a + 1 < factors.size() && factors[a] == factors[a + 1]) {
                acc = multiply(acc, Term{1.0, {factors[a]}});
                ++a;
                continue;
            }
            auto root = sqrt_factor(factors[a]);
            if (!root) throw StructureError("sqrt of this factor has no canonical term form");
            acc = multiply(acc, *root);
        }
        return Expr{acc};
    }
    throw StructureError("nested activation has no canonical term form");
}

double factor_value(const Factor& f, const std::vector<double>& x) {
    const double v = x.at(static_cast<std::size_t>(f.input));
    return phi(f.symbol, f.inner.value_or(1.0) * v);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string factor_text(const Factor& f) {
    const std::string var = "x" + std::to_string(f.input + 1);
    switch (f.symbol) {
        case SymbolKind::Identity: return var;
        case SymbolKind::Square: return var + "^2";
        default: {
            const std::string name(symbol_name(f.symbol));
            if (!f.inner) return name + "(" + var + ")";
            return name + "(" + fmt(*f.inner) + "*" + var + ")";
        }
    }
}

}  // namespace

std::vector<std::pair<int, SymbolKind>> signature(const Term& term) {
    std::vector<std::pair<int, SymbolKind>> sig;
    for (const auto& f : term.factors) sig.emplace_back(f.input, f.symbol);
    std::sort(sig.begin(), sig.end(), [](const auto& a, const auto& b) {
        return std::pair(a.first, static_cast<int>(a.second)) < std::pair(b.first, static_cast<int>(b.second));
    });
    return sig;
}

CanonicalEquation canonicalize(CanonicalEquation eq, double prune_threshold) {
    for (auto& terms : eq.outputs) {
        Expr kept;
        for (auto t : terms) {
            bool drop = false;
            std::vector<Factor> factors;
            for (auto f : t.factors) {
                if (f.symbol == SymbolKind::Cos && f.inner) {
                    f.inner = std::abs(*f.inner);
                    if (*f.inner < prune_threshold) continue;  // cos(~0 x) ~ 1
                } else if (f.symbol == SymbolKind::Sin && f.inner) {
                    if (*f.inner < 0.0) {
                        t.coefficient = -t.coefficient;
                        f.inner = -*f.inner;
                    }
                    if (*f.inner < prune_threshold) {
                        drop = true;
                        break;
                    }
                } else if (f.symbol == SymbolKind::Sqrt && f.inner) {
                    if (*f.inner > 0.0) {
                        t.coefficient *= std::sqrt(*f.inner);
                        f.inner.reset();
                    }
                }
                factors.push_back(f);
            }
            if (drop) continue;
            t.factors = std::move(factors);
            merge_products(t);
            kept.push_back(std::move(t));
        }
        std::sort(kept.begin(), kept.end(), term_less);
        Expr merged;
        for (auto& t : kept) {
            if (!merged.empty() && merged.back().factors == t.factors) {
                merged.back().coefficient += t.coefficient;
            } else {
                merged.push_back(std::move(t));
            }
        }
        terms.clear();
        for (auto& t : merged) {
            if (std::abs(t.coefficient) >= prune_threshold) terms.push_back(std::move(t));
        }
        std::sort(terms.begin(), terms.end(), term_less);
    }
    return eq;
}

CanonicalEquation extract_equation(const LocalStructure& structure, const LocalWeights& weights,
                                   double prune_threshold) {
    structure.validate();
    const auto used = structure.used_mask();
    const int p = structure.library.size();
    std::vector<Expr> layer(static_cast<std::size_t>(structure.n_inputs()));
    for (int i = 0; i < structure.n_inputs(); ++i) {
        layer[static_cast<std::size_t>(i)] = Expr{Term{1.0, {Factor{i, SymbolKind::Identity, std::nullopt}}}};
    }
    for (int k = 0; k < structure.depth(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const auto& z = structure.indicators[ku];
        std::vector<Expr> next(static_cast<std::size_t>(z.cols()));
        for (int j = 0; j < z.cols(); ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (!used[ku + 1][ju]) continue;
            switch (structure.layer_kinds[ku]) {
                case LayerKind::Activation: {
                    const auto& op = structure.library.op(j % p);
                    std::optional<double> inner;
                    if (op.has_inner_weight) inner = weights.inner[ku](j);
                    next[ju] = apply_symbol(op.kind, inner, layer[static_cast<std::size_t>(j / p)]);
                    break;
                }
                case LayerKind::Multiplication: {
                    Expr prod{Term{1.0, {}}};
                    bool any = false;
                    for (int i = 0; i < z.rows(); ++i) {
                        if (!z(i, j)) continue;
                        prod = multiply(prod, layer[static_cast<std::size_t>(i)]);
                        any = true;
                    }
                    if (!any) throw StructureError("used multiplication neuron without inputs");
                    next[ju] = std::move(prod);
                    break;
                }
                case LayerKind::Summation: {
                    Expr sum;
                    for (int i = 0; i < z.rows(); ++i) {
                        if (!z(i, j)) continue;
                        for (auto t : layer[static_cast<std::size_t>(i)]) {
                            t.coefficient *= weights.summation[ku](i, j);
                            sum.push_back(std::move(t));
                        }
                    }
                    next[ju] = std::move(sum);
                    break;
                }
            }
        }
        layer = std::move(next);
    }
    CanonicalEquation eq;
    eq.outputs = std::move(layer);
    return canonicalize(std::move(eq), prune_threshold);
}

std::vector<double> evaluate(const CanonicalEquation& eq, const std::vector<double>& x) {
    std::vector<double> out;
    for (const auto& terms : eq.outputs) {
        double acc = 0.0;
        for (const auto& t : terms) {
            double v = t.coefficient;
            for (const auto& f : t.factors) v *= factor_value(f, x);
            acc += v;
        }
        out.push_back(acc);
    }
    return out;
}

std::string to_text(const CanonicalEquation& eq) {
    std::string text;
    for (std::size_t o = 0; o < eq.outputs.size(); ++o) {
        text += "y" + std::to_string(o + 1) + " =";
        const auto& terms = eq.outputs[o];
        if (terms.empty()) text += " 0";
        for (std::size_t n = 0; n < terms.size(); ++n) {
            const auto& t = terms[n];
            const bool negative = t.coefficient < 0.0;
            if (n == 0) {
                text += negative ? " -" : " ";
            } else {
                text += negative ? " - " : " + ";
            }
            text += fmt(std::abs(t.coefficient));
            for (const auto& f : t.factors) text += "*" + factor_text(f);
        }
        text += "\n";
    }
    return text;
}

nlohmann::json to_json(const CanonicalEquation& eq) {
    nlohmann::json outputs = nlohmann::json::array();
    for (std::size_t o = 0; o < eq.outputs.size(); ++o) {
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& t : eq.outputs[o]) {
            nlohmann::json factors = nlohmann::json::array();
            for (const auto& f : t.factors) {
                nlohmann::json jf{{"input_index", f.input}, {"symbol", std::string(symbol_name(f.symbol))}};
                if (f.inner) jf["inner_weight"] = *f.inner;
                factors.push_back(std::move(jf));
            }
            terms.push_back({{"coefficient", t.coefficient}, {"factors", std::move(factors)}});
        }
        outputs.push_back({{"name", "y" + std::to_string(o + 1)}, {"terms", std::move(terms)}});
    }
    return nlohmann::json{{"outputs", std::move(outputs)}};
}

CanonicalEquation equation_from_json(const nlohmann::json& j) {
    CanonicalEquation eq;
    for (const auto& jo : j.at("outputs")) {
        std::vector<Term> terms;
        for (const auto& jt : jo.at("terms")) {
            Term t;
            t.coefficient = jt.at("coefficient").get<double>();
            for (const auto& jf : jt.at("factors")) {
                Factor f;
                f.input = jf.at("input_index").get<int>();
                const auto name = jf.at("symbol").get<std::string>();
                const auto kind = symbol_kind_from_name(name);
                if (!kind) throw std::invalid_argument("unknown symbol '" + name + "'");
                f.symbol = *kind;
                if (jf.contains("inner_weight")) f.inner = jf.at("inner_weight").get<double>();
                t.factors.push_back(f);
            }
            terms.push_back(std::move(t));
        }
        eq.outputs.push_back(std::move(terms));
    }
    return eq;
}

}  // namespace consol
