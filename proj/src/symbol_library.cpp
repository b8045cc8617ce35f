#include "consol/symbol_library.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "consol/errors.hpp"

namespace consol {

namespace {

constexpr SymbolKind kAllKinds[] = {SymbolKind::Identity, SymbolKind::Square, SymbolKind::Sqrt,
                                    SymbolKind::Log,      SymbolKind::Cos,    SymbolKind::Sin};

void check_domain(SymbolKind kind, double z) {
    if (!std::isfinite(z)) {
        throw DomainError("non-finite argument to " + std::string(symbol_name(kind)));
    }
    if (kind == SymbolKind::Sqrt && z < 0.0) {
        std::ostringstream os;
        os << "sqrt argument " << z << " below 0";
        throw DomainError(os.str());
    }
    if (kind == SymbolKind::Log && z < kLogDomainMin) {
        std::ostringstream os;
        os << "log argument " << z << " below " << kLogDomainMin;
        throw DomainError(os.str());
    }
}

double argument(const SymbolOp& op, std::optional<double> inner_weight, double v) {
    if (op.has_inner_weight != inner_weight.has_value()) {
        throw std::invalid_argument("inner weight presence does not match op '" + op.name + "'");
    }
    return op.has_inner_weight ? *inner_weight * v : v;
}

}  // namespace

std::string_view symbol_name(SymbolKind kind) {
    switch (kind) {
        case SymbolKind::Identity: return "id";
        case SymbolKind::Square: return "square";
        case SymbolKind::Sqrt: return "sqrt";
        case SymbolKind::Log: return "log";
        case SymbolKind::Cos: return "cos";
        case SymbolKind::Sin: return "sin";
    }
    return "?";
}

std::optional<SymbolKind> symbol_kind_from_name(std::string_view name) {
    for (auto kind : kAllKinds) {
        if (symbol_name(kind) == name) return kind;
    }
    return std::nullopt;
}

SymbolOp make_symbol(SymbolKind kind, int id) {
    SymbolOp op;
    op.id = id;
    op.kind = kind;
    op.name = std::string(symbol_name(kind));
    op.has_inner_weight = kind == SymbolKind::Sqrt || kind == SymbolKind::Log ||
                          kind == SymbolKind::Cos || kind == SymbolKind::Sin;
    if (kind == SymbolKind::Sqrt) op.domain_lower = 0.0;
    if (kind == SymbolKind::Log) op.domain_lower = kLogDomainMin;
    return op;
}

SymbolLibrary::SymbolLibrary(const std::vector<SymbolKind>& kinds) {
    std::set<SymbolKind> seen;
    for (auto kind : kinds) {
        if (!seen.insert(kind).second) {
            throw std::invalid_argument("duplicate symbol '" + std::string(symbol_name(kind)) + "'");
        }
        ops_.push_back(make_symbol(kind, static_cast<int>(ops_.size())));
    }
}

SymbolLibrary SymbolLibrary::from_names(const std::vector<std::string>& names) {
    std::vector<SymbolKind> kinds;
    for (const auto& name : names) {
        auto kind = symbol_kind_from_name(name);
        if (!kind) throw std::invalid_argument("unknown symbol '" + name + "'");
        kinds.push_back(*kind);
    }
    return SymbolLibrary(kinds);
}

std::optional<int> SymbolLibrary::find(SymbolKind kind) const {
    for (const auto& op : ops_) {
        if (op.kind == kind) return op.id;
    }
    return std::nullopt;
}

std::vector<std::string> SymbolLibrary::names() const {
    std::vector<std::string> out;
    out.reserve(ops_.size());
    for (const auto& op : ops_) out.push_back(op.name);
    return out;
}

double phi(SymbolKind kind, double z) {
    check_domain(kind, z);
    switch (kind) {
        case SymbolKind::Identity: return z;
        case SymbolKind::Square: return z * z;
        case SymbolKind::Sqrt: return std::sqrt(z);
        case SymbolKind::Log: return std::log(z);
        case SymbolKind::Cos: return std::cos(z);
        case SymbolKind::Sin: return std::sin(z);
    }
    return 0.0;
}

double phi_prime(SymbolKind kind, double z) {
    check_domain(kind, z);
    switch (kind) {
        case SymbolKind::Identity: return 1.0;
        case SymbolKind::Square: return 2.0 * z;
        case SymbolKind::Sqrt:
            if (z <= 0.0) throw DomainError("sqrt derivative undefined at 0");
            return 0.5 / std::sqrt(z);
        case SymbolKind::Log: return 1.0 / z;
        case SymbolKind::Cos: return -std::sin(z);
        case SymbolKind::Sin: return std::cos(z);
    }
    return 0.0;
}

double phi_second(SymbolKind kind, double z) {
    check_domain(kind, z);
    switch (kind) {
        case SymbolKind::Identity: return 0.0;
        case SymbolKind::Square: return 2.0;
        case SymbolKind::Sqrt:
            if (z <= 0.0) throw DomainError("sqrt derivative undefined at 0");
            return -0.25 / (z * std::sqrt(z));
        case SymbolKind::Log: return -1.0 / (z * z);
        case SymbolKind::Cos: return -std::cos(z);
        case SymbolKind::Sin: return -std::sin(z);
    }
    return 0.0;
}

double eval(const SymbolOp& op, std::optional<double> inner_weight, double v) {
    return phi(op.kind, argument(op, inner_weight, v));
}

SymbolGrad eval_grads(const SymbolOp& op, std::optional<double> inner_weight, double v) {
    const double z = argument(op, inner_weight, v);
    const double d = phi_prime(op.kind, z);
    SymbolGrad g;
    if (op.has_inner_weight) {
        g.d_dv = *inner_weight * d;
        g.d_dw = v * d;
    } else {
        g.d_dv = d;
    }
    return g;
}

SymbolSecond eval_second(const SymbolOp& op, std::optional<double> inner_weight, double v) {
    const double z = argument(op, inner_weight, v);
    const double dd = phi_second(op.kind, z);
    SymbolSecond s;
    if (op.has_inner_weight) {
        const double w = *inner_weight;
        s.d2_dv2 = w * w * dd;
        s.d2_dw2 = v * v * dd;
        // d/dw (w phi'(wv)) = phi'(wv) + w v phi''(wv)
        s.d2_dvdw = phi_prime(op.kind, z) + w * v * dd;
    } else {
        s.d2_dv2 = dd;
    }
    return s;
}

}  // namespace consol
