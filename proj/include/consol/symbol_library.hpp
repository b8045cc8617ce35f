#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace consol {

enum class SymbolKind { Identity, Square, Sqrt, Log, Cos, Sin };

/// One unary activation of the symbol pool.
///
/// Ops with an inner weight are evaluated as phi(w * v); the others as phi(v),
/// their scale being carried by the following summation layer.
struct SymbolOp {
    int id = 0;
    SymbolKind kind = SymbolKind::Identity;
    std::string name;
    bool has_inner_weight = false;
    std::optional<double> domain_lower;  // minimum admissible argument

    bool operator==(const SymbolOp&) const = default;
};

/// Smallest admissible argument of log.
inline constexpr double kLogDomainMin = 1e-12;

SymbolOp make_symbol(SymbolKind kind, int id);
std::optional<SymbolKind> symbol_kind_from_name(std::string_view name);
std::string_view symbol_name(SymbolKind kind);

/// Ordered activation pool. The order fixes activation-layer indexing:
/// neuron for input i and op o sits at i * size() + o.
class SymbolLibrary {
public:
    SymbolLibrary() = default;
    explicit SymbolLibrary(const std::vector<SymbolKind>& kinds);

    /// Throws std::invalid_argument on unknown or duplicate names.
    static SymbolLibrary from_names(const std::vector<std::string>& names);

    int size() const noexcept { return static_cast<int>(ops_.size()); }
    const SymbolOp& op(int id) const { return ops_.at(static_cast<std::size_t>(id)); }
    const std::vector<SymbolOp>& ops() const noexcept { return ops_; }
    std::optional<int> find(SymbolKind kind) const;
    std::vector<std::string> names() const;

    bool operator==(const SymbolLibrary&) const = default;

private:
    std::vector<SymbolOp> ops_;
};

struct SymbolGrad {
    double d_dv = 0.0;
    std::optional<double> d_dw;
};

struct SymbolSecond {
    double d2_dv2 = 0.0;
    std::optional<double> d2_dw2;
    std::optional<double> d2_dvdw;
};

/// phi(w v) for weighted ops, phi(v) otherwise. Throws DomainError outside the domain.
double eval(const SymbolOp& op, std::optional<double> inner_weight, double v);

/// Partial derivatives of eval with respect to the input and the inner weight.
SymbolGrad eval_grads(const SymbolOp& op, std::optional<double> inner_weight, double v);

/// Second partials of eval.
SymbolSecond eval_second(const SymbolOp& op, std::optional<double> inner_weight, double v);

/// Raw phi, phi' and phi'' at argument z (no inner weight applied).
double phi(SymbolKind kind, double z);
double phi_prime(SymbolKind kind, double z);
double phi_second(SymbolKind kind, double z);

}  // namespace consol
