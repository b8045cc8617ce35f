#include "consol/search_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "consol/errors.hpp"

namespace consol {

namespace {

std::size_t idx(int i) { return static_cast<std::size_t>(i); }

int fan_in_cap(const ConstraintConfig& cfg, LayerKind kind) {
    return kind == LayerKind::Multiplication ? cfg.max_factors_per_neuron : cfg.max_terms_per_neuron;
}

void check_action_shape(const Eigen::VectorXi& a, int n_k, int n_k1) {
    if (static_cast<Eigen::Index>(n_k) * n_k1 > a.size()) {
        std::ostringstream os;
        os << "action of length " << a.size() << " cannot hold a " << n_k << "x" << n_k1 << " block";
        throw ShapeError(os.str());
    }
}

}  // namespace

bool ConstraintConfig::is_frozen(const Connection& c) const {
    if (frozen_paths.count(c)) return true;
    return std::any_of(kept.begin(), kept.end(), [&](const KeptNeuron& k) { return k.path.count(c) > 0; });
}

bool ConstraintConfig::is_blocked(const Connection& c) const {
    if (blocked.count(c)) return true;
    return std::any_of(kept.begin(), kept.end(), [&](const KeptNeuron& k) { return k.sealed.count(c) > 0; });
}

void ConstraintConfig::validate() const {
    if (max_factors_per_neuron < 1) throw std::invalid_argument("max_factors_per_neuron must be >= 1");
    if (max_terms_per_neuron < 1) throw std::invalid_argument("max_terms_per_neuron must be >= 1");
    if (!(corr_keep_threshold > 0.0 && corr_keep_threshold <= 1.0)) {
        throw std::invalid_argument("corr_keep_threshold must lie in (0, 1]");
    }
    for (const auto& c : frozen_paths) {
        if (blocked.count(c)) throw std::invalid_argument("a connection is both frozen and blocked");
    }
}

StateVec transition(const StateVec& s, const Eigen::VectorXi& a, int n_k, int n_k1) {
    check_action_shape(a, n_k, n_k1);
    if (s.values.size() < std::max(n_k, n_k1)) throw ShapeError("state shorter than the layer it describes");
    StateVec next;
    next.stage = s.stage + 1;
    next.values = Eigen::VectorXi::Zero(s.values.size());
    next.values.head(n_k1) = indicator_from_action(a, n_k, n_k1).transpose() * s.values.head(n_k);
    return next;
}

IndicatorMatrix indicator_from_action(const Eigen::VectorXi& a, int n_k, int n_k1) {
    check_action_shape(a, n_k, n_k1);
    IndicatorMatrix z(n_k, n_k1);
    for (int i = 0; i < n_k; ++i) {
        for (int j = 0; j < n_k1; ++j) z(i, j) = a(action_index(i, j, n_k1));
    }
    return z;
}

Eigen::VectorXi action_from_indicator(const IndicatorMatrix& z, int n_a) {
    const auto n_k = static_cast<int>(z.rows());
    const auto n_k1 = static_cast<int>(z.cols());
    if (n_k * n_k1 > n_a) throw ShapeError("indicator does not fit in the action vector");
    Eigen::VectorXi a = Eigen::VectorXi::Zero(n_a);
    for (int i = 0; i < n_k; ++i) {
        for (int j = 0; j < n_k1; ++j) a(action_index(i, j, n_k1)) = z(i, j);
    }
    return a;
}

Eigen::VectorXi discretize(const Eigen::VectorXd& relaxed) {
    return (relaxed.array() >= 0.5).cast<int>();
}

std::string_view reject_reason_name(RejectReason reason) {
    switch (reason) {
        case RejectReason::None: return "none";
        case RejectReason::Static: return "static";
        case RejectReason::Frozen: return "frozen";
        case RejectReason::Blocked: return "blocked";
        case RejectReason::ZeroFanIn: return "zero_fan_in";
        case RejectReason::DeadSource: return "dead_source";
    }
    return "unknown";
}

ConstraintCheck check_constraints(const StateVec& s, const StateVec& s_next, const Eigen::VectorXi& a,
                                  const ConstraintConfig& cfg, const StageInfo& info) {
    (void)s_next;
    check_action_shape(a, info.n_from, info.n_to);
    for (Eigen::Index p = static_cast<Eigen::Index>(info.n_from) * info.n_to; p < a.size(); ++p) {
        if (a(p) != 0) throw ShapeError("padding entries of an action must be zero");
    }
    const int cap = fan_in_cap(cfg, info.to_kind);
    int total = 0;
    for (int j = 0; j < info.n_to; ++j) {
        int fan_in = 0;
        for (int i = 0; i < info.n_from; ++i) {
            const bool on = a(action_index(i, j, info.n_to)) != 0;
            const Connection c{info.stage, i, j};
            if (!on && cfg.is_frozen(c)) {
                return {RejectReason::Frozen, "frozen connection " + std::to_string(i) + "->" + std::to_string(j) +
                                                  " dropped"};
            }
            if (!on) continue;
            if (cfg.is_blocked(c)) {
                return {RejectReason::Blocked, "blocked connection " + std::to_string(i) + "->" + std::to_string(j)};
            }
            if (s.values(i) == 0) {
                return {RejectReason::DeadSource, "neuron " + std::to_string(i) + " carries no input path"};
            }
            ++fan_in;
        }
        if (fan_in > cap) {
            return {RejectReason::Static, "neuron " + std::to_string(j) + " has " + std::to_string(fan_in) +
                                              " inputs, cap " + std::to_string(cap)};
        }
        if (fan_in == 0 && info.required_targets[idx(j)]) {
            return {RejectReason::ZeroFanIn, "neuron " + std::to_string(j) + " has no inputs"};
        }
        total += fan_in;
    }
    // later stages need at least one live neuron to connect from
    if (total == 0) return {RejectReason::ZeroFanIn, "no neuron at stage " + std::to_string(info.stage) + " has inputs"};
    return {};
}

SearchSpace::SearchSpace(LocalStructure templ, std::vector<int> searched)
    : templ_(std::move(templ)), searched_(std::move(searched)) {
    templ_.validate();
    std::sort(searched_.begin(), searched_.end());
    if (searched_.empty()) throw std::invalid_argument("at least one stage must be searched");
    if (std::adjacent_find(searched_.begin(), searched_.end()) != searched_.end()) {
        throw std::invalid_argument("searched stages must be distinct");
    }
    const int k_layers = templ_.depth();
    if (searched_.front() < 1 || searched_.back() >= k_layers) {
        throw std::invalid_argument("searched stages must lie in 1..K-1");
    }
    for (int k = 0; k <= k_layers; ++k) n_s_ = std::max(n_s_, templ_.layer_sizes[idx(k)]);
    for (int k = 0; k < k_layers; ++k) {
        n_a_ = std::max(n_a_, templ_.layer_sizes[idx(k)] * templ_.layer_sizes[idx(k) + 1]);
    }
    for (int stage : searched_) {
        if (templ_.layer_kinds[idx(stage)] == LayerKind::Activation) {
            throw std::invalid_argument("activation fan-out stages are fixed and cannot be searched");
        }
    }
    const auto used = templ_.used_mask();
    for (int stage : searched_) {
        StageInfo info;
        info.stage = stage;
        info.n_from = templ_.layer_sizes[idx(stage)];
        info.n_to = templ_.layer_sizes[idx(stage) + 1];
        info.to_kind = templ_.layer_kinds[idx(stage)];
        if (stage == k_layers - 1) {
            info.required_targets.assign(idx(info.n_to), true);
        } else if (!std::binary_search(searched_.begin(), searched_.end(), stage + 1)) {
            info.required_targets = used[idx(stage) + 1];
        } else {
            info.required_targets.assign(idx(info.n_to), false);
        }
        infos_.push_back(std::move(info));
    }
}

SearchSpace SearchSpace::standard(const SymbolLibrary& library, int n_inputs, int mult_neurons, int n_outputs) {
    return SearchSpace(LocalStructure::standard(library, n_inputs, mult_neurons, n_outputs), {1, 2});
}

StateVec SearchSpace::initial_state() const {
    StateVec s;
    s.stage = 0;
    s.values = Eigen::VectorXi::Zero(n_s_);
    s.values.head(templ_.n_inputs()).setOnes();
    return s;
}

StateVec SearchSpace::advance_fixed(StateVec s) const {
    while (s.stage < templ_.depth() && position_of(s.stage) < 0) {
        const auto k = idx(s.stage);
        const auto a = action_from_indicator(templ_.indicators[k], n_a_);
        s = transition(s, a, templ_.layer_sizes[k], templ_.layer_sizes[k + 1]);
    }
    return s;
}

int SearchSpace::position_of(int stage) const {
    const auto it = std::find(searched_.begin(), searched_.end(), stage);
    return it == searched_.end() ? -1 : static_cast<int>(it - searched_.begin());
}

Eigen::VectorXd SearchSpace::icnn_input(const StateVec& s, const Eigen::VectorXd& action) const {
    if (s.values.size() != n_s_ || action.size() != n_a_) throw ShapeError("state or action has the wrong length");
    const int pos = position_of(s.stage);
    if (pos < 0) throw std::invalid_argument("state is not at a searched stage");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(icnn_input_dim());
    u.head(n_s_) = s.values.cast<double>();
    u(n_s_ + pos) = 1.0;
    u.tail(n_a_) = action;
    return u;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> SearchSpace::action_bounds(int position,
                                                                      const ConstraintConfig& cfg) const {
    const auto& info = infos_.at(idx(position));
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(n_a_);
    Eigen::VectorXd hi = Eigen::VectorXd::Zero(n_a_);
    for (int i = 0; i < info.n_from; ++i) {
        for (int j = 0; j < info.n_to; ++j) {
            const int p = action_index(i, j, info.n_to);
            const Connection c{info.stage, i, j};
            if (cfg.is_frozen(c)) {
                lo(p) = 1.0;
                hi(p) = 1.0;
            } else if (!cfg.is_blocked(c)) {
                hi(p) = 1.0;
            }
        }
    }
    return {lo, hi};
}

LocalStructure SearchSpace::build(const std::vector<Eigen::VectorXi>& actions) const {
    if (actions.size() != searched_.size()) throw ShapeError("one action per searched stage is required");
    LocalStructure s = templ_;
    for (std::size_t p = 0; p < searched_.size(); ++p) {
        const auto& info = infos_[p];
        s.indicators[idx(info.stage)] = indicator_from_action(actions[p], info.n_from, info.n_to);
    }
    return s;
}

std::optional<Eigen::VectorXi> random_valid_action(const SearchSpace& space, int position, const StateVec& s,
                                                   const ConstraintConfig& cfg, std::mt19937_64& rng,
                                                   int max_draws) {
    const auto& info = space.info(position);
    const int cap = fan_in_cap(cfg, info.to_kind);
    for (int draw = 0; draw < max_draws; ++draw) {
        Eigen::VectorXi a = Eigen::VectorXi::Zero(space.n_a());
        bool ok = true;
        for (int j = 0; j < info.n_to && ok; ++j) {
            std::vector<int> forced;
            std::vector<int> free;
            for (int i = 0; i < info.n_from; ++i) {
                const Connection c{info.stage, i, j};
                if (cfg.is_frozen(c)) {
                    forced.push_back(i);
                } else if (!cfg.is_blocked(c) && s.values(i) > 0) {
                    free.push_back(i);
                }
            }
            const int lo = std::max(info.required_targets[idx(j)] ? 1 : 0, static_cast<int>(forced.size()));
            const int hi = std::min(cap, static_cast<int>(forced.size() + free.size()));
            if (lo > hi) {
                ok = false;
                break;
            }
            const int size = std::uniform_int_distribution<int>(lo, hi)(rng);
            std::shuffle(free.begin(), free.end(), rng);
            for (int i : forced) a(action_index(i, j, info.n_to)) = 1;
            for (int n = 0; n < size - static_cast<int>(forced.size()); ++n) {
                a(action_index(free[idx(n)], j, info.n_to)) = 1;
            }
        }
        if (!ok) continue;
        const auto next = transition(s, a, info.n_from, info.n_to);
        if (check_constraints(s, next, a, cfg, info).accepted()) return a;
    }
    return std::nullopt;
}

Eigen::VectorXi repair_action(const SearchSpace& space, int position, const StateVec& s,
                              const Eigen::VectorXd& relaxed, const ConstraintConfig& cfg) {
    const auto& info = space.info(position);
    const int cap = fan_in_cap(cfg, info.to_kind);
    Eigen::VectorXi a = Eigen::VectorXi::Zero(space.n_a());
    for (int j = 0; j < info.n_to; ++j) {
        std::vector<int> chosen;
        std::vector<int> candidates;
        for (int i = 0; i < info.n_from; ++i) {
            const Connection c{info.stage, i, j};
            if (cfg.is_frozen(c)) {
                chosen.push_back(i);
            } else if (!cfg.is_blocked(c) && s.values(i) > 0) {
                candidates.push_back(i);
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(), [&](int x, int y) {
            return relaxed(action_index(x, j, info.n_to)) > relaxed(action_index(y, j, info.n_to));
        });
        for (int i : candidates) {
            if (static_cast<int>(chosen.size()) >= cap) break;
            if (relaxed(action_index(i, j, info.n_to)) >= 0.5) chosen.push_back(i);
        }
        if (chosen.empty() && info.required_targets[idx(j)] && !candidates.empty()) {
            chosen.push_back(candidates.front());
        }
        for (int i : chosen) a(action_index(i, j, info.n_to)) = 1;
    }
    if (a.isZero()) {
        // keep one connection alive: the highest-valued live, unblocked entry
        int best = -1;
        for (int i = 0; i < info.n_from; ++i) {
            if (s.values(i) == 0) continue;
            for (int j = 0; j < info.n_to; ++j) {
                const int p = action_index(i, j, info.n_to);
                if (cfg.is_blocked(Connection{info.stage, i, j})) continue;
                if (best < 0 || relaxed(p) > relaxed(best)) best = p;
            }
        }
        if (best >= 0) a(best) = 1;
    }
    return a;
}

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ShapeError("pearson needs equal-length series");
    if (a.size() < 2) return std::nullopt;
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double va = da.square().sum();
    const double vb = db.square().sum();
    // relative guard so float noise on a constant series does not count as variance
    const double scale_a = a.cwiseAbs().maxCoeff();
    const double scale_b = b.cwiseAbs().maxCoeff();
    const double n = static_cast<double>(a.size());
    if (va <= n * 1e-24 * scale_a * scale_a || va == 0.0) return std::nullopt;
    if (vb <= n * 1e-24 * scale_b * scale_b || vb == 0.0) return std::nullopt;
    return std::clamp((da * db).sum() / std::sqrt(va * vb), -1.0, 1.0);
}

namespace {

/// Connections on every path from the inputs into neuron `n` of layer `layer`,
/// plus the sealing set for each neuron on those paths.
void collect_path(const LocalStructure& st, int layer, int n, std::set<Connection>& path,
                  std::set<Connection>& sealed) {
    if (layer == 0) return;
    const int k = layer - 1;
    const auto& z = st.indicators[idx(k)];
    for (int i = 0; i < z.rows(); ++i) {
        const Connection c{k, i, n};
        if (z(i, n)) {
            if (path.insert(c).second) collect_path(st, k, i, path, sealed);
        } else if (st.layer_kinds[idx(k)] != LayerKind::Activation) {
            sealed.insert(c);
        }
    }
}

}  // namespace

ConstraintConfig update_frozen_paths(const ConstraintConfig& cfg, const LocalStructure& structure,
                                     const Eigen::MatrixXd& last_hidden, const Eigen::MatrixXd& targets,
                                     std::vector<FreezeEvent>* events) {
    const int k_last = structure.depth() - 1;
    const auto& z = structure.indicators[idx(k_last)];
    if (last_hidden.cols() != z.rows() || targets.cols() != z.cols() || last_hidden.rows() != targets.rows()) {
        throw ShapeError("layer outputs and targets do not match the structure");
    }
    ConstraintConfig out = cfg;
    // kept neurons are re-scored every call; one that no longer correlates is released
    for (auto it = out.kept.begin(); it != out.kept.end();) {
        std::optional<double> r;
        if (it->neuron < z.rows() && it->output < z.cols() && z(it->neuron, it->output)) {
            r = pearson(last_hidden.col(it->neuron), targets.col(it->output));
        }
        if (r && std::abs(*r) > cfg.corr_keep_threshold) {
            it->correlation = std::abs(*r);
            ++it;
        } else {
            it = out.kept.erase(it);
        }
    }
    for (int o = 0; o < z.cols(); ++o) {
        int best = -1;
        double best_corr = 0.0;
        for (int n = 0; n < z.rows(); ++n) {
            if (!z(n, o)) continue;
            const auto r = pearson(last_hidden.col(n), targets.col(o));
            if (!r || std::abs(*r) <= cfg.corr_keep_threshold) continue;
            if (best < 0 || std::abs(*r) > best_corr) {
                best = n;
                best_corr = std::abs(*r);
            }
        }
        if (best < 0) continue;
        auto it = std::find_if(out.kept.begin(), out.kept.end(), [&](const KeptNeuron& k) { return k.output == o; });
        if (it != out.kept.end()) {
            if (it->neuron == best || best_corr <= it->correlation) continue;
        }
        KeptNeuron kept;
        kept.output = o;
        kept.neuron = best;
        kept.correlation = best_corr;
        collect_path(structure, k_last, best, kept.path, kept.sealed);
        kept.path.insert({k_last, best, o});
        // a kept neuron must not be sealed against by another output's entry, nor seal it
        bool conflict = false;
        for (const auto& other : out.kept) {
            if (other.output == o) continue;
            for (const auto& c : kept.path) conflict = conflict || other.sealed.count(c) > 0;
            for (const auto& c : kept.sealed) conflict = conflict || other.path.count(c) > 0;
        }
        if (conflict) continue;
        if (it != out.kept.end()) out.kept.erase(it);
        out.kept.push_back(std::move(kept));
        if (events) events->push_back({o, best, best_corr});
    }
    return out;
}

}  // namespace consol
