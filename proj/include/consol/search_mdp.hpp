#pragma once

#include <Eigen/Dense>
#include <compare>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "consol/local_net.hpp"

namespace consol {

/// Path counts at one layer, zero-padded to n_s.
struct StateVec {
    Eigen::VectorXi values;
    int stage = 0;

    bool operator==(const StateVec& other) const {
        return stage == other.stage && values == other.values;
    }
};

/// One connection i -> j between layer `stage` and layer `stage + 1`.
struct Connection {
    int stage = 0;
    int from = 0;
    int to = 0;

    auto operator<=>(const Connection&) const = default;
};

/// A last-hidden-layer neuron kept for an output by the dynamic constraint.
struct KeptNeuron {
    int output = 0;
    int neuron = 0;
    double correlation = 0.0;
    std::set<Connection> path;     // upstream connections plus the link to the output
    std::set<Connection> sealed;   // other inputs of kept product neurons
};

struct ConstraintConfig {
    int max_factors_per_neuron = 3;  // fan-in cap for product neurons
    int max_terms_per_neuron = 3;    // fan-in cap for summation neurons
    double corr_keep_threshold = 0.99;
    std::set<Connection> frozen_paths;  // pinned to 1 by configuration
    std::set<Connection> blocked;       // pinned to 0 by configuration
    std::vector<KeptNeuron> kept;       // at most one per output

    bool is_frozen(const Connection& c) const;
    bool is_blocked(const Connection& c) const;

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

/// Flat position of connection i -> j for a layer pair with n_to targets.
inline int action_index(int i, int j, int n_to) { return i * n_to + j; }

/// s' = Mat(a)^T s where Mat(a) is the leading n_k x n_k1 block.
StateVec transition(const StateVec& s, const Eigen::VectorXi& a, int n_k, int n_k1);

IndicatorMatrix indicator_from_action(const Eigen::VectorXi& a, int n_k, int n_k1);

/// Inverse of indicator_from_action, padded with zeros to length n_a.
Eigen::VectorXi action_from_indicator(const IndicatorMatrix& z, int n_a);

/// 1 where the relaxed entry is >= 0.5.
Eigen::VectorXi discretize(const Eigen::VectorXd& relaxed);

enum class RejectReason { None, Static, Frozen, Blocked, ZeroFanIn, DeadSource };

std::string_view reject_reason_name(RejectReason reason);

struct ConstraintCheck {
    RejectReason reason = RejectReason::None;
    std::string detail;

    bool accepted() const { return reason == RejectReason::None; }
};

/// Shape of one searched stage.
struct StageInfo {
    int stage = 0;
    int n_from = 0;
    int n_to = 0;
    LayerKind to_kind = LayerKind::Summation;
    std::vector<bool> required_targets;  // targets that must receive at least one input
};

/// Checks a discrete action at a stage: fan-in caps, frozen and blocked
/// connections, no connections out of neurons that carry no path, at least
/// one input into every required target, and at least one connection overall.
ConstraintCheck check_constraints(const StateVec& s, const StateVec& s_next, const Eigen::VectorXi& a,
                                  const ConstraintConfig& cfg, const StageInfo& info);

/// The searchable part of a LoCaL template.
///
/// Stages listed in `searched` have their indicators chosen by the agent;
/// all others keep the template's indicators.
class SearchSpace {
public:
    SearchSpace(LocalStructure templ, std::vector<int> searched);

    /// Default three-layer search over both product and summation wiring.
    static SearchSpace standard(const SymbolLibrary& library, int n_inputs, int mult_neurons, int n_outputs);

    const LocalStructure& templ() const { return templ_; }
    const std::vector<int>& searched() const { return searched_; }
    int n_s() const { return n_s_; }
    int n_a() const { return n_a_; }
    int n_searched() const { return static_cast<int>(searched_.size()); }
    const StageInfo& info(int position) const { return infos_[static_cast<std::size_t>(position)]; }

    /// s_0 = [1..1, 0..0] at stage 0.
    StateVec initial_state() const;

    /// Applies template indicators of non-searched stages until reaching a
    /// searched stage or the output layer.
    StateVec advance_fixed(StateVec s) const;

    /// State at the first searched stage.
    StateVec start_state() const { return advance_fixed(initial_state()); }

    /// Position of `stage` in searched(), or -1.
    int position_of(int stage) const;

    /// ICNN input: state, one-hot of the searched-stage position, then action.
    int icnn_input_dim() const { return n_s_ + n_searched() + n_a_; }
    Eigen::VectorXd icnn_input(const StateVec& s, const Eigen::VectorXd& action) const;

    /// Box bounds for the relaxed action at `position`: padding and blocked
    /// entries are [0,0], frozen entries [1,1], the rest [0,1].
    std::pair<Eigen::VectorXd, Eigen::VectorXd> action_bounds(int position, const ConstraintConfig& cfg) const;

    /// Template with the given discrete actions written into the searched stages.
    LocalStructure build(const std::vector<Eigen::VectorXi>& actions) const;

private:
    LocalStructure templ_;
    std::vector<int> searched_;
    std::vector<StageInfo> infos_;
    int n_s_ = 0;
    int n_a_ = 0;
};

/// Draws a constraint-valid action at `position` by choosing, per target, a
/// fan-in size and then a uniform subset of live sources. Frozen connections
/// are always included and blocked ones never. Returns nullopt when the
/// draw fails the full check `max_draws` times.
std::optional<Eigen::VectorXi> random_valid_action(const SearchSpace& space, int position, const StateVec& s,
                                                   const ConstraintConfig& cfg, std::mt19937_64& rng,
                                                   int max_draws = 50);

/// Makes a relaxed action valid where possible: keeps the highest-valued
/// inputs per target up to the cap, drops dead sources and fills empty
/// required targets with their best live source.
Eigen::VectorXi repair_action(const SearchSpace& space, int position, const StateVec& s,
                              const Eigen::VectorXd& relaxed, const ConstraintConfig& cfg);

struct FreezeEvent {
    int output = 0;
    int neuron = 0;
    double correlation = 0.0;
};

/// Pearson correlation; nullopt when either series has zero variance.
std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Dynamic constraint. For every output, the last-hidden-layer neurons summed
/// into it are correlated with the target; the best one above the threshold
/// has its whole upstream path and its link to the output frozen. If the
/// output already has a frozen neuron, it is replaced only by a neuron with
/// a strictly higher correlation, and released when its own correlation
/// falls to the threshold or below. Other inputs of frozen product neurons are
/// blocked so the kept factor set stays intact.
ConstraintConfig update_frozen_paths(const ConstraintConfig& cfg, const LocalStructure& structure,
                                     const Eigen::MatrixXd& last_hidden, const Eigen::MatrixXd& targets,
                                     std::vector<FreezeEvent>* events = nullptr);

}  // namespace consol
