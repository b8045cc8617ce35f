#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "consol/datasets.hpp"
#include "consol/equation.hpp"
#include "consol/icnn.hpp"
#include "consol/local_net.hpp"
#include "consol/search_mdp.hpp"

namespace consol {

struct QLearnConfig {
    double gamma = 0.2;
    double epsilon = 0.4;
    int max_episodes = 600;
    double stop_lambda = 1e-2;
    int target_update_interval = 10;
    int buffer_capacity = 10000;
    int minibatch_size = 100;
    double q_lr = 5e-3;
    double r_lr = 5e-3;
    int q_epochs = 50;
    int r_epochs = 50;
    std::vector<int> icnn_hidden{16, 16};
    BoxOptions box{3, 200, 1e-9};
    int retry_cap = 20;
    int random_draws = 50;
    int polish_epochs = 500;
    bool dynamic_constraint = true;
    bool simplify = true;
    int simplify_epochs = 100;
    double simplify_tolerance = 0.05;  // relative NRMSE slack for dropping a connection

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

struct Transition {
    StateVec s;
    Eigen::VectorXd a;  // 0/1 entries for discrete actions
    bool relaxed = false;
    StateVec s_next;
    double reward = 0.0;
    bool terminal = false;
};

/// FIFO ring of transitions with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity);

    void push(Transition t);
    int size() const { return static_cast<int>(items_.size()); }
    int capacity() const { return capacity_; }
    const std::deque<Transition>& items() const { return items_; }

    /// `n` distinct transitions drawn uniformly (all of them if n >= size()).
    std::vector<Transition> sample(int n, std::mt19937_64& rng) const;

private:
    int capacity_;
    std::deque<Transition> items_;
};

/// Networks for -Q, its target copy, and -R.
struct Agent {
    IcnnParams neg_q;
    IcnnParams neg_q_target;
    IcnnParams neg_r;

    static Agent init(const SearchSpace& space, const std::vector<int>& hidden, std::mt19937_64& rng);
};

struct StageChoice {
    Eigen::VectorXd relaxed;   // optimizer output, or the random action itself
    Eigen::VectorXi discrete;
    bool random = false;
    bool repaired = false;
    int rejects = 0;
};

struct EpisodeLog {
    int t = 0;
    std::vector<StageChoice> stages;
    double reward = 0.0;
    double nrmse = 0.0;
    int rejects = 0;
    double seconds = 0.0;
    bool aborted = false;
    std::string abort_reason;
    std::vector<FreezeEvent> freezes;
    double best_reward = 0.0;
};

struct EpisodeResult {
    LocalStructure structure;
    LocalWeights weights;
    std::vector<StateVec> states;  // state at each searched stage
    std::vector<StageChoice> stages;
    std::vector<Transition> transitions;  // discrete pairs, rewards set to R_t
    double reward = 0.0;
    double nrmse = 0.0;
    int rejects = 0;
};

/// Fit failures and non-finite predictions map to this NRMSE.
inline constexpr double kFailedNrmse = 1e6;

/// Training-set NRMSE of a fitted model; kFailedNrmse on domain errors or overflow.
double model_nrmse(const LocalStructure& structure, const LocalWeights& weights, const Dataset& data);

/// Trains LoCaL on the structure and scores it. Returns (weights, nrmse).
std::pair<LocalWeights, double> score_structure(const LocalStructure& structure, const TrainConfig& train,
                                                const Dataset& data);

/// Picks one action per searched stage (epsilon-greedy over the -Q
/// minimizer), builds and trains the LoCaL and scores it.
/// Throws EpisodeAborted when a stage exhausts its retry cap.
EpisodeResult rollout_episode(const IcnnParams& neg_q, const QLearnConfig& cfg, const SearchSpace& space,
                              const Dataset& data, const ConstraintConfig& constraints, const TrainConfig& train,
                              std::mt19937_64& rng);

/// Greedy (epsilon = 0) decoding without training: one action per stage.
std::vector<Eigen::VectorXi> decode_greedy(const IcnnParams& neg_q, const QLearnConfig& cfg,
                                           const SearchSpace& space, const ConstraintConfig& constraints,
                                           std::mt19937_64& rng);

/// Regresses -R on the episode's discrete (s, a) pairs toward -R_t.
IcnnParams reward_net_update(IcnnParams neg_r, const SearchSpace& space, const std::vector<Transition>& episode,
                             double reward, const QLearnConfig& cfg, std::mt19937_64& rng);

/// Bootstrapped target for one transition: R, or R + gamma * Q'(s', a*) with
/// a* the minimizer of -Q' over the box at s'.
double q_target(const Transition& t, const IcnnParams& neg_q_target, const SearchSpace& space,
                const ConstraintConfig& constraints, const QLearnConfig& cfg, std::mt19937_64& rng);

/// One fitted-Q step on a minibatch; no-op while the buffer is smaller than
/// the minibatch size.
IcnnParams q_net_update(IcnnParams neg_q, const IcnnParams& neg_q_target, const SearchSpace& space,
                        const ReplayBuffer& buffer, const ConstraintConfig& constraints, const QLearnConfig& cfg,
                        std::mt19937_64& rng);

struct SimplifyResult {
    LocalStructure structure;
    LocalWeights weights;
    double nrmse = 0.0;
    int removed = 0;
};

/// Drops searched connections one at a time (output links first), refitting
/// after each, and keeps a removal when the training NRMSE stays within
/// (1 + rel_tol) * reference + 1e-9 of the starting model's.
SimplifyResult simplify_structure(const SearchSpace& space, LocalStructure structure, LocalWeights weights,
                                  const TrainConfig& refit, const Dataset& data, double rel_tol);

struct SearchResult {
    LocalStructure best_structure;
    LocalWeights best_weights;     // after the final polish
    double best_reward = 0.0;      // episode reward of the winner
    double polished_nrmse = 0.0;   // training NRMSE after the polish
    int simplified_connections = 0;
    int best_episode = 0;
    CanonicalEquation equation;
    std::vector<EpisodeLog> logs;
    Agent agent;
    ConstraintConfig constraints;
    int episodes_run = 0;
    bool stopped_early = false;
};

struct SearchHooks {
    /// Called after every episode with the current networks.
    std::function<void(const EpisodeLog&, const Agent&)> on_episode;
};

/// The search loop: episodes of rollout, reward-network and Q-network updates,
/// target copies every T0 episodes, early stop at |R_t - 1| <= lambda, then
/// a longer fit of the best structure and, if enabled, simplification.
SearchResult run_search(const QLearnConfig& cfg, const SearchSpace& space, const Dataset& data,
                        const TrainConfig& train, ConstraintConfig constraints, std::uint64_t seed,
                        const SearchHooks& hooks = {});

/// Bits of the searched actions as '0'/'1' strings joined by '|'.
std::string action_bits(const SearchSpace& space, const std::vector<StageChoice>& stages);

}  // namespace consol
