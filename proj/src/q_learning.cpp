#include "consol/q_learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "consol/errors.hpp"
#include "consol/metrics.hpp"

namespace consol {

void QLearnConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
    if (!(stop_lambda > 0.0)) throw std::invalid_argument("stop_lambda must be positive");
    if (target_update_interval < 1) throw std::invalid_argument("target_update_interval must be >= 1");
    if (max_episodes < 1) throw std::invalid_argument("max_episodes must be >= 1");
    if (buffer_capacity < 1 || minibatch_size < 1) throw std::invalid_argument("buffer and minibatch must be >= 1");
    if (!(q_lr > 0.0) || !(r_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (q_epochs < 0 || r_epochs < 0 || polish_epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (box.restarts < 1 || box.steps < 1) throw std::invalid_argument("box restarts and steps must be >= 1");
    if (retry_cap < 1 || random_draws < 1) throw std::invalid_argument("retry caps must be >= 1");
    for (int h : icnn_hidden) {
        if (h < 1) throw std::invalid_argument("icnn hidden widths must be >= 1");
    }
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("replay capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
    if (size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<Transition> ReplayBuffer::sample(int n, std::mt19937_64& rng) const {
    std::vector<std::size_t> order(items_.size());
    std::iota(order.begin(), order.end(), 0);
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), order.size());
    // partial Fisher-Yates
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<Transition> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(items_[order[i]]);
    return out;
}

Agent Agent::init(const SearchSpace& space, const std::vector<int>& hidden, std::mt19937_64& rng) {
    Agent a;
    a.neg_q = IcnnParams::init(space.icnn_input_dim(), hidden, rng);
    a.neg_q_target = a.neg_q;
    a.neg_r = IcnnParams::init(space.icnn_input_dim(), hidden, rng);
    return a;
}

namespace {

BoxResult minimize_action(const IcnnParams& net, const SearchSpace& space, const StateVec& s,
                          const ConstraintConfig& constraints, const BoxOptions& box, std::mt19937_64& rng) {
    const int pos = space.position_of(s.stage);
    const auto [lo, hi] = space.action_bounds(pos, constraints);
    Eigen::VectorXd u = space.icnn_input(s, Eigen::VectorXd::Zero(space.n_a()));
    const Eigen::Index off = u.size() - space.n_a();
    Eigen::VectorXd full;
    BoxObjective f = [&](const Eigen::VectorXd& a, Eigen::VectorXd& grad) {
        u.tail(a.size()) = a;
        const double v = icnn_value_and_input_grad(net, u, full);
        grad = full.segment(off, a.size());
        return v;
    };
    return minimize_box(f, lo, hi, box, rng);
}

bool valid(const SearchSpace& space, int pos, const StateVec& s, const Eigen::VectorXi& a,
           const ConstraintConfig& constraints) {
    const auto& info = space.info(pos);
    const auto next = transition(s, a, info.n_from, info.n_to);
    return check_constraints(s, next, a, constraints, info).accepted();
}

StageChoice choose_action(const IcnnParams& neg_q, const QLearnConfig& cfg, const SearchSpace& space, int pos,
                          const StateVec& s, const ConstraintConfig& constraints, bool explore,
                          std::mt19937_64& rng) {
    StageChoice ch;
    bool random = explore && std::bernoulli_distribution(cfg.epsilon)(rng);
    for (int attempt = 0; attempt < cfg.retry_cap; ++attempt) {
        if (!random) {
            ch.relaxed = minimize_action(neg_q, space, s, constraints, cfg.box, rng).a_star;
            ch.discrete = discretize(ch.relaxed);
            if (valid(space, pos, s, ch.discrete, constraints)) return ch;
            ++ch.rejects;
            ch.discrete = repair_action(space, pos, s, ch.relaxed, constraints);
            if (valid(space, pos, s, ch.discrete, constraints)) {
                ch.repaired = true;
                return ch;
            }
            ++ch.rejects;
            random = true;
            continue;
        }
        if (auto a = random_valid_action(space, pos, s, constraints, rng, cfg.random_draws)) {
            ch.random = true;
            ch.discrete = *a;
            ch.relaxed = a->cast<double>();
            return ch;
        }
        ++ch.rejects;
    }
    throw EpisodeAborted("no valid action at stage " + std::to_string(s.stage) + " after " +
                         std::to_string(cfg.retry_cap) + " attempts");
}

}  // namespace

double model_nrmse(const LocalStructure& structure, const LocalWeights& weights, const Dataset& data) {
    try {
        const Eigen::MatrixXd pred = predict(structure, weights, data.X);
        if (!pred.allFinite()) return kFailedNrmse;
        const double value = nrmse(pred, data.Y, data.meta.sigma_y);
        return std::isfinite(value) ? std::min(value, kFailedNrmse) : kFailedNrmse;
    } catch (const DomainError&) {
        return kFailedNrmse;
    }
}

SimplifyResult simplify_structure(const SearchSpace& space, LocalStructure structure, LocalWeights weights,
                                  const TrainConfig& refit, const Dataset& data, double rel_tol) {
    SimplifyResult out;
    const double reference = model_nrmse(structure, weights, data);
    double current = reference;
    const double limit = reference * (1.0 + rel_tol) + 1e-9;
    std::vector<int> stages = space.searched();
    std::sort(stages.rbegin(), stages.rend());
    bool changed = true;
    while (changed) {
        changed = false;
        for (int k : stages) {
            const auto used = structure.used_mask();
            const auto& z = structure.indicators[static_cast<std::size_t>(k)];
            for (int i = 0; i < z.rows() && !changed; ++i) {
                for (int j = 0; j < z.cols() && !changed; ++j) {
                    if (!z(i, j) || !used[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(j)]) continue;
                    LocalStructure candidate = structure;
                    candidate.indicators[static_cast<std::size_t>(k)](i, j) = 0;
                    const auto cand_used = candidate.used_mask();
                    bool ok = true;
                    // every output and every used product neuron still needs an input
                    for (int layer = 1; layer <= candidate.depth() && ok; ++layer) {
                        const auto& zin = candidate.indicators[static_cast<std::size_t>(layer) - 1];
                        for (int n = 0; n < zin.cols() && ok; ++n) {
                            if (!cand_used[static_cast<std::size_t>(layer)][static_cast<std::size_t>(n)]) continue;
                            if (zin.col(n).sum() == 0) ok = false;
                        }
                    }
                    if (!ok) continue;
                    LocalWeights w = weights;
                    try {
                        w = fit_from(candidate, weights, refit, data.X, data.Y).weights;
                    } catch (const DomainError&) {
                        continue;
                    }
                    const double value = model_nrmse(candidate, w, data);
                    if (value <= limit) {
                        structure = std::move(candidate);
                        weights = std::move(w);
                        current = value;
                        ++out.removed;
                        changed = true;
                    }
                }
            }
            if (changed) break;
        }
    }
    out.structure = std::move(structure);
    out.weights = std::move(weights);
    out.nrmse = current;
    return out;
}

std::pair<LocalWeights, double> score_structure(const LocalStructure& structure, const TrainConfig& train,
                                                const Dataset& data) {
    try {
        auto fitted = fit(structure, train, data.X, data.Y);
        const Eigen::MatrixXd pred = predict(structure, fitted.weights, data.X);
        if (!pred.allFinite()) return {std::move(fitted.weights), kFailedNrmse};
        const double value = nrmse(pred, data.Y, data.meta.sigma_y);
        return {std::move(fitted.weights), std::isfinite(value) ? std::min(value, kFailedNrmse) : kFailedNrmse};
    } catch (const DomainError&) {
    } catch (const StructureError&) {
    }
    return {LocalWeights::filled(structure, train.init_value), kFailedNrmse};
}

EpisodeResult rollout_episode(const IcnnParams& neg_q, const QLearnConfig& cfg, const SearchSpace& space,
                              const Dataset& data, const ConstraintConfig& constraints, const TrainConfig& train,
                              std::mt19937_64& rng) {
    EpisodeResult ep;
    StateVec s = space.start_state();
    std::vector<Eigen::VectorXi> actions;
    for (int pos = 0; pos < space.n_searched(); ++pos) {
        const auto& info = space.info(pos);
        auto ch = choose_action(neg_q, cfg, space, pos, s, constraints, true, rng);
        StateVec next = space.advance_fixed(transition(s, ch.discrete, info.n_from, info.n_to));
        Transition tr;
        tr.s = s;
        tr.a = ch.discrete.cast<double>();
        tr.s_next = next;
        tr.terminal = pos + 1 == space.n_searched();
        ep.transitions.push_back(std::move(tr));
        ep.states.push_back(s);
        ep.rejects += ch.rejects;
        actions.push_back(ch.discrete);
        ep.stages.push_back(std::move(ch));
        s = std::move(next);
    }
    ep.structure = space.build(actions);
    auto [weights, value] = score_structure(ep.structure, train, data);
    ep.weights = std::move(weights);
    ep.nrmse = value;
    ep.reward = reward_from_nrmse(value);
    for (auto& tr : ep.transitions) tr.reward = ep.reward;
    return ep;
}

std::vector<Eigen::VectorXi> decode_greedy(const IcnnParams& neg_q, const QLearnConfig& cfg,
                                           const SearchSpace& space, const ConstraintConfig& constraints,
                                           std::mt19937_64& rng) {
    std::vector<Eigen::VectorXi> actions;
    StateVec s = space.start_state();
    for (int pos = 0; pos < space.n_searched(); ++pos) {
        const auto& info = space.info(pos);
        auto ch = choose_action(neg_q, cfg, space, pos, s, constraints, false, rng);
        s = space.advance_fixed(transition(s, ch.discrete, info.n_from, info.n_to));
        actions.push_back(std::move(ch.discrete));
    }
    return actions;
}

IcnnParams reward_net_update(IcnnParams neg_r, const SearchSpace& space, const std::vector<Transition>& episode,
                             double reward, const QLearnConfig& cfg, std::mt19937_64& rng) {
    if (episode.empty() || cfg.r_epochs == 0) return neg_r;
    std::vector<IcnnSample> samples;
    for (const auto& t : episode) samples.push_back({space.icnn_input(t.s, t.a), -reward});
    IcnnFitConfig fc;
    fc.learning_rate = cfg.r_lr;
    fc.epochs = cfg.r_epochs;
    fc.batch_size = static_cast<int>(samples.size());
    return icnn_fit(std::move(neg_r), samples, fc, rng);
}

double q_target(const Transition& t, const IcnnParams& neg_q_target, const SearchSpace& space,
                const ConstraintConfig& constraints, const QLearnConfig& cfg, std::mt19937_64& rng) {
    if (t.terminal) return t.reward;
    const auto best = minimize_action(neg_q_target, space, t.s_next, constraints, cfg.box, rng);
    return t.reward + cfg.gamma * (-best.value);
}

IcnnParams q_net_update(IcnnParams neg_q, const IcnnParams& neg_q_target, const SearchSpace& space,
                        const ReplayBuffer& buffer, const ConstraintConfig& constraints, const QLearnConfig& cfg,
                        std::mt19937_64& rng) {
    if (buffer.size() < cfg.minibatch_size || cfg.q_epochs == 0) return neg_q;
    const auto batch = buffer.sample(cfg.minibatch_size, rng);
    std::vector<IcnnSample> samples;
    samples.reserve(batch.size());
    for (const auto& t : batch) {
        samples.push_back({space.icnn_input(t.s, t.a), -q_target(t, neg_q_target, space, constraints, cfg, rng)});
    }
    IcnnFitConfig fc;
    fc.learning_rate = cfg.q_lr;
    fc.epochs = cfg.q_epochs;
    fc.batch_size = cfg.minibatch_size;
    return icnn_fit(std::move(neg_q), samples, fc, rng);
}

std::string action_bits(const SearchSpace& space, const std::vector<StageChoice>& stages) {
    std::string out;
    for (std::size_t p = 0; p < stages.size(); ++p) {
        if (p) out += '|';
        const auto& info = space.info(static_cast<int>(p));
        for (int i = 0; i < info.n_from * info.n_to; ++i) out += stages[p].discrete(i) ? '1' : '0';
    }
    return out;
}

SearchResult run_search(const QLearnConfig& cfg, const SearchSpace& space, const Dataset& data,
                        const TrainConfig& train, ConstraintConfig constraints, std::uint64_t seed,
                        const SearchHooks& hooks) {
    cfg.validate();
    constraints.validate();
    std::mt19937_64 rng(seed);
    SearchResult result;
    result.agent = Agent::init(space, cfg.icnn_hidden, rng);
    ReplayBuffer buffer(cfg.buffer_capacity);
    bool have_best = false;
    const int last_hidden = space.templ().depth() - 1;

    for (int t = 1; t <= cfg.max_episodes; ++t) {
        const auto start = std::chrono::steady_clock::now();
        EpisodeLog log;
        log.t = t;
        std::optional<EpisodeResult> ep;
        try {
            ep = rollout_episode(result.agent.neg_q, cfg, space, data, constraints, train, rng);
        } catch (const EpisodeAborted& e) {
            log.aborted = true;
            log.abort_reason = e.what();
        }
        if (ep) {
            result.agent.neg_r = reward_net_update(std::move(result.agent.neg_r), space, ep->transitions, ep->reward,
                                                   cfg, rng);
            for (std::size_t p = 0; p < ep->transitions.size(); ++p) {
                buffer.push(ep->transitions[p]);
                const auto& ch = ep->stages[p];
                if (ch.random) continue;
                Transition relaxed = ep->transitions[p];
                relaxed.a = ch.relaxed;
                relaxed.relaxed = true;
                relaxed.reward = -icnn_forward(result.agent.neg_r, space.icnn_input(relaxed.s, relaxed.a));
                buffer.push(std::move(relaxed));
            }
            result.agent.neg_q = q_net_update(std::move(result.agent.neg_q), result.agent.neg_q_target, space, buffer,
                                              constraints, cfg, rng);
            if (cfg.dynamic_constraint && ep->nrmse < kFailedNrmse) {
                try {
                    const Eigen::MatrixXd hidden = layer_outputs(ep->structure, ep->weights, data.X, last_hidden);
                    constraints = update_frozen_paths(constraints, ep->structure, hidden, data.Y, &log.freezes);
                } catch (const DomainError&) {
                }
            }
            if (!have_best || ep->reward > result.best_reward) {
                have_best = true;
                result.best_reward = ep->reward;
                result.best_structure = ep->structure;
                result.best_weights = ep->weights;
                result.best_episode = t;
            }
            log.stages = ep->stages;
            log.reward = ep->reward;
            log.nrmse = ep->nrmse;
            log.rejects = ep->rejects;
        }
        if (t % cfg.target_update_interval == 0) result.agent.neg_q_target = result.agent.neg_q;
        log.best_reward = result.best_reward;
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.logs.push_back(log);
        result.episodes_run = t;
        if (hooks.on_episode) hooks.on_episode(result.logs.back(), result.agent);
        if (ep && std::abs(ep->reward - 1.0) <= cfg.stop_lambda) {
            result.stopped_early = true;
            break;
        }
    }
    result.constraints = constraints;
    if (!have_best) throw EpisodeAborted("every episode aborted; no structure to report");

    TrainConfig polish = train;
    polish.epochs = cfg.polish_epochs;
    try {
        auto fitted = fit_from(result.best_structure, result.best_weights, polish, data.X, data.Y);
        result.best_weights = std::move(fitted.weights);
    } catch (const DomainError&) {
    }
    if (cfg.simplify) {
        TrainConfig refit = train;
        refit.epochs = cfg.simplify_epochs;
        auto simple = simplify_structure(space, result.best_structure, result.best_weights, refit, data,
                                         cfg.simplify_tolerance);
        if (simple.removed > 0) {
            result.best_structure = std::move(simple.structure);
            result.simplified_connections = simple.removed;
            try {
                result.best_weights = fit_from(result.best_structure, simple.weights, polish, data.X, data.Y).weights;
            } catch (const DomainError&) {
                result.best_weights = std::move(simple.weights);
            }
        }
    }
    result.polished_nrmse = model_nrmse(result.best_structure, result.best_weights, data);
    result.equation = extract_equation(result.best_structure, result.best_weights, kDefaultPruneThreshold);
    return result;
}

}  // namespace consol
