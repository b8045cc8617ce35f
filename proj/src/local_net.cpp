#include "consol/local_net.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "consol/errors.hpp"

namespace consol {

IndicatorMatrix activation_fanout(int n_in, int n_symbols) {
    IndicatorMatrix z = IndicatorMatrix::Zero(n_in, n_in * n_symbols);
    for (int i = 0; i < n_in; ++i) {
        for (int o = 0; o < n_symbols; ++o) z(i, i * n_symbols + o) = 1;
    }
    return z;
}

LocalStructure LocalStructure::layered(const SymbolLibrary& library, int n_inputs,
                                       const std::vector<LayerKind>& kinds_after_activation,
                                       const std::vector<int>& block_sizes) {
    if (kinds_after_activation.size() != block_sizes.size()) {
        throw StructureError("one size per layer after the activation layer is required");
    }
    LocalStructure s;
    s.library = library;
    s.layer_sizes = {n_inputs, n_inputs * library.size()};
    s.layer_kinds = {LayerKind::Activation};
    s.indicators = {activation_fanout(n_inputs, library.size())};
    for (std::size_t b = 0; b < block_sizes.size(); ++b) {
        const int prev = s.layer_sizes.back();
        const LayerKind kind = kinds_after_activation[b];
        const int next = kind == LayerKind::Activation ? prev * library.size() : block_sizes[b];
        s.layer_kinds.push_back(kind);
        s.layer_sizes.push_back(next);
        s.indicators.push_back(kind == LayerKind::Activation
                                   ? activation_fanout(prev, library.size())
                                   : IndicatorMatrix::Zero(prev, next));
    }
    s.validate();
    return s;
}

LocalStructure LocalStructure::standard(const SymbolLibrary& library, int n_inputs,
                                        int mult_neurons, int n_outputs) {
    return layered(library, n_inputs, {LayerKind::Multiplication, LayerKind::Summation},
                   {mult_neurons, n_outputs});
}

void LocalStructure::validate() const {
    const int k_layers = depth();
    if (k_layers < 1) throw StructureError("structure needs at least one layer");
    if (static_cast<int>(layer_sizes.size()) != k_layers + 1 ||
        static_cast<int>(indicators.size()) != k_layers) {
        throw StructureError("layer_sizes, layer_kinds and indicators disagree in length");
    }
    if (layer_kinds.front() != LayerKind::Activation) {
        throw StructureError("first layer must be an activation layer");
    }
    if (library.size() == 0) throw StructureError("empty symbol library");
    for (int k = 0; k < k_layers; ++k) {
        const auto& z = indicators[static_cast<std::size_t>(k)];
        const int n_in = layer_sizes[static_cast<std::size_t>(k)];
        const int n_out = layer_sizes[static_cast<std::size_t>(k) + 1];
        if (n_in <= 0 || n_out <= 0) throw StructureError("layer sizes must be positive");
        if (z.rows() != n_in || z.cols() != n_out) {
            std::ostringstream os;
            os << "indicator " << k << " has shape " << z.rows() << "x" << z.cols() << ", expected "
               << n_in << "x" << n_out;
            throw StructureError(os.str());
        }
        if ((z.array() != 0 && z.array() != 1).any()) {
            throw StructureError("indicator entries must be 0 or 1");
        }
        if (layer_kinds[static_cast<std::size_t>(k)] == LayerKind::Activation) {
            if (n_out != n_in * library.size() || z != activation_fanout(n_in, library.size())) {
                throw StructureError("activation layer must use the fixed fan-out block");
            }
        }
    }
}

std::vector<std::vector<bool>> LocalStructure::used_mask() const {
    const int k_layers = depth();
    std::vector<std::vector<bool>> used(static_cast<std::size_t>(k_layers) + 1);
    for (int k = 0; k <= k_layers; ++k) {
        used[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(layer_sizes[static_cast<std::size_t>(k)]),
                                                 false);
    }
    used.back().assign(used.back().size(), true);
    for (int k = k_layers - 1; k >= 0; --k) {
        const auto& z = indicators[static_cast<std::size_t>(k)];
        auto& here = used[static_cast<std::size_t>(k)];
        const auto& next = used[static_cast<std::size_t>(k) + 1];
        for (int i = 0; i < z.rows(); ++i) {
            for (int j = 0; j < z.cols(); ++j) {
                if (z(i, j) && next[static_cast<std::size_t>(j)]) {
                    here[static_cast<std::size_t>(i)] = true;
                    break;
                }
            }
        }
    }
    return used;
}

bool LocalStructure::operator==(const LocalStructure& other) const {
    return layer_sizes == other.layer_sizes && layer_kinds == other.layer_kinds &&
           indicators == other.indicators && library == other.library;
}

LocalWeights LocalWeights::filled(const LocalStructure& structure, double value) {
    LocalWeights w;
    const int k_layers = structure.depth();
    w.summation.resize(static_cast<std::size_t>(k_layers));
    w.inner.resize(static_cast<std::size_t>(k_layers));
    for (int k = 0; k < k_layers; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const int n_in = structure.layer_sizes[ku];
        const int n_out = structure.layer_sizes[ku + 1];
        switch (structure.layer_kinds[ku]) {
            case LayerKind::Summation:
                w.summation[ku] = Eigen::MatrixXd::Constant(n_in, n_out, value);
                break;
            case LayerKind::Activation: {
                w.inner[ku] = Eigen::VectorXd::Ones(n_out);
                const int p = structure.library.size();
                for (int n = 0; n < n_out; ++n) {
                    if (structure.library.op(n % p).has_inner_weight) w.inner[ku](n) = value;
                }
                break;
            }
            case LayerKind::Multiplication: break;
        }
    }
    return w;
}

LocalWeights LocalWeights::zeros_like(const LocalStructure& structure) {
    LocalWeights w = filled(structure, 0.0);
    for (auto& v : w.inner) v.setZero();
    return w;
}

std::vector<ParamRef> live_parameters(const LocalStructure& structure) {
    const auto used = structure.used_mask();
    std::vector<ParamRef> params;
    const int p = structure.library.size();
    for (int k = 0; k < structure.depth(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const auto& z = structure.indicators[ku];
        switch (structure.layer_kinds[ku]) {
            case LayerKind::Summation:
                for (int i = 0; i < z.rows(); ++i) {
                    for (int j = 0; j < z.cols(); ++j) {
                        if (z(i, j) && used[ku + 1][static_cast<std::size_t>(j)]) {
                            params.push_back({ParamRef::Kind::Summation, k, i, j});
                        }
                    }
                }
                break;
            case LayerKind::Activation:
                for (int n = 0; n < z.cols(); ++n) {
                    if (used[ku + 1][static_cast<std::size_t>(n)] &&
                        structure.library.op(n % p).has_inner_weight) {
                        params.push_back({ParamRef::Kind::Inner, k, n, 0});
                    }
                }
                break;
            case LayerKind::Multiplication: break;
        }
    }
    return params;
}

Eigen::VectorXd pack(const LocalWeights& weights, std::span<const ParamRef> params) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(params.size()));
    for (std::size_t n = 0; n < params.size(); ++n) {
        const auto& r = params[n];
        const auto ku = static_cast<std::size_t>(r.layer);
        v(static_cast<Eigen::Index>(n)) = r.kind == ParamRef::Kind::Summation
                                              ? weights.summation[ku](r.row, r.col)
                                              : weights.inner[ku](r.row);
    }
    return v;
}

void unpack(LocalWeights& weights, std::span<const ParamRef> params, const Eigen::VectorXd& values) {
    if (values.size() != static_cast<Eigen::Index>(params.size())) {
        throw ShapeError("parameter vector length does not match layout");
    }
    for (std::size_t n = 0; n < params.size(); ++n) {
        const auto& r = params[n];
        const auto ku = static_cast<std::size_t>(r.layer);
        const double value = values(static_cast<Eigen::Index>(n));
        if (r.kind == ParamRef::Kind::Summation) {
            weights.summation[ku](r.row, r.col) = value;
        } else {
            weights.inner[ku](r.row) = value;
        }
    }
}

namespace {

void check_weight_shapes(const LocalStructure& s, const LocalWeights& w) {
    const auto k_layers = static_cast<std::size_t>(s.depth());
    if (w.summation.size() != k_layers || w.inner.size() != k_layers) {
        throw ShapeError("weights do not match structure depth");
    }
    for (std::size_t k = 0; k < k_layers; ++k) {
        const int n_in = s.layer_sizes[k];
        const int n_out = s.layer_sizes[k + 1];
        if (s.layer_kinds[k] == LayerKind::Summation &&
            (w.summation[k].rows() != n_in || w.summation[k].cols() != n_out)) {
            throw ShapeError("summation weight shape mismatch at layer " + std::to_string(k));
        }
        if (s.layer_kinds[k] == LayerKind::Activation && w.inner[k].size() != n_out) {
            throw ShapeError("inner weight length mismatch at layer " + std::to_string(k));
        }
    }
}

/// Precomputed connectivity for repeated per-sample evaluation.
class Evaluator {
public:
    Evaluator(const LocalStructure& s, const LocalWeights& w) : s_(s), w_(w) {
        check_weight_shapes(s, w);
        used_ = s.used_mask();
        const auto k_layers = static_cast<std::size_t>(s.depth());
        fan_in_.resize(k_layers);
        for (std::size_t k = 0; k < k_layers; ++k) {
            const auto& z = s.indicators[k];
            fan_in_[k].resize(static_cast<std::size_t>(z.cols()));
            for (int j = 0; j < z.cols(); ++j) {
                for (int i = 0; i < z.rows(); ++i) {
                    if (z(i, j)) fan_in_[k][static_cast<std::size_t>(j)].push_back(i);
                }
                if (s.layer_kinds[k] == LayerKind::Multiplication &&
                    used_[k + 1][static_cast<std::size_t>(j)] &&
                    fan_in_[k][static_cast<std::size_t>(j)].empty()) {
                    throw StructureError("multiplication neuron " + std::to_string(j) + " in layer " +
                                         std::to_string(k + 1) + " is used but has no inputs");
                }
            }
        }
        h_.resize(k_layers + 1);
        delta_.resize(k_layers + 1);
        for (std::size_t k = 0; k <= k_layers; ++k) {
            h_[k] = Eigen::VectorXd::Zero(s.layer_sizes[k]);
            delta_[k] = Eigen::VectorXd::Zero(s.layer_sizes[k]);
        }
    }

    const std::vector<Eigen::VectorXd>& layers() const { return h_; }

    const Eigen::VectorXd& run(const double* x) {
        const auto k_layers = static_cast<std::size_t>(s_.depth());
        for (int i = 0; i < s_.n_inputs(); ++i) h_[0](i) = x[i];
        const int p = s_.library.size();
        for (std::size_t k = 0; k < k_layers; ++k) {
            const auto& in = h_[k];
            auto& out = h_[k + 1];
            const auto& used = used_[k + 1];
            switch (s_.layer_kinds[k]) {
                case LayerKind::Activation:
                    for (Eigen::Index n = 0; n < out.size(); ++n) {
                        if (!used[static_cast<std::size_t>(n)]) {
                            out(n) = 0.0;
                            continue;
                        }
                        const auto& op = s_.library.op(static_cast<int>(n % p));
                        out(n) = eval(op, inner(k, n, op), in(n / p));
                    }
                    break;
                case LayerKind::Multiplication:
                    for (Eigen::Index j = 0; j < out.size(); ++j) {
                        const auto& src = fan_in_[k][static_cast<std::size_t>(j)];
                        if (!used[static_cast<std::size_t>(j)] || src.empty()) {
                            out(j) = 0.0;
                            continue;
                        }
                        double prod = 1.0;
                        for (int i : src) prod *= in(i);
                        out(j) = prod;
                    }
                    break;
                case LayerKind::Summation: {
                    const auto& wm = w_.summation[k];
                    for (Eigen::Index j = 0; j < out.size(); ++j) {
                        double acc = 0.0;
                        for (int i : fan_in_[k][static_cast<std::size_t>(j)]) acc += wm(i, j) * in(i);
                        out(j) = acc;
                    }
                    break;
                }
            }
        }
        return h_.back();
    }

    /// Accumulates dL/dW into `grad` given dL/dh_K in `top` for the sample last run().
    void backprop(const Eigen::VectorXd& top, LocalWeights& grad) {
        const auto k_layers = static_cast<std::size_t>(s_.depth());
        delta_[k_layers] = top;
        const int p = s_.library.size();
        for (std::size_t k = k_layers; k-- > 0;) {
            const auto& in = h_[k];
            const auto& d_out = delta_[k + 1];
            auto& d_in = delta_[k];
            d_in.setZero();
            const auto& used = used_[k + 1];
            switch (s_.layer_kinds[k]) {
                case LayerKind::Activation:
                    for (Eigen::Index n = 0; n < d_out.size(); ++n) {
                        if (!used[static_cast<std::size_t>(n)] || d_out(n) == 0.0) continue;
                        const auto& op = s_.library.op(static_cast<int>(n % p));
                        const auto g = eval_grads(op, inner(k, n, op), in(n / p));
                        d_in(n / p) += d_out(n) * g.d_dv;
                        if (g.d_dw) grad.inner[k](n) += d_out(n) * *g.d_dw;
                    }
                    break;
                case LayerKind::Multiplication:
                    for (Eigen::Index j = 0; j < d_out.size(); ++j) {
                        if (!used[static_cast<std::size_t>(j)] || d_out(j) == 0.0) continue;
                        const auto& src = fan_in_[k][static_cast<std::size_t>(j)];
                        for (std::size_t a = 0; a < src.size(); ++a) {
                            double others = 1.0;
                            for (std::size_t b = 0; b < src.size(); ++b) {
                                if (b != a) others *= in(src[b]);
                            }
                            d_in(src[a]) += d_out(j) * others;
                        }
                    }
                    break;
                case LayerKind::Summation: {
                    const auto& wm = w_.summation[k];
                    auto& gm = grad.summation[k];
                    for (Eigen::Index j = 0; j < d_out.size(); ++j) {
                        if (!used[static_cast<std::size_t>(j)]) continue;
                        for (int i : fan_in_[k][static_cast<std::size_t>(j)]) {
                            gm(i, j) += d_out(j) * in(i);
                            d_in(i) += d_out(j) * wm(i, j);
                        }
                    }
                    break;
                }
            }
        }
    }

private:
    std::optional<double> inner(std::size_t k, Eigen::Index n, const SymbolOp& op) const {
        if (!op.has_inner_weight) return std::nullopt;
        return w_.inner[k](n);
    }

    const LocalStructure& s_;
    const LocalWeights& w_;
    std::vector<std::vector<bool>> used_;
    std::vector<std::vector<std::vector<int>>> fan_in_;
    std::vector<Eigen::VectorXd> h_;
    std::vector<Eigen::VectorXd> delta_;
};

void check_batch(const LocalStructure& s, const Eigen::MatrixXd& inputs,
                 const Eigen::MatrixXd& targets) {
    if (inputs.cols() != s.n_inputs()) throw ShapeError("input width does not match structure");
    if (targets.rows() != inputs.rows() || targets.cols() != s.n_outputs()) {
        throw ShapeError("target shape does not match inputs/structure");
    }
    if (inputs.rows() == 0) throw ShapeError("empty batch");
}

/// Row-major copy so each sample is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double loss_rows(Evaluator& ev, const RowMatrix& x, const RowMatrix& y, Eigen::Index begin,
                 Eigen::Index end) {
    double acc = 0.0;
    for (Eigen::Index r = begin; r < end; ++r) {
        const auto& out = ev.run(x.row(r).data());
        for (Eigen::Index o = 0; o < out.size(); ++o) {
            const double e = out(o) - y(r, o);
            acc += e * e;
        }
    }
    return acc / (2.0 * static_cast<double>(end - begin));
}

double grad_rows(Evaluator& ev, const RowMatrix& x, const RowMatrix& y, Eigen::Index begin,
                 Eigen::Index end, LocalWeights& grad) {
    const double inv_n = 1.0 / static_cast<double>(end - begin);
    double acc = 0.0;
    Eigen::VectorXd top;
    for (Eigen::Index r = begin; r < end; ++r) {
        const auto& out = ev.run(x.row(r).data());
        top = (out - y.row(r).transpose()) * inv_n;
        acc += (out - y.row(r).transpose()).squaredNorm();
        ev.backprop(top, grad);
    }
    return acc * inv_n / 2.0;
}

void axpy(LocalWeights& w, double alpha, const LocalWeights& g) {
    for (std::size_t k = 0; k < w.summation.size(); ++k) {
        if (w.summation[k].size() > 0) w.summation[k] += alpha * g.summation[k];
        if (w.inner[k].size() > 0) w.inner[k] += alpha * g.inner[k];
    }
}

void zero(LocalWeights& w) {
    for (auto& m : w.summation) m.setZero();
    for (auto& v : w.inner) v.setZero();
}

/// Clears gradient entries that do not correspond to live parameters.
void mask_dead(const LocalStructure& s, LocalWeights& grad) {
    const auto used = s.used_mask();
    const int p = s.library.size();
    for (std::size_t k = 0; k < grad.summation.size(); ++k) {
        if (s.layer_kinds[k] == LayerKind::Summation) {
            const auto& z = s.indicators[k];
            for (int i = 0; i < z.rows(); ++i) {
                for (int j = 0; j < z.cols(); ++j) {
                    if (!z(i, j) || !used[k + 1][static_cast<std::size_t>(j)]) grad.summation[k](i, j) = 0.0;
                }
            }
        }
        if (s.layer_kinds[k] == LayerKind::Activation) {
            for (Eigen::Index n = 0; n < grad.inner[k].size(); ++n) {
                if (!used[k + 1][static_cast<std::size_t>(n)] ||
                    !s.library.op(static_cast<int>(n % p)).has_inner_weight) {
                    grad.inner[k](n) = 0.0;
                }
            }
        }
    }
}

}  // namespace

Eigen::VectorXd forward(const LocalStructure& structure, const LocalWeights& weights,
                        std::span<const double> x) {
    if (static_cast<int>(x.size()) != structure.n_inputs()) throw ShapeError("input length mismatch");
    Evaluator ev(structure, weights);
    return ev.run(x.data());
}

std::vector<Eigen::VectorXd> forward_layers(const LocalStructure& structure,
                                            const LocalWeights& weights,
                                            std::span<const double> x) {
    if (static_cast<int>(x.size()) != structure.n_inputs()) throw ShapeError("input length mismatch");
    Evaluator ev(structure, weights);
    ev.run(x.data());
    return ev.layers();
}

Eigen::MatrixXd predict(const LocalStructure& structure, const LocalWeights& weights,
                        const Eigen::MatrixXd& inputs) {
    return layer_outputs(structure, weights, inputs, structure.depth());
}

Eigen::MatrixXd layer_outputs(const LocalStructure& structure, const LocalWeights& weights,
                              const Eigen::MatrixXd& inputs, int layer) {
    if (inputs.cols() != structure.n_inputs()) throw ShapeError("input width does not match structure");
    if (layer < 0 || layer > structure.depth()) throw ShapeError("layer index out of range");
    Evaluator ev(structure, weights);
    const RowMatrix x = inputs;
    Eigen::MatrixXd out(inputs.rows(), structure.layer_sizes[static_cast<std::size_t>(layer)]);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        ev.run(x.row(r).data());
        out.row(r) = ev.layers()[static_cast<std::size_t>(layer)].transpose();
    }
    return out;
}

double loss(const LocalStructure& structure, const LocalWeights& weights,
            const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    check_batch(structure, inputs, targets);
    Evaluator ev(structure, weights);
    const RowMatrix x = inputs;
    const RowMatrix y = targets;
    return loss_rows(ev, x, y, 0, x.rows());
}

LossGrad gradients(const LocalStructure& structure, const LocalWeights& weights,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    check_batch(structure, inputs, targets);
    Evaluator ev(structure, weights);
    const RowMatrix x = inputs;
    const RowMatrix y = targets;
    LossGrad out;
    out.grad = LocalWeights::zeros_like(structure);
    out.loss = grad_rows(ev, x, y, 0, x.rows(), out.grad);
    mask_dead(structure, out.grad);
    return out;
}

FitResult fit(const LocalStructure& structure, const TrainConfig& config,
              const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    return fit_from(structure, LocalWeights::filled(structure, config.init_value), config, inputs,
                    targets);
}

FitResult fit_from(const LocalStructure& structure, LocalWeights start, const TrainConfig& config,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    structure.validate();
    check_batch(structure, inputs, targets);

    const RowMatrix x = inputs;
    const RowMatrix y = targets;
    const Eigen::Index n = x.rows();
    const Eigen::Index batch = config.batch_size > 0 ? std::min<Eigen::Index>(config.batch_size, n) : n;

    FitResult result;
    result.weights = std::move(start);
    double current = 0.0;
    try {
        Evaluator ev(structure, result.weights);
        current = loss_rows(ev, x, y, 0, n);
    } catch (const DomainError& e) {
        throw FitError(e.what(), 0);
    }
    if (!std::isfinite(current)) throw FitError("non-finite initial loss", 0);
    result.loss_history.push_back(current);

    double lr = config.learning_rate;
    LocalWeights grad = LocalWeights::zeros_like(structure);
    bool stalled = false;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (!stalled) {
            bool accepted = false;
            for (int attempt = 0; attempt <= config.max_backoffs && !accepted; ++attempt) {
                LocalWeights trial = result.weights;
                double trial_loss = std::numeric_limits<double>::infinity();
                try {
                    Evaluator ev(structure, trial);
                    for (Eigen::Index b = 0; b < n; b += batch) {
                        zero(grad);
                        grad_rows(ev, x, y, b, std::min(n, b + batch), grad);
                        mask_dead(structure, grad);
                        axpy(trial, -lr, grad);
                    }
                    trial_loss = loss_rows(ev, x, y, 0, n);
                } catch (const DomainError&) {
                    trial_loss = std::numeric_limits<double>::infinity();
                }
                if (std::isfinite(trial_loss) && trial_loss <= current) {
                    result.weights = std::move(trial);
                    current = trial_loss;
                    accepted = true;
                } else {
                    lr *= 0.5;
                }
            }
            if (!accepted) stalled = true;
        }
        result.loss_history.push_back(current);
    }
    result.final_loss = current;
    result.final_learning_rate = lr;
    return result;
}

}  // namespace consol
