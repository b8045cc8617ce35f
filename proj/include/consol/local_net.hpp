#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "consol/symbol_library.hpp"

namespace consol {

enum class LayerKind { Activation, Multiplication, Summation };

using IndicatorMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Fixed input -> activation block: input i feeds neurons i*|lib| .. i*|lib|+|lib|-1.
IndicatorMatrix activation_fanout(int n_in, int n_symbols);

/// Connection layout of a LoCaL network: sizes n_0..n_K, K layer kinds and
/// K binary indicator matrices Z_k of shape n_k x n_{k+1}.
struct LocalStructure {
    std::vector<int> layer_sizes;
    std::vector<LayerKind> layer_kinds;
    std::vector<IndicatorMatrix> indicators;
    SymbolLibrary library;

    /// Activation layer followed by alternating product/sum blocks with all
    /// searched indicators zero. `block_sizes` lists n for each mult/sum layer.
    static LocalStructure layered(const SymbolLibrary& library, int n_inputs,
                                  const std::vector<LayerKind>& kinds_after_activation,
                                  const std::vector<int>& block_sizes);

    /// The default three-layer form: input, activation, multiplication, summation.
    static LocalStructure standard(const SymbolLibrary& library, int n_inputs, int mult_neurons,
                                   int n_outputs);

    int depth() const noexcept { return static_cast<int>(layer_kinds.size()); }
    int n_inputs() const { return layer_sizes.front(); }
    int n_outputs() const { return layer_sizes.back(); }

    /// Throws StructureError if shapes, activation fan-out or indicator values are wrong.
    void validate() const;

    /// used[k][i] is true when neuron i of layer k has a path to some output.
    std::vector<std::vector<bool>> used_mask() const;

    bool operator==(const LocalStructure& other) const;
};

/// Summation matrices W_k (empty for non-summation layers) and inner weights
/// per activation neuron (empty for non-activation layers; entries of
/// unweighted ops are ignored).
struct LocalWeights {
    std::vector<Eigen::MatrixXd> summation;
    std::vector<Eigen::VectorXd> inner;

    static LocalWeights filled(const LocalStructure& structure, double value);
    static LocalWeights zeros_like(const LocalStructure& structure);
};

struct TrainConfig {
    double learning_rate = 1e-2;
    int epochs = 8;
    double init_value = 1.0;
    int batch_size = 0;  // 0 trains on the full batch each step
    int max_backoffs = 40;
};

/// Address of one trainable scalar.
struct ParamRef {
    enum class Kind { Summation, Inner };
    Kind kind;
    int layer;
    int row;
    int col;  // 0 for inner weights

    bool operator==(const ParamRef&) const = default;
};

/// Weights that influence some output: summation entries on present
/// connections into used neurons, and inner weights of used weighted activations.
std::vector<ParamRef> live_parameters(const LocalStructure& structure);

Eigen::VectorXd pack(const LocalWeights& weights, std::span<const ParamRef> params);
void unpack(LocalWeights& weights, std::span<const ParamRef> params, const Eigen::VectorXd& values);

/// Output h_K for a single input vector.
Eigen::VectorXd forward(const LocalStructure& structure, const LocalWeights& weights,
                        std::span<const double> x);

/// All layer outputs h_0..h_K for one input vector.
std::vector<Eigen::VectorXd> forward_layers(const LocalStructure& structure,
                                            const LocalWeights& weights,
                                            std::span<const double> x);

/// Row-wise predictions for a sample matrix (N x n_0) -> N x n_K.
Eigen::MatrixXd predict(const LocalStructure& structure, const LocalWeights& weights,
                        const Eigen::MatrixXd& inputs);

/// Output of layer `layer` for each sample (N x n_layer).
Eigen::MatrixXd layer_outputs(const LocalStructure& structure, const LocalWeights& weights,
                              const Eigen::MatrixXd& inputs, int layer);

/// L(W) = 1/(2N) sum_i ||f(x_i) - y_i||^2.
double loss(const LocalStructure& structure, const LocalWeights& weights,
            const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

struct LossGrad {
    double loss = 0.0;
    LocalWeights grad;
};

/// Loss and its gradient over a batch; dead weights get zero gradient.
LossGrad gradients(const LocalStructure& structure, const LocalWeights& weights,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

struct FitResult {
    LocalWeights weights;
    double final_loss = 0.0;
    std::vector<double> loss_history;  // loss before training, then after each epoch
    double final_learning_rate = 0.0;
};

/// Gradient descent from `config.init_value` on every weight.
///
/// Each epoch sweeps the data once in fixed order (in batches of
/// `config.batch_size`, or as one full batch). An epoch that raises the full
/// loss is undone and the learning rate halved, so the loss history never
/// increases. Proposals that leave an op's domain count as increases. A
/// starting point outside the domain raises FitError.
FitResult fit(const LocalStructure& structure, const TrainConfig& config,
              const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

/// Same as fit() but starting from explicit weights.
FitResult fit_from(const LocalStructure& structure, LocalWeights start, const TrainConfig& config,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

}  // namespace consol
