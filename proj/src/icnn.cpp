#include "consol/icnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "consol/errors.hpp"

namespace consol {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Trace {
    std::vector<Eigen::VectorXd> pre;  // pre-activation per layer
    std::vector<Eigen::VectorXd> z;    // post-activation per hidden layer
};

double run(const IcnnParams& p, const Eigen::VectorXd& u, Trace* trace) {
    if (u.size() != p.input_dim) {
        throw ShapeError("icnn input has " + std::to_string(u.size()) + " entries, expected " +
                         std::to_string(p.input_dim));
    }
    Eigen::VectorXd z;
    const std::size_t n_layers = p.layers.size();
    if (trace) {
        trace->pre.resize(n_layers);
        trace->z.resize(n_layers);
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = p.layers[l];
        Eigen::VectorXd pre = layer.wy * u + layer.bias;
        if (l > 0) pre.noalias() += layer.wz * z;
        if (trace) trace->pre[l] = pre;
        if (l + 1 == n_layers) return pre(0);
        z = pre.unaryExpr([](double v) { return softplus(v); });
        if (trace) trace->z[l] = z;
    }
    return 0.0;
}

/// Adds d(out)/d(params) * scale into grad and returns d(out)/du.
Eigen::VectorXd backprop(const IcnnParams& p, const Eigen::VectorXd& u, const Trace& t, double scale,
                         IcnnParams* grad) {
    Eigen::VectorXd du = Eigen::VectorXd::Zero(u.size());
    const std::size_t n_layers = p.layers.size();
    Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, scale);
    for (std::size_t l = n_layers; l-- > 0;) {
        const auto& layer = p.layers[l];
        if (l + 1 != n_layers) {
            delta = delta.cwiseProduct(t.pre[l].unaryExpr([](double v) { return sigmoid(v); }));
        }
        if (grad) {
            auto& g = grad->layers[l];
            g.wy.noalias() += delta * u.transpose();
            g.bias += delta;
            if (l > 0) g.wz.noalias() += delta * t.z[l - 1].transpose();
        }
        du.noalias() += layer.wy.transpose() * delta;
        if (l > 0) delta = layer.wz.transpose() * delta;
    }
    return du;
}

IcnnParams zeros_like(const IcnnParams& p) {
    IcnnParams z = p;
    for (auto& layer : z.layers) {
        layer.wz.setZero();
        layer.wy.setZero();
        layer.bias.setZero();
    }
    return z;
}

void clamp_passthrough(IcnnParams& p) {
    for (auto& layer : p.layers) layer.wz = layer.wz.cwiseMax(0.0);
}

Eigen::VectorXd project(const Eigen::VectorXd& a, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return a.cwiseMax(lo).cwiseMin(hi);
}

double kkt(const Eigen::VectorXd& a, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
           const Eigen::VectorXd& hi) {
    if (a.size() == 0) return 0.0;
    return (project(a - g, lo, hi) - a).cwiseAbs().maxCoeff();
}

struct Descent {
    Eigen::VectorXd a;
    double value;
    Eigen::VectorXd grad;
};

Descent descend(const BoxObjective& f, Eigen::VectorXd a, const Eigen::VectorXd& lo,
                const Eigen::VectorXd& hi, const BoxOptions& opt) {
    Eigen::VectorXd g(a.size());
    double value = f(a, g);
    double step = 1.0;
    Eigen::VectorXd g_new(a.size());
    for (int it = 0; it < opt.steps; ++it) {
        if (kkt(a, g, lo, hi) <= opt.tolerance) break;
        double t = step;
        Eigen::VectorXd trial;
        double trial_value = value;
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt) {
            trial = project(a - t * g, lo, hi);
            const Eigen::VectorXd d = trial - a;
            if (d.cwiseAbs().maxCoeff() == 0.0) break;
            trial_value = f(trial, g_new);
            if (trial_value <= value + 1e-4 * g.dot(d)) {
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;
        const Eigen::VectorXd s = trial - a;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        step = sy > 1e-300 ? std::clamp(s.squaredNorm() / sy, 1e-8, 1e8) : std::min(t * 2.0, 1e8);
        a = std::move(trial);
        value = trial_value;
        g = g_new;
    }
    return {std::move(a), value, std::move(g)};
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ShapeError("truncated icnn snapshot");
    return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

Eigen::MatrixXd get_matrix(std::istream& in) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if (rows > (1u << 20) || cols > (1u << 20)) throw ShapeError("implausible matrix shape in snapshot");
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!in) throw ShapeError("truncated icnn snapshot");
    return m;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    std::vector<double> values(m.data(), m.data() + m.size());
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", values}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto values = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) throw ShapeError("matrix data length mismatch");
    Eigen::MatrixXd m(rows, cols);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

}  // namespace

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

IcnnParams IcnnParams::init(int input_dim, const std::vector<int>& hidden, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 0.1);
    IcnnParams p;
    p.input_dim = input_dim;
    int prev = 0;
    auto sizes = hidden;
    sizes.push_back(1);
    for (int width : sizes) {
        IcnnLayer layer;
        layer.wz = Eigen::MatrixXd(width, prev);
        for (Eigen::Index n = 0; n < layer.wz.size(); ++n) layer.wz.data()[n] = std::abs(normal(rng));
        layer.wy = Eigen::MatrixXd(width, input_dim);
        for (Eigen::Index n = 0; n < layer.wy.size(); ++n) layer.wy.data()[n] = normal(rng);
        layer.bias = Eigen::VectorXd::Zero(width);
        p.layers.push_back(std::move(layer));
        prev = width;
    }
    return p;
}

IcnnParams IcnnParams::constant(int input_dim, const std::vector<int>& hidden, double bias) {
    IcnnParams p;
    p.input_dim = input_dim;
    int prev = 0;
    auto sizes = hidden;
    sizes.push_back(1);
    for (int width : sizes) {
        p.layers.push_back({Eigen::MatrixXd::Zero(width, prev), Eigen::MatrixXd::Zero(width, input_dim),
                            Eigen::VectorXd::Zero(width)});
        prev = width;
    }
    p.layers.back().bias(0) = bias;
    return p;
}

double IcnnParams::min_passthrough() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& layer : layers) {
        if (layer.wz.size() > 0) m = std::min(m, layer.wz.minCoeff());
    }
    return m;
}

double icnn_forward(const IcnnParams& params, const Eigen::VectorXd& u) {
    return run(params, u, nullptr);
}

double icnn_forward(const IcnnParams& params, std::span<const double> s, std::span<const double> a) {
    Eigen::VectorXd u(static_cast<Eigen::Index>(s.size() + a.size()));
    std::copy(s.begin(), s.end(), u.data());
    std::copy(a.begin(), a.end(), u.data() + s.size());
    return run(params, u, nullptr);
}

double icnn_value_and_input_grad(const IcnnParams& params, const Eigen::VectorXd& u,
                                 Eigen::VectorXd& grad) {
    Trace t;
    const double value = run(params, u, &t);
    grad = backprop(params, u, t, 1.0, nullptr);
    return value;
}

double icnn_mse(const IcnnParams& params, std::span<const IcnnSample> samples) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& s : samples) {
        const double e = icnn_forward(params, s.input) - s.target;
        acc += e * e;
    }
    return acc / static_cast<double>(samples.size());
}

IcnnParams icnn_fit(IcnnParams params, std::span<const IcnnSample> samples, const IcnnFitConfig& config,
                    std::mt19937_64& rng) {
    if (samples.empty()) throw std::invalid_argument("icnn_fit needs at least one sample");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    IcnnParams m = zeros_like(params);
    IcnnParams v = zeros_like(params);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = config.batch_size > 0
                                  ? std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), samples.size())
                                  : samples.size();
    long step = 0;
    Trace trace;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t end = std::min(order.size(), b + batch);
            IcnnParams g = zeros_like(params);
            const double scale = 2.0 / static_cast<double>(end - b);
            for (std::size_t n = b; n < end; ++n) {
                const auto& s = samples[order[n]];
                const double out = run(params, s.input, &trace);
                backprop(params, s.input, trace, scale * (out - s.target), &g);
            }
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto adam = [&](Eigen::MatrixXd& w, Eigen::MatrixXd& mw, Eigen::MatrixXd& vw, const Eigen::MatrixXd& gw) {
                mw = beta1 * mw + (1.0 - beta1) * gw;
                vw = beta2 * vw + (1.0 - beta2) * gw.cwiseProduct(gw);
                w.array() -= config.learning_rate * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
            };
            for (std::size_t l = 0; l < params.layers.size(); ++l) {
                auto& pl = params.layers[l];
                auto& ml = m.layers[l];
                auto& vl = v.layers[l];
                const auto& gl = g.layers[l];
                adam(pl.wz, ml.wz, vl.wz, gl.wz);
                adam(pl.wy, ml.wy, vl.wy, gl.wy);
                Eigen::MatrixXd b = pl.bias, mb = ml.bias, vb = vl.bias;
                adam(b, mb, vb, gl.bias);
                pl.bias = b;
                ml.bias = mb;
                vl.bias = vb;
            }
            clamp_passthrough(params);
        }
    }
    return params;
}

BoxResult minimize_box(const BoxObjective& objective, const Eigen::VectorXd& lower,
                       const Eigen::VectorXd& upper, const BoxOptions& options, std::mt19937_64& rng) {
    if (lower.size() != upper.size()) throw ShapeError("box bounds differ in length");
    if ((lower.array() > upper.array()).any()) throw std::invalid_argument("empty box");
    if (options.restarts < 1) throw std::invalid_argument("restarts must be >= 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    BoxResult best;
    best.value = std::numeric_limits<double>::infinity();
    for (int r = 0; r < options.restarts; ++r) {
        Eigen::VectorXd start = 0.5 * (lower + upper);
        if (r > 0) {
            for (Eigen::Index i = 0; i < start.size(); ++i) {
                start(i) = lower(i) + unit(rng) * (upper(i) - lower(i));
            }
        }
        auto d = descend(objective, std::move(start), lower, upper, options);
        best.restart_values.push_back(d.value);
        if (d.value < best.value) {
            best.value = d.value;
            best.kkt_residual = kkt(d.a, d.grad, lower, upper);
            best.a_star = std::move(d.a);
        }
    }
    return best;
}

BoxResult minimize_over_box(const IcnnParams& params, std::span<const double> s,
                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            const BoxOptions& options, std::mt19937_64& rng) {
    const auto n_s = static_cast<Eigen::Index>(s.size());
    if (n_s + lower.size() != params.input_dim) throw ShapeError("state+action width does not match icnn input");
    Eigen::VectorXd u(params.input_dim);
    std::copy(s.begin(), s.end(), u.data());
    Eigen::VectorXd full_grad;
    BoxObjective f = [&](const Eigen::VectorXd& a, Eigen::VectorXd& grad) {
        u.tail(a.size()) = a;
        const double value = icnn_value_and_input_grad(params, u, full_grad);
        grad = full_grad.tail(a.size());
        return value;
    };
    return minimize_box(f, lower, upper, options, rng);
}

BoxResult minimize_over_unit_box(const IcnnParams& params, std::span<const double> s, int n_a,
                                 const BoxOptions& options, std::mt19937_64& rng) {
    return minimize_over_box(params, s, Eigen::VectorXd::Zero(n_a), Eigen::VectorXd::Ones(n_a), options, rng);
}

void write_icnn_binary(std::ostream& out, const IcnnParams& params) {
    out.write("ICNN", 4);
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.input_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& layer : params.layers) {
        put_matrix(out, layer.wz);
        put_matrix(out, layer.wy);
        put_matrix(out, layer.bias);
    }
}

IcnnParams read_icnn_binary(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "ICNN") throw ShapeError("not an icnn snapshot");
    if (get<std::uint32_t>(in) != 1) throw ShapeError("unsupported icnn snapshot version");
    IcnnParams p;
    p.input_dim = static_cast<int>(get<std::uint32_t>(in));
    const auto n_layers = get<std::uint32_t>(in);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        IcnnLayer layer;
        layer.wz = get_matrix(in);
        layer.wy = get_matrix(in);
        layer.bias = get_matrix(in);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

nlohmann::json icnn_to_json(const IcnnParams& params) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : params.layers) {
        layers.push_back({{"wz", matrix_json(layer.wz)}, {"wy", matrix_json(layer.wy)}, {"bias", matrix_json(layer.bias)}});
    }
    return {{"input_dim", params.input_dim}, {"layers", std::move(layers)}};
}

IcnnParams icnn_from_json(const nlohmann::json& j) {
    IcnnParams p;
    p.input_dim = j.at("input_dim").get<int>();
    for (const auto& jl : j.at("layers")) {
        IcnnLayer layer;
        layer.wz = matrix_from_json(jl.at("wz"));
        layer.wy = matrix_from_json(jl.at("wy"));
        layer.bias = matrix_from_json(jl.at("bias"));
        p.layers.push_back(std::move(layer));
    }
    return p;
}

}  // namespace consol
