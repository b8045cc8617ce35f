#include "consol/datasets.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "consol/errors.hpp"
#include "consol/metrics.hpp"

namespace consol {

namespace {

Factor f(int input, SymbolKind kind, std::optional<double> inner = std::nullopt) {
    return Factor{input, kind, inner};
}

Eigen::MatrixXd uniform_matrix(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd m(rows, cols);
    // row-major fill so the draw order does not depend on storage order
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
    }
    return m;
}

Eigen::VectorXd syn_row(int which, const Eigen::VectorXd& x) {
    Eigen::VectorXd y(3);
    const double x1 = x(0), x2 = x(1), x3 = x(2);
    if (which == 1) {
        y(0) = 3.0 * x1 * x1 * std::cos(2.5 * x2);
        y(1) = 4.0 * x1 * x3;
        y(2) = 3.0 * x3 * x3;
    } else {
        y(0) = std::sqrt(2.2 * x1) * x2 + x1 * x2 * x2;
        y(1) = std::sin(1.8 * x1) * (std::log(3.0 * x2) + std::sqrt(x3));
        y(2) = std::sqrt(3.7 * x3) * std::log(1.6 * x1) + x1 * x1;
    }
    return y;
}

Dataset syn_split(int which, int n, double lo, double hi, std::mt19937_64& rng, std::uint64_t seed) {
    Dataset ds;
    ds.X = uniform_matrix(n, 3, lo, hi, rng);
    ds.Y.resize(n, 3);
    for (int r = 0; r < n; ++r) ds.Y.row(r) = syn_row(which, ds.X.row(r).transpose()).transpose();
    ds.meta.name = which == 1 ? "syn1" : "syn2";
    ds.meta.input_ranges.assign(3, {lo, hi});
    ds.meta.seed = seed;
    ds.meta.truth = syn_equation(which);
    ds.finalize();
    return ds;
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::pair<int, int>> random_tree_plus(int nodes, int extra, std::mt19937_64& rng) {
    std::vector<std::pair<int, int>> lines;
    for (int n = 1; n < nodes; ++n) {
        const int parent = std::uniform_int_distribution<int>(0, n - 1)(rng);
        lines.emplace_back(parent, n);
    }
    std::vector<std::pair<int, int>> missing;
    for (int a = 0; a < nodes; ++a) {
        for (int b = a + 1; b < nodes; ++b) {
            bool present = false;
            for (const auto& [p, q] : lines) present = present || (p == a && q == b);
            if (!present) missing.emplace_back(a, b);
        }
    }
    std::shuffle(missing.begin(), missing.end(), rng);
    for (int e = 0; e < extra && e < static_cast<int>(missing.size()); ++e) lines.push_back(missing[static_cast<std::size_t>(e)]);
    return lines;
}

}  // namespace

void Dataset::finalize() {
    if (X.rows() == 0 || X.rows() != Y.rows()) throw ShapeError("dataset needs matching, non-empty X and Y");
    if (!X.allFinite() || !Y.allFinite()) throw ShapeError("dataset contains non-finite values");
    meta.sigma_y = population_std(Y);
}

CanonicalEquation syn_equation(int which) {
    using K = SymbolKind;
    CanonicalEquation eq;
    if (which == 1) {
        eq.outputs = {
            {Term{3.0, {f(0, K::Square), f(1, K::Cos, 2.5)}}},
            {Term{4.0, {f(0, K::Identity), f(2, K::Identity)}}},
            {Term{3.0, {f(2, K::Square)}}},
        };
    } else if (which == 2) {
        eq.outputs = {
            {Term{1.0, {f(0, K::Sqrt, 2.2), f(1, K::Identity)}}, Term{1.0, {f(0, K::Identity), f(1, K::Square)}}},
            {Term{1.0, {f(0, K::Sin, 1.8), f(1, K::Log, 3.0)}}, Term{1.0, {f(0, K::Sin, 1.8), f(2, K::Sqrt, 1.0)}}},
            {Term{1.0, {f(2, K::Sqrt, 3.7), f(0, K::Log, 1.6)}}, Term{1.0, {f(0, K::Square)}}},
        };
    } else {
        throw std::invalid_argument("synthetic dataset must be 1 or 2");
    }
    return canonicalize(eq, 0.0);
}

std::pair<Dataset, Dataset> gen_syn(int which, int n_train, int n_test, std::uint64_t seed) {
    if (which != 1 && which != 2) throw std::invalid_argument("synthetic dataset must be 1 or 2");
    if (n_train <= 0 || n_test <= 0) throw std::invalid_argument("sample counts must be positive");
    std::mt19937_64 rng(seed);
    auto train = syn_split(which, n_train, 1.0, 2.0, rng, seed);
    auto test = syn_split(which, n_test, 3.0, 4.0, rng, seed);
    return {std::move(train), std::move(test)};
}

CanonicalEquation toy_equation() {
    CanonicalEquation eq;
    eq.outputs = {{Term{3.0, {f(0, SymbolKind::Square), f(1, SymbolKind::Cos, 2.5)}}}};
    return canonicalize(eq, 0.0);
}

LocalStructure toy_structure(const SymbolLibrary& library) {
    const auto sq = library.find(SymbolKind::Square);
    const auto cs = library.find(SymbolKind::Cos);
    if (!sq || !cs) throw std::invalid_argument("toy structure needs square and cos in the library");
    auto s = LocalStructure::standard(library, 2, 1, 1);
    s.indicators[1](*sq, 0) = 1;
    s.indicators[1](library.size() + *cs, 0) = 1;
    s.indicators[2](0, 0) = 1;
    s.validate();
    return s;
}

Dataset gen_toy(int n, double lo, double hi, std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("sample count must be positive");
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.X = uniform_matrix(n, 2, lo, hi, rng);
    ds.Y = (3.0 * ds.X.col(0).array().square() * (2.5 * ds.X.col(1).array()).cos()).matrix();
    ds.meta.name = "toy";
    ds.meta.input_ranges.assign(2, {lo, hi});
    ds.meta.seed = seed;
    ds.meta.truth = toy_equation();
    ds.finalize();
    return ds;
}

void PowerSystemSpec::validate() const {
    if (nodes < 1) throw std::invalid_argument("power system needs at least one node");
    if (G.rows() != nodes || G.cols() != nodes || B.rows() != nodes || B.cols() != nodes) {
        throw ShapeError("G and B must be nodes x nodes");
    }
    if (G != G.transpose() || B != B.transpose()) throw std::invalid_argument("G and B must be symmetric");
}

PowerSystemSpec PowerSystemSpec::random(int nodes, int extra_lines, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PowerSystemSpec spec;
    spec.nodes = nodes;
    spec.G = Eigen::MatrixXd::Zero(nodes, nodes);
    spec.B = Eigen::MatrixXd::Zero(nodes, nodes);
    std::uniform_real_distribution<double> g(0.5, 3.0);
    std::uniform_real_distribution<double> b(-3.0, -0.5);
    for (const auto& [i, m] : random_tree_plus(nodes, extra_lines, rng)) {
        spec.G(i, m) = spec.G(m, i) = g(rng);
        spec.B(i, m) = spec.B(m, i) = b(rng);
    }
    return spec;
}

Dataset gen_power(const PowerSystemSpec& spec, int n, std::pair<double, double> voltage_range, std::uint64_t seed) {
    spec.validate();
    if (n <= 0) throw std::invalid_argument("sample count must be positive");
    std::mt19937_64 rng(seed);
    const int M = spec.nodes;
    Dataset ds;
    ds.X = uniform_matrix(n, 2 * M, voltage_range.first, voltage_range.second, rng);
    ds.Y = Eigen::MatrixXd::Zero(n, 2 * M);
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < M; ++i) {
            const double ui = ds.X(r, 2 * i), vi = ds.X(r, 2 * i + 1);
            double p = 0.0, q = 0.0;
            for (int m = 0; m < M; ++m) {
                const double um = ds.X(r, 2 * m), vm = ds.X(r, 2 * m + 1);
                p += spec.G(i, m) * (ui * um + vi * vm) + spec.B(i, m) * (vi * um - ui * vm);
                q += spec.G(i, m) * (vi * um - ui * vm) - spec.B(i, m) * (vi * um - ui * vm);
            }
            ds.Y(r, 2 * i) = p;
            ds.Y(r, 2 * i + 1) = q;
        }
    }
    ds.meta.name = "pow";
    ds.meta.input_ranges.assign(static_cast<std::size_t>(2 * M), voltage_range);
    ds.meta.seed = seed;
    ds.meta.truth = power_equation(spec);
    ds.finalize();
    return ds;
}

CanonicalEquation power_equation(const PowerSystemSpec& spec) {
    using K = SymbolKind;
    const int M = spec.nodes;
    CanonicalEquation eq;
    eq.outputs.resize(static_cast<std::size_t>(2 * M));
    auto prod = [](double c, int a, int b) { return Term{c, {f(a, K::Identity), f(b, K::Identity)}}; };
    for (int i = 0; i < M; ++i) {
        auto& p = eq.outputs[static_cast<std::size_t>(2 * i)];
        auto& q = eq.outputs[static_cast<std::size_t>(2 * i + 1)];
        const int ui = 2 * i, vi = 2 * i + 1;
        for (int m = 0; m < M; ++m) {
            const double g = spec.G(i, m), b = spec.B(i, m);
            if (g == 0.0 && b == 0.0) continue;
            const int um = 2 * m, vm = 2 * m + 1;
            p.push_back(prod(g, ui, um));
            p.push_back(prod(g, vi, vm));
            p.push_back(prod(b, vi, um));
            p.push_back(prod(-b, ui, vm));
            q.push_back(prod(g - b, vi, um));
            q.push_back(prod(b - g, ui, vm));
        }
    }
    return canonicalize(eq, 0.0);
}

void MassDamperSpec::validate() const {
    if (nodes < 1) throw std::invalid_argument("mass-damper system needs at least one node");
    if (D.rows() != nodes || D.cols() != damping.size() || mass.size() != nodes) {
        throw ShapeError("incidence, damping and mass shapes disagree");
    }
    if ((damping.array() <= 0.0).any() || (mass.array() <= 0.0).any()) {
        throw std::invalid_argument("damping and masses must be positive");
    }
    if (!(step > 0.0) || !(duration >= step)) throw std::invalid_argument("step and duration must be positive");
}

Eigen::MatrixXd MassDamperSpec::system_matrix() const {
    return -(D * damping.asDiagonal() * D.transpose() * mass.cwiseInverse().asDiagonal());
}

MassDamperSpec MassDamperSpec::random(int nodes, int extra_lines, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto lines = random_tree_plus(nodes, extra_lines, rng);
    MassDamperSpec spec;
    spec.nodes = nodes;
    spec.D = Eigen::MatrixXd::Zero(nodes, static_cast<Eigen::Index>(lines.size()));
    spec.damping.resize(static_cast<Eigen::Index>(lines.size()));
    std::uniform_real_distribution<double> r(0.05, 0.3);
    for (std::size_t l = 0; l < lines.size(); ++l) {
        spec.D(lines[l].first, static_cast<Eigen::Index>(l)) = 1.0;
        spec.D(lines[l].second, static_cast<Eigen::Index>(l)) = -1.0;
        spec.damping(static_cast<Eigen::Index>(l)) = r(rng);
    }
    std::uniform_real_distribution<double> m(1.0, 3.0);
    spec.mass.resize(nodes);
    for (int n = 0; n < nodes; ++n) spec.mass(n) = m(rng);
    return spec;
}

Dataset gen_massdamper_from(const MassDamperSpec& spec, const Eigen::VectorXd& q0) {
    spec.validate();
    if (q0.size() != spec.nodes) throw ShapeError("initial state has the wrong length");
    const Eigen::MatrixXd A = spec.system_matrix();
    const auto steps = static_cast<int>(std::llround(spec.duration / spec.step));
    Dataset ds;
    ds.X.resize(steps, spec.nodes);
    ds.Y.resize(steps, spec.nodes);
    Eigen::VectorXd q = q0;
    for (int t = 0; t < steps; ++t) {
        const Eigen::VectorXd qdot = A * q;
        ds.X.row(t) = q.transpose();
        ds.Y.row(t) = qdot.transpose();
        q += spec.step * qdot;
    }
    ds.meta.name = "mas";
    ds.meta.truth = massdamper_equation(spec);
    for (int n = 0; n < spec.nodes; ++n) {
        ds.meta.input_ranges.emplace_back(ds.X.col(n).minCoeff(), ds.X.col(n).maxCoeff());
    }
    ds.meta.sigma_y = population_std(ds.Y);
    if (!ds.X.allFinite() || !ds.Y.allFinite()) throw ShapeError("simulation diverged");
    return ds;
}

Dataset gen_massdamper(const MassDamperSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd q0(spec.nodes);
    for (int n = 0; n < spec.nodes; ++n) q0(n) = u(rng);
    auto ds = gen_massdamper_from(spec, q0);
    ds.meta.seed = seed;
    return ds;
}

CanonicalEquation massdamper_equation(const MassDamperSpec& spec) {
    const Eigen::MatrixXd A = spec.system_matrix();
    CanonicalEquation eq;
    eq.outputs.resize(static_cast<std::size_t>(spec.nodes));
    for (int i = 0; i < spec.nodes; ++i) {
        for (int j = 0; j < spec.nodes; ++j) {
            if (A(i, j) != 0.0) {
                eq.outputs[static_cast<std::size_t>(i)].push_back(Term{A(i, j), {f(j, SymbolKind::Identity)}});
            }
        }
    }
    return canonicalize(eq, 0.0);
}

std::pair<Dataset, Dataset> split_half(const Dataset& ds) {
    const auto n = ds.X.rows();
    const auto half = n / 2;
    if (half == 0 || half == n) throw ShapeError("dataset too small to split");
    Dataset a = ds, b = ds;
    a.X = ds.X.topRows(half);
    a.Y = ds.Y.topRows(half);
    b.X = ds.X.bottomRows(n - half);
    b.Y = ds.Y.bottomRows(n - half);
    a.meta.sigma_y = population_std(a.Y);
    b.meta.sigma_y = population_std(b.Y);
    return {std::move(a), std::move(b)};
}

Dataset add_noise(const Dataset& ds, std::optional<double> snr_db, std::uint64_t seed) {
    if (!snr_db) return ds;
    if (!std::isfinite(*snr_db)) throw std::invalid_argument("snr must be finite");
    Dataset out = ds;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double ratio = std::pow(10.0, -*snr_db / 20.0);
    for (Eigen::Index c = 0; c < out.Y.cols(); ++c) {
        const double rms = std::sqrt(ds.Y.col(c).squaredNorm() / static_cast<double>(ds.Y.rows()));
        const double sd = rms * ratio;
        for (Eigen::Index r = 0; r < out.Y.rows(); ++r) out.Y(r, c) += sd * normal(rng);
    }
    out.meta.snr_db = snr_db;
    out.meta.sigma_y = population_std(out.Y);
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw ConfigError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::string text;
    for (int c = 0; c < ds.n_inputs(); ++c) text += (c ? ",x" : "x") + std::to_string(c + 1);
    for (int c = 0; c < ds.n_outputs(); ++c) text += ",y" + std::to_string(c + 1);
    text += '\n';
    for (Eigen::Index r = 0; r < ds.X.rows(); ++r) {
        for (Eigen::Index c = 0; c < ds.X.cols(); ++c) {
            if (c) text += ',';
            text += fmt17(ds.X(r, c));
        }
        for (Eigen::Index c = 0; c < ds.Y.cols(); ++c) {
            text += ',';
            text += fmt17(ds.Y(r, c));
        }
        text += '\n';
    }
    write_file_atomic(path, text);
}

Dataset read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty dataset file " + path.string());
    int nx = 0, ny = 0;
    {
        std::stringstream header(line);
        std::string col;
        while (std::getline(header, col, ',')) {
            if (!col.empty() && col.back() == '\r') col.pop_back();
            if (col.size() > 1 && col[0] == 'x' && ny == 0) {
                ++nx;
            } else if (col.size() > 1 && col[0] == 'y') {
                ++ny;
            } else {
                throw ConfigError("unexpected column '" + col + "' in " + path.string());
            }
        }
    }
    if (nx == 0 || ny == 0) throw ConfigError("dataset needs x and y columns: " + path.string());
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int c = 0; c < nx + ny; ++c) {
            double v = 0.0;
            while (p < end && *p == ' ') ++p;
            const auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) {
                throw ConfigError("bad number in " + path.string() + " row " + std::to_string(rows + 2));
            }
            values.push_back(v);
            p = next;
            if (c + 1 < nx + ny) {
                if (p >= end || *p != ',') {
                    throw ConfigError("short row in " + path.string() + " row " + std::to_string(rows + 2));
                }
                ++p;
            }
        }
        ++rows;
    }
    Dataset ds;
    ds.X.resize(static_cast<Eigen::Index>(rows), nx);
    ds.Y.resize(static_cast<Eigen::Index>(rows), ny);
    for (std::size_t r = 0; r < rows; ++r) {
        for (int c = 0; c < nx; ++c) ds.X(static_cast<Eigen::Index>(r), c) = values[r * static_cast<std::size_t>(nx + ny) + static_cast<std::size_t>(c)];
        for (int c = 0; c < ny; ++c) {
            ds.Y(static_cast<Eigen::Index>(r), c) = values[r * static_cast<std::size_t>(nx + ny) + static_cast<std::size_t>(nx + c)];
        }
    }
    try {
        ds.finalize();
    } catch (const ShapeError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return ds;
}

nlohmann::json meta_to_json(const DatasetMeta& meta) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& [lo, hi] : meta.input_ranges) ranges.push_back({lo, hi});
    std::vector<double> sigma(meta.sigma_y.data(), meta.sigma_y.data() + meta.sigma_y.size());
    nlohmann::json j = {{"name", meta.name}, {"input_ranges", ranges}, {"sigma_y", sigma}, {"seed", meta.seed}};
    j["snr_db"] = meta.snr_db ? nlohmann::json(*meta.snr_db) : nlohmann::json(nullptr);
    j["truth"] = meta.truth ? to_json(*meta.truth) : nlohmann::json(nullptr);
    return j;
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta meta;
    meta.name = j.at("name").get<std::string>();
    for (const auto& r : j.at("input_ranges")) meta.input_ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
    const auto sigma = j.at("sigma_y").get<std::vector<double>>();
    meta.sigma_y = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
    meta.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("snr_db") && !j["snr_db"].is_null()) meta.snr_db = j["snr_db"].get<double>();
    if (j.contains("truth") && !j["truth"].is_null()) meta.truth = equation_from_json(j["truth"]);
    return meta;
}

void save_dataset(const std::filesystem::path& dir, const std::string& stem, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    write_csv(dir / (stem + ".csv"), ds);
    write_file_atomic(dir / (stem + ".meta.json"), meta_to_json(ds.meta).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& stem) {
    const auto csv = dir / (stem + ".csv");
    if (!std::filesystem::exists(csv)) throw ConfigError("missing dataset file " + csv.string());
    Dataset ds = read_csv(csv);
    const auto meta_path = dir / (stem + ".meta.json");
    if (std::filesystem::exists(meta_path)) {
        std::ifstream in(meta_path);
        try {
            const Eigen::VectorXd sigma = ds.meta.sigma_y;
            ds.meta = meta_from_json(nlohmann::json::parse(in));
            ds.meta.sigma_y = sigma;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(meta_path.string() + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace consol
