#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "consol/equation.hpp"

namespace consol {

struct DatasetMeta {
    std::string name;
    std::vector<std::pair<double, double>> input_ranges;
    Eigen::VectorXd sigma_y;  // population std of Y as stored
    std::uint64_t seed = 0;
    std::optional<double> snr_db;
    std::optional<CanonicalEquation> truth;  // generating equation when known
};

struct Dataset {
    Eigen::MatrixXd X;
    Eigen::MatrixXd Y;
    DatasetMeta meta;

    int n_inputs() const { return static_cast<int>(X.cols()); }
    int n_outputs() const { return static_cast<int>(Y.cols()); }

    /// Recomputes sigma_y and throws ShapeError on empty or non-finite data.
    void finalize();
};

/// Generating equation of Syn1 (which = 1) or Syn2 (which = 2).
CanonicalEquation syn_equation(int which);

/// Train inputs from U(1,2), test inputs from U(3,4), outputs from the closed forms.
std::pair<Dataset, Dataset> gen_syn(int which, int n_train, int n_test, std::uint64_t seed);

/// Toy problem y = 3 x1^2 cos(2.5 x2) with inputs drawn from [lo, hi]^2.
Dataset gen_toy(int n, double lo, double hi, std::uint64_t seed);
CanonicalEquation toy_equation();

/// Input, activation, one product neuron and one output, with x1^2 and
/// cos(w x2) wired into the product. `library` must hold square and cos.
LocalStructure toy_structure(const SymbolLibrary& library);

struct PowerSystemSpec {
    int nodes = 0;
    Eigen::MatrixXd G;
    Eigen::MatrixXd B;

    void validate() const;

    /// Random spanning tree over `nodes` plus `extra_lines` chords, with
    /// line parameters drawn from [0.5, 3] (G) and [-3, -0.5] (B).
    static PowerSystemSpec random(int nodes, int extra_lines, std::uint64_t seed);
};

/// x = (u1, v1, ..., uM, vM), y = (p1, q1, ..., pM, qM).
Dataset gen_power(const PowerSystemSpec& spec, int n, std::pair<double, double> voltage_range, std::uint64_t seed);
CanonicalEquation power_equation(const PowerSystemSpec& spec);

struct MassDamperSpec {
    int nodes = 0;
    Eigen::MatrixXd D;         // nodes x lines incidence
    Eigen::VectorXd damping;   // diagonal of R, one per line
    Eigen::VectorXd mass;      // diagonal of M, one per node
    double step = 0.01;
    double duration = 60.0;

    void validate() const;
    Eigen::MatrixXd system_matrix() const;  // -D R D^T M^-1

    /// Random spanning tree plus `extra_lines` chords; damping from [0.05, 0.3],
    /// masses from [1, 3].
    static MassDamperSpec random(int nodes, int extra_lines, std::uint64_t seed);
};

/// Forward-Euler trajectory from a random initial state in [-1, 1]^n; rows of
/// X are q(t) and rows of Y are A q(t). Returns the whole trajectory; split
/// with split_half.
Dataset gen_massdamper(const MassDamperSpec& spec, std::uint64_t seed);
Dataset gen_massdamper_from(const MassDamperSpec& spec, const Eigen::VectorXd& q0);
CanonicalEquation massdamper_equation(const MassDamperSpec& spec);

/// First half (rounded down) and the rest.
std::pair<Dataset, Dataset> split_half(const Dataset& ds);

/// Adds N(0, (rms_c * 10^(-snr/20))^2) noise to every output column c.
Dataset add_noise(const Dataset& ds, std::optional<double> snr_db, std::uint64_t seed);

/// CSV with header x1..xn,y1..ym and 17 significant digits.
void write_csv(const std::filesystem::path& path, const Dataset& ds);
Dataset read_csv(const std::filesystem::path& path);

nlohmann::json meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

/// Writes `<stem>.csv` and `<stem>.meta.json`.
void save_dataset(const std::filesystem::path& dir, const std::string& stem, const Dataset& ds);
/// Reads `<stem>.csv` and, if present, `<stem>.meta.json`.
Dataset load_dataset(const std::filesystem::path& dir, const std::string& stem);

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace consol
