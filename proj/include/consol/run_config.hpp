#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "consol/datasets.hpp"
#include "consol/local_net.hpp"
#include "consol/q_learning.hpp"
#include "consol/search_mdp.hpp"

namespace consol {

inline constexpr int kRunConfigVersion = 1;

struct DatasetConfig {
    std::string name = "syn1";   // syn1, syn2, pow, mas or toy
    std::string dir = "data";    // holds <name>_train and <name>_test
    std::optional<int> n_train;  // default per dataset, see default_counts()
    std::optional<int> n_test;
    int nodes = 3;               // pow and mas
    int extra_lines = 0;         // pow and mas
    std::optional<double> snr_db;
};

struct SeedConfig {
    std::uint64_t data = 1;
    std::uint64_t search = 1;
    std::uint64_t probe = 1;
};

/// Everything a search run depends on. Defaults are the reference
/// hyperparameters; the LoCaL fit uses mini-batches of 20.
struct RunConfig {
    int version = kRunConfigVersion;
    DatasetConfig dataset;
    std::vector<std::string> library{"id", "square", "cos"};
    std::optional<int> mult_neurons;  // default: 3 per output
    int layers = 3;  // K; only the activation, product, summation form is supported
    QLearnConfig qlearn;
    TrainConfig train = default_train();
    ConstraintConfig constraints;
    SeedConfig seeds;
    std::string output_dir = "out";

    static TrainConfig default_train();

    /// Throws ConfigError on out-of-range fields.
    void validate() const;
};

/// Unknown keys, wrong types and a missing or unsupported version raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);

/// Default sample counts: 2000/2000 for syn1, syn2 and toy, 8760/2190 for pow;
/// mas splits its 6000-step trajectory in half and ignores both.
std::pair<int, int> default_counts(const std::string& name);

/// Known dataset names.
bool is_dataset_name(const std::string& name);

/// Train and test sets for the configured dataset, noise applied when set.
std::pair<Dataset, Dataset> generate_datasets(const DatasetConfig& cfg, std::uint64_t seed);

/// Structure (and optional weights) as JSON; the library is stored by name.
nlohmann::json structure_to_json(const LocalStructure& s, const LocalWeights* weights = nullptr);
LocalStructure structure_from_json(const nlohmann::json& j);
std::optional<LocalWeights> weights_from_json(const nlohmann::json& j, const LocalStructure& s);

}  // namespace consol
