#include "consol/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "consol/errors.hpp"

namespace consol {

namespace {

constexpr std::pair<double, double> kVoltageRange{0.5, 1.5};
constexpr std::uint64_t kTestSeedOffset = 0x9E3779B97F4A7C15ULL;

// Reads fields of one JSON object and rejects keys nobody asked for.
class Strict {
public:
    Strict(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T value{};
        get(key, value);
        out = value;
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::set<Connection> connections_from(const nlohmann::json& j, const std::string& where) {
    std::set<Connection> out;
    if (!j.is_array()) throw ConfigError(where + ": expected a list of [stage, from, to]");
    for (const auto& c : j) {
        if (!c.is_array() || c.size() != 3) throw ConfigError(where + ": entries are [stage, from, to]");
        try {
            out.insert({c[0].get<int>(), c[1].get<int>(), c[2].get<int>()});
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return out;
}

nlohmann::json connections_to(const std::set<Connection>& cs) {
    auto out = nlohmann::json::array();
    for (const auto& c : cs) out.push_back({c.stage, c.from, c.to});
    return out;
}

std::string kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Activation: return "activation";
        case LayerKind::Multiplication: return "multiplication";
        case LayerKind::Summation: return "summation";
    }
    return "?";
}

LayerKind kind_from(const std::string& s) {
    if (s == "activation") return LayerKind::Activation;
    if (s == "multiplication") return LayerKind::Multiplication;
    if (s == "summation") return LayerKind::Summation;
    throw ConfigError("unknown layer kind '" + s + "'");
}

nlohmann::json matrix_to(const Eigen::MatrixXd& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& where) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ConfigError(where + ": wrong row count");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ConfigError(where + ": wrong column count");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

}  // namespace

TrainConfig RunConfig::default_train() {
    TrainConfig t;
    t.batch_size = 20;
    return t;
}

void RunConfig::validate() const {
    try {
        if (version != kRunConfigVersion) throw ConfigError("unsupported config version " + std::to_string(version));
        if (!is_dataset_name(dataset.name)) throw ConfigError("unknown dataset '" + dataset.name + "'");
        if (dataset.n_train.value_or(1) <= 0 || dataset.n_test.value_or(1) <= 0) {
            throw ConfigError("sample counts must be positive");
        }
        if (dataset.nodes < 1 || dataset.extra_lines < 0) throw ConfigError("bad node or line count");
        if (library.empty()) throw ConfigError("symbol library is empty");
        SymbolLibrary::from_names(library);
        if (mult_neurons.value_or(1) < 1) throw ConfigError("mult_neurons must be positive");
        if (layers != 3) throw ConfigError("only K = 3 (activation, product, summation) is supported");
        if (train.learning_rate <= 0 || train.epochs < 0 || train.batch_size < 0) {
            throw ConfigError("bad LoCaL training settings");
        }
        qlearn.validate();
        constraints.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

bool is_dataset_name(const std::string& name) {
    return name == "syn1" || name == "syn2" || name == "pow" || name == "mas" || name == "toy";
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    Strict top(j, "config");
    if (!j.is_object() || !j.contains("version")) throw ConfigError("config: missing 'version'");
    top.get("version", cfg.version);
    if (cfg.version != kRunConfigVersion) throw ConfigError("unsupported config version " + std::to_string(cfg.version));
    if (const auto* d = top.child("dataset")) {
        Strict s(*d, "dataset");
        s.get("name", cfg.dataset.name);
        s.get("dir", cfg.dataset.dir);
        s.get_optional("n_train", cfg.dataset.n_train);
        s.get_optional("n_test", cfg.dataset.n_test);
        s.get("nodes", cfg.dataset.nodes);
        s.get("extra_lines", cfg.dataset.extra_lines);
        s.get_optional("snr_db", cfg.dataset.snr_db);
        s.finish();
    }
    top.get("library", cfg.library);
    top.get_optional("mult_neurons", cfg.mult_neurons);
    top.get("layers", cfg.layers);
    if (const auto* q = top.child("qlearn")) {
        Strict s(*q, "qlearn");
        auto& c = cfg.qlearn;
        s.get("gamma", c.gamma);
        s.get("epsilon", c.epsilon);
        s.get("max_episodes", c.max_episodes);
        s.get("stop_lambda", c.stop_lambda);
        s.get("target_update_interval", c.target_update_interval);
        s.get("buffer_capacity", c.buffer_capacity);
        s.get("minibatch_size", c.minibatch_size);
        s.get("q_lr", c.q_lr);
        s.get("r_lr", c.r_lr);
        s.get("q_epochs", c.q_epochs);
        s.get("r_epochs", c.r_epochs);
        s.get("icnn_hidden", c.icnn_hidden);
        s.get("box_restarts", c.box.restarts);
        s.get("box_steps", c.box.steps);
        s.get("box_tolerance", c.box.tolerance);
        s.get("retry_cap", c.retry_cap);
        s.get("random_draws", c.random_draws);
        s.get("polish_epochs", c.polish_epochs);
        s.get("dynamic_constraint", c.dynamic_constraint);
        s.get("simplify", c.simplify);
        s.get("simplify_epochs", c.simplify_epochs);
        s.get("simplify_tolerance", c.simplify_tolerance);
        s.finish();
    }
    if (const auto* t = top.child("train")) {
        Strict s(*t, "train");
        s.get("learning_rate", cfg.train.learning_rate);
        s.get("epochs", cfg.train.epochs);
        s.get("init_value", cfg.train.init_value);
        s.get("batch_size", cfg.train.batch_size);
        s.get("max_backoffs", cfg.train.max_backoffs);
        s.finish();
    }
    if (const auto* c = top.child("constraints")) {
        Strict s(*c, "constraints");
        s.get("max_factors_per_neuron", cfg.constraints.max_factors_per_neuron);
        s.get("max_terms_per_neuron", cfg.constraints.max_terms_per_neuron);
        s.get("corr_keep_threshold", cfg.constraints.corr_keep_threshold);
        if (const auto* f = s.child("frozen")) cfg.constraints.frozen_paths = connections_from(*f, "constraints.frozen");
        if (const auto* b = s.child("blocked")) cfg.constraints.blocked = connections_from(*b, "constraints.blocked");
        s.finish();
    }
    if (const auto* sd = top.child("seeds")) {
        Strict s(*sd, "seeds");
        s.get("data", cfg.seeds.data);
        s.get("search", cfg.seeds.search);
        s.get("probe", cfg.seeds.probe);
        s.finish();
    }
    top.get("output_dir", cfg.output_dir);
    top.finish();
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
    const auto& q = cfg.qlearn;
    auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    const nlohmann::json d = {{"name", cfg.dataset.name},         {"dir", cfg.dataset.dir},
                              {"n_train", opt(cfg.dataset.n_train)}, {"n_test", opt(cfg.dataset.n_test)},
                              {"nodes", cfg.dataset.nodes},       {"extra_lines", cfg.dataset.extra_lines},
                              {"snr_db", opt(cfg.dataset.snr_db)}};
    return {{"version", cfg.version},
            {"dataset", d},
            {"library", cfg.library},
            {"mult_neurons", opt(cfg.mult_neurons)},
            {"layers", cfg.layers},
            {"qlearn",
             {{"gamma", q.gamma},
              {"epsilon", q.epsilon},
              {"max_episodes", q.max_episodes},
              {"stop_lambda", q.stop_lambda},
              {"target_update_interval", q.target_update_interval},
              {"buffer_capacity", q.buffer_capacity},
              {"minibatch_size", q.minibatch_size},
              {"q_lr", q.q_lr},
              {"r_lr", q.r_lr},
              {"q_epochs", q.q_epochs},
              {"r_epochs", q.r_epochs},
              {"icnn_hidden", q.icnn_hidden},
              {"box_restarts", q.box.restarts},
              {"box_steps", q.box.steps},
              {"box_tolerance", q.box.tolerance},
              {"retry_cap", q.retry_cap},
              {"random_draws", q.random_draws},
              {"polish_epochs", q.polish_epochs},
              {"dynamic_constraint", q.dynamic_constraint},
              {"simplify", q.simplify},
              {"simplify_epochs", q.simplify_epochs},
              {"simplify_tolerance", q.simplify_tolerance}}},
            {"train",
             {{"learning_rate", cfg.train.learning_rate},
              {"epochs", cfg.train.epochs},
              {"init_value", cfg.train.init_value},
              {"batch_size", cfg.train.batch_size},
              {"max_backoffs", cfg.train.max_backoffs}}},
            {"constraints",
             {{"max_factors_per_neuron", cfg.constraints.max_factors_per_neuron},
              {"max_terms_per_neuron", cfg.constraints.max_terms_per_neuron},
              {"corr_keep_threshold", cfg.constraints.corr_keep_threshold},
              {"frozen", connections_to(cfg.constraints.frozen_paths)},
              {"blocked", connections_to(cfg.constraints.blocked)}}},
            {"seeds", {{"data", cfg.seeds.data}, {"search", cfg.seeds.search}, {"probe", cfg.seeds.probe}}},
            {"output_dir", cfg.output_dir}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

std::pair<int, int> default_counts(const std::string& name) {
    if (name == "pow") return {8760, 2190};
    if (name == "mas") return {3000, 3000};
    return {2000, 2000};
}

std::pair<Dataset, Dataset> generate_datasets(const DatasetConfig& cfg, std::uint64_t seed) {
    std::pair<Dataset, Dataset> out;
    const auto [def_train, def_test] = default_counts(cfg.name);
    const int n_train = cfg.n_train.value_or(def_train), n_test = cfg.n_test.value_or(def_test);
    if (cfg.name == "syn1" || cfg.name == "syn2") {
        out = gen_syn(cfg.name == "syn1" ? 1 : 2, n_train, n_test, seed);
    } else if (cfg.name == "toy") {
        out = {gen_toy(n_train, 1.0, 2.0, seed), gen_toy(n_test, 1.0, 2.0, seed + kTestSeedOffset)};
    } else if (cfg.name == "pow") {
        const auto spec = PowerSystemSpec::random(cfg.nodes, cfg.extra_lines, seed);
        out = {gen_power(spec, n_train, kVoltageRange, seed),
               gen_power(spec, n_test, kVoltageRange, seed + kTestSeedOffset)};
    } else if (cfg.name == "mas") {
        out = split_half(gen_massdamper(MassDamperSpec::random(cfg.nodes, cfg.extra_lines, seed), seed));
    } else {
        throw ConfigError("unknown dataset '" + cfg.name + "'");
    }
    out.first.meta.name = cfg.name;
    out.second.meta.name = cfg.name;
    if (cfg.snr_db) {
        out.first = add_noise(out.first, cfg.snr_db, seed ^ 0x5151);
        out.second = add_noise(out.second, cfg.snr_db, seed ^ 0xA2A2);
    }
    return out;
}

nlohmann::json structure_to_json(const LocalStructure& s, const LocalWeights* weights) {
    nlohmann::json j;
    j["library"] = s.library.names();
    j["layer_sizes"] = s.layer_sizes;
    auto kinds = nlohmann::json::array();
    for (auto k : s.layer_kinds) kinds.push_back(kind_name(k));
    j["layer_kinds"] = kinds;
    auto inds = nlohmann::json::array();
    for (const auto& z : s.indicators) inds.push_back(matrix_to(z.cast<double>()));
    j["indicators"] = inds;
    if (weights) {
        auto sums = nlohmann::json::array();
        auto inner = nlohmann::json::array();
        for (std::size_t k = 0; k < s.layer_kinds.size(); ++k) {
            sums.push_back(matrix_to(weights->summation[k]));
            inner.push_back(std::vector<double>(weights->inner[k].data(),
                                                weights->inner[k].data() + weights->inner[k].size()));
        }
        j["weights"] = {{"summation", sums}, {"inner", inner}};
    }
    return j;
}

LocalStructure structure_from_json(const nlohmann::json& j) {
    try {
        Strict top(j, "structure");
        std::vector<std::string> lib;
        std::vector<std::string> kinds;
        LocalStructure s;
        top.get("library", lib);
        top.get("layer_sizes", s.layer_sizes);
        top.get("layer_kinds", kinds);
        top.child("weights");
        const auto* inds = top.child("indicators");
        top.finish();
        s.library = SymbolLibrary::from_names(lib);
        for (const auto& k : kinds) s.layer_kinds.push_back(kind_from(k));
        if (!inds || !inds->is_array() || inds->size() != kinds.size() || s.layer_sizes.size() != kinds.size() + 1) {
            throw ConfigError("structure: layer_sizes, layer_kinds and indicators disagree in length");
        }
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            s.indicators.push_back(matrix_from((*inds)[k], s.layer_sizes[k], s.layer_sizes[k + 1],
                                               "structure.indicators")
                                       .cast<int>());
        }
        s.validate();
        return s;
    } catch (const StructureError& e) {
        throw ConfigError(std::string("structure: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("structure: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("structure: ") + e.what());
    }
}

std::optional<LocalWeights> weights_from_json(const nlohmann::json& j, const LocalStructure& s) {
    if (!j.contains("weights")) return std::nullopt;
    try {
        const auto& w = j.at("weights");
        auto out = LocalWeights::zeros_like(s);
        for (std::size_t k = 0; k < s.layer_kinds.size(); ++k) {
            const auto& sm = w.at("summation")[k];
            if (out.summation[k].size() > 0) {
                out.summation[k] = matrix_from(sm, out.summation[k].rows(), out.summation[k].cols(), "weights");
            }
            const auto inner = w.at("inner")[k].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(inner.size()) != out.inner[k].size()) {
                throw ConfigError("weights: inner length mismatch at layer " + std::to_string(k));
            }
            for (std::size_t n = 0; n < inner.size(); ++n) out.inner[k](static_cast<Eigen::Index>(n)) = inner[n];
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("weights: ") + e.what());
    }
}

}  // namespace consol
