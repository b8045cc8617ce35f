#include "consol/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "consol/convexity_probe.hpp"
#include "consol/datasets.hpp"
#include "consol/equation.hpp"
#include "consol/errors.hpp"
#include "consol/icnn.hpp"
#include "consol/metrics.hpp"
#include "consol/q_learning.hpp"
#include "consol/run_config.hpp"

namespace consol {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr double kConvergedLoss = 1e-6;
constexpr const char* kReportSchema = "consol.report/1";

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// "dir/stem" -> (dir, stem), tolerating a trailing .csv
std::pair<fs::path, std::string> split_stem(const std::string& arg) {
    fs::path p(arg);
    if (p.extension() == ".csv") p.replace_extension();
    return {p.has_parent_path() ? p.parent_path() : fs::path("."), p.filename().string()};
}

Dataset load_stem(const std::string& arg) {
    const auto [dir, stem] = split_stem(arg);
    return load_dataset(dir, stem);
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << text;
    } else {
        if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
        write_file_atomic(out_path, text);
    }
}

// "-10..10" (unit step), "a..b:step" or "a,b,c"
std::vector<double> parse_grid(const std::string& spec) {
    auto number = [&](std::string_view s) {
        double v = 0.0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw UsageError("bad grid value '" + std::string(s) + "'");
        return v;
    };
    std::vector<double> grid;
    if (const auto dots = spec.find(".."); dots != std::string::npos) {
        std::string_view rest(spec);
        rest.remove_prefix(dots + 2);
        double step = 1.0;
        std::string_view hi_s = rest;
        if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
            hi_s = rest.substr(0, colon);
            step = number(rest.substr(colon + 1));
        }
        const double lo = number(std::string_view(spec).substr(0, dots)), hi = number(hi_s);
        if (step <= 0 || hi < lo) throw UsageError("grid needs lo <= hi and a positive step");
        const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
        for (long i = 0; i <= n; ++i) grid.push_back(lo + static_cast<double>(i) * step);
    } else {
        std::string_view rest(spec);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            grid.push_back(number(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    }
    if (grid.empty()) throw UsageError("empty grid");
    return grid;
}

std::string episodes_csv(const SearchResult& res, const SearchSpace& space, bool timing) {
    std::string out = "t,actions,reward,nrmse,rejects,aborted,freezes,best_reward,seconds\n";
    for (const auto& l : res.logs) {
        out += std::to_string(l.t) + ',' + (l.aborted ? std::string() : action_bits(space, l.stages)) + ',' +
               fmt(l.reward) + ',' + fmt(l.nrmse) + ',' + std::to_string(l.rejects) + ',' + (l.aborted ? "1" : "0") +
               ',' + std::to_string(l.freezes.size()) + ',' + fmt(l.best_reward) + ',' +
               (timing ? fmt(l.seconds) : std::string()) + '\n';
    }
    return out;
}

MetricReport evaluate(const LocalStructure& s, const LocalWeights& w, const CanonicalEquation& eq, const Dataset& train,
                      const Dataset* test, const std::optional<CanonicalEquation>& truth) {
    MetricReport rep;
    rep.nrmse_train = model_nrmse(s, w, train);
    rep.nrmse_test = test ? model_nrmse(s, w, *test) : std::nan("");
    if (truth) rep.coefficients = e_c(*truth, eq);
    return rep;
}

nlohmann::json metrics_json(const MetricReport& rep) {
    auto j = to_json(rep);
    if (std::isnan(rep.nrmse_test)) j["nrmse_test"] = nullptr;
    return j;
}

nlohmann::json kept_json(const ConstraintConfig& c) {
    auto arr = nlohmann::json::array();
    for (const auto& k : c.kept) arr.push_back({{"output", k.output}, {"neuron", k.neuron}, {"correlation", k.correlation}});
    return arr;
}

// ---- subcommands ----

struct GenDataArgs {
    std::string name;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> snr;
    std::optional<int> n;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    if (!is_dataset_name(a.name)) throw UsageError("unknown dataset '" + a.name + "' (expected syn1, syn2, pow, mas or toy)");
    RunConfig cfg;
    if (!a.config.empty()) cfg = load_run_config(a.config);
    cfg.dataset.name = a.name;
    if (a.snr) cfg.dataset.snr_db = a.snr;
    if (a.n) cfg.dataset.n_train = cfg.dataset.n_test = *a.n;
    const std::uint64_t seed = a.seed.value_or(cfg.seeds.data);
    const fs::path dir = a.out.empty() ? fs::path(cfg.dataset.dir) : fs::path(a.out);
    auto [train, test] = generate_datasets(cfg.dataset, seed);
    fs::create_directories(dir);
    save_dataset(dir, a.name + "_train", train);
    save_dataset(dir, a.name + "_test", test);
    if (a.name == "toy") {
        const auto s = toy_structure(SymbolLibrary::from_names({"square", "cos"}));
        write_file_atomic(dir / "toy_structure.json", structure_to_json(s).dump(2) + "\n");
    }
    out << "wrote " << (dir / (a.name + "_train.csv")).string() << " (" << train.X.rows() << " rows) and "
        << (dir / (a.name + "_test.csv")).string() << " (" << test.X.rows() << " rows)\n";
    return kExitOk;
}

struct SearchArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool timing = false;
    int snapshot_every = 0;
};

int cmd_search(const SearchArgs& a, std::ostream& out) {
    RunConfig cfg = load_run_config(a.config);
    if (a.seed) cfg.seeds.search = *a.seed;
    const fs::path dir = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
    const Dataset train = load_dataset(cfg.dataset.dir, cfg.dataset.name + "_train");
    std::optional<Dataset> test;
    if (fs::exists(fs::path(cfg.dataset.dir) / (cfg.dataset.name + "_test.csv"))) {
        test = load_dataset(cfg.dataset.dir, cfg.dataset.name + "_test");
    }
    const auto lib = SymbolLibrary::from_names(cfg.library);
    const auto space = SearchSpace::standard(lib, train.n_inputs(), cfg.mult_neurons.value_or(3 * train.n_outputs()),
                                              train.n_outputs());
    fs::create_directories(dir);

    SearchHooks hooks;
    if (a.snapshot_every > 0) {
        fs::create_directories(dir / "snapshots");
        hooks.on_episode = [&](const EpisodeLog& log, const Agent& agent) {
            if (log.t % a.snapshot_every != 0) return;
            for (auto [name, net] : {std::pair{"qnet", &agent.neg_q}, std::pair{"rnet", &agent.neg_r}}) {
                std::ostringstream bin;
                write_icnn_binary(bin, *net);
                write_file_atomic(dir / "snapshots" / (std::string(name) + "_" + std::to_string(log.t) + ".bin"),
                                  bin.str());
            }
        };
    }
    const auto res = run_search(cfg.qlearn, space, train, cfg.train, cfg.constraints, cfg.seeds.search, hooks);
    const auto rep = evaluate(res.best_structure, res.best_weights, res.equation, train, test ? &*test : nullptr,
                              train.meta.truth);

    for (auto [name, net] : {std::pair{"qnet.bin", &res.agent.neg_q}, std::pair{"rnet.bin", &res.agent.neg_r}}) {
        std::ostringstream bin;
        write_icnn_binary(bin, *net);
        write_file_atomic(dir / name, bin.str());
    }
    write_file_atomic(dir / "structure.json", structure_to_json(res.best_structure, &res.best_weights).dump(2) + "\n");
    write_file_atomic(dir / "episodes.csv", episodes_csv(res, space, a.timing));
    write_file_atomic(dir / "equations.txt", to_text(res.equation));

    nlohmann::json report = {{"schema", kReportSchema},
                             {"dataset", cfg.dataset.name},
                             {"equations", to_json(res.equation)},
                             {"equations_text", to_text(res.equation)},
                             {"metrics", metrics_json(rep)},
                             {"best_reward", res.best_reward},
                             {"best_episode", res.best_episode},
                             {"episodes_run", res.episodes_run},
                             {"stopped_early", res.stopped_early},
                             {"polished_nrmse", res.polished_nrmse},
                             {"simplified_connections", res.simplified_connections},
                             {"kept_neurons", kept_json(res.constraints)},
                             {"config", to_json(cfg)}};
    // written last so a failed run never leaves a report behind
    write_file_atomic(dir / "report.json", report.dump(2) + "\n");
    out << to_text(res.equation);
    return kExitOk;
}

struct FitArgs {
    std::string structure;
    std::string data;
    std::string out;
    std::optional<double> init;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> batch;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
    const auto sj = read_json(a.structure);
    const auto s = structure_from_json(sj);
    const Dataset data = load_stem(a.data);
    if (data.n_inputs() != s.n_inputs() || data.n_outputs() != s.n_outputs()) {
        throw ConfigError("data has " + std::to_string(data.n_inputs()) + " inputs and " +
                          std::to_string(data.n_outputs()) + " outputs; the structure expects " +
                          std::to_string(s.n_inputs()) + " and " + std::to_string(s.n_outputs()));
    }
    TrainConfig tc = RunConfig::default_train();
    tc.epochs = 100;
    if (a.init) tc.init_value = *a.init;
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.lr) tc.learning_rate = *a.lr;
    if (a.batch) tc.batch_size = *a.batch;
    if (tc.epochs < 0 || tc.learning_rate <= 0 || tc.batch_size < 0) throw ConfigError("bad training settings");

    const auto start = LocalWeights::filled(s, tc.init_value);
    const auto params = live_parameters(s);
    const Eigen::VectorXd g0 = pack(gradients(s, start, data.X, data.Y).grad, params);
    FitResult fr;
    try {
        fr = fit(s, tc, data.X, data.Y);
    } catch (const FitError& e) {
        throw ConfigError(std::string("fit left the domain: ") + e.what());
    }
    const auto eq = extract_equation(s, fr.weights);
    const bool converged = fr.final_loss < kConvergedLoss;
    const Eigen::VectorXd fitted = weight_vector(s, fr.weights);
    nlohmann::json j = {{"initial_loss", fr.loss_history.front()},
                        {"final_loss", fr.final_loss},
                        {"epochs", tc.epochs},
                        {"init_value", tc.init_value},
                        {"converged", converged},
                        {"weights", std::vector<double>(fitted.begin(), fitted.end())},
                        {"equations", to_json(eq)},
                        {"equations_text", to_text(eq)},
                        {"nrmse", model_nrmse(s, fr.weights, data)}};
    if (!converged) {
        std::vector<int> zero;
        for (Eigen::Index k = 0; k < g0.size(); ++k) {
            if (std::abs(g0(k)) < 1e-12) zero.push_back(static_cast<int>(k));
        }
        j["diagnostic"] = zero.empty() ? "loss stayed above 1e-6"
                                       : "zero gradient at the starting point for " + std::to_string(zero.size()) +
                                             " of " + std::to_string(g0.size()) +
                                             " parameters; gradient steps cannot move them";
        j["zero_gradient_parameters"] = zero;
    }
    emit(j.dump(2) + "\n", a.out, out);
    return kExitOk;
}

struct ProbeArgs {
    std::string kind;
    std::string structure;
    std::string data;
    std::string target;
    std::string grid = "-10..10";
    std::string out;
    std::optional<std::uint64_t> seed;
    long n = 0;
    double tol = 1e-9;
    double lo = 0.0, hi = 1.0;
    int epochs = 100;
    int batch = 20;
    bool at_optimum = false;
};

// Structure, weights and data for the landscape probes: explicit files, or
// the toy problem fitted from 1.0 on U(1,2) data.
struct ProbeSubject {
    LocalStructure structure;
    LocalWeights weights;
    Dataset data;
};

ProbeSubject probe_subject(const ProbeArgs& a, std::uint64_t seed) {
    if (a.structure.empty()) {
        ProbeSubject p{toy_structure(SymbolLibrary::from_names({"square", "cos"})), {}, gen_toy(2000, 1.0, 2.0, seed)};
        TrainConfig tc = RunConfig::default_train();
        tc.epochs = a.epochs;
        tc.batch_size = a.batch;
        p.weights = fit(p.structure, tc, p.data.X, p.data.Y).weights;
        return p;
    }
    const auto sj = read_json(a.structure);
    ProbeSubject p{structure_from_json(sj), {}, a.data.empty() ? throw UsageError("--data is required with --structure")
                                                                : load_stem(a.data)};
    auto w = weights_from_json(sj, p.structure);
    if (!w) throw ConfigError(a.structure + " carries no weights");
    p.weights = *w;
    if (a.at_optimum) {
        TrainConfig tc = RunConfig::default_train();
        tc.epochs = a.epochs;
        tc.batch_size = a.batch;
        p.weights = fit_from(p.structure, p.weights, tc, p.data.X, p.data.Y).weights;
    }
    return p;
}

IcnnParams load_icnn(const fs::path& path) {
    if (path.extension() == ".json") {
        try {
            return icnn_from_json(read_json(path));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return read_icnn_binary(in);
    } catch (const std::runtime_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
    const std::uint64_t seed = a.seed.value_or(1);
    if (a.kind == "sweep") {
        LocalStructure s;
        Dataset data;
        if (a.structure.empty()) {
            s = toy_structure(SymbolLibrary::from_names({"square", "cos"}));
            data = gen_toy(2000, 0.0, 1.0, seed);
        } else {
            s = structure_from_json(read_json(a.structure));
            if (a.data.empty()) throw UsageError("--data is required with --structure");
            data = load_stem(a.data);
        }
        TrainConfig tc = RunConfig::default_train();
        tc.epochs = a.epochs;
        tc.batch_size = a.batch;
        emit(sweep_csv(init_sweep(s, data.X, data.Y, parse_grid(a.grid), tc)), a.out, out);
        return kExitOk;
    }
    if (a.kind == "segment") {
        if (a.target.empty()) throw UsageError("segment needs --target");
        const auto net = load_icnn(a.target);
        const long n = a.n > 0 ? a.n : 10000;
        const Eigen::VectorXd lo = Eigen::VectorXd::Constant(net.input_dim, a.lo);
        const Eigen::VectorXd hi = Eigen::VectorXd::Constant(net.input_dim, a.hi);
        const auto rep = segment_convexity_test([&](const Eigen::VectorXd& u) { return icnn_forward(net, u); }, lo, hi,
                                                n, a.tol, seed);
        const nlohmann::json j = {{"triples", rep.triples}, {"violations", rep.violations},
                                  {"worst_excess", rep.worst_excess}, {"tol", a.tol}};
        emit(j.dump(2) + "\n", a.out, out);
        return kExitOk;
    }
    if (a.kind == "region") {
        const auto p = probe_subject(a, seed);
        const auto est = estimate_region(p.structure, p.weights, p.data.X, p.data.Y, a.n > 0 ? static_cast<int>(a.n) : 100,
                                         seed);
        emit(to_json(est).dump(2) + "\n", a.out, out);
        return kExitOk;
    }
    if (a.kind == "second-deriv") {
        const auto p = probe_subject(a, seed);
        const int n_params = static_cast<int>(live_parameters(p.structure).size());
        std::mt19937_64 rng(seed);
        std::vector<double> x0(static_cast<std::size_t>(p.data.n_inputs()));
        for (int c = 0; c < p.data.n_inputs(); ++c) x0[static_cast<std::size_t>(c)] = p.data.X(0, c);
        std::string csv = "direction,y_prime,y_doubleprime,d2L,d2L_fd\n";
        for (long d = 0; d < (a.n > 0 ? a.n : 100); ++d) {
            const auto dir = random_unit_direction(n_params, rng);
            const double d2 = loss_second_derivative(p.structure, p.weights, p.data.X, p.data.Y, dir);
            const double fd = loss_second_derivative_fd(p.structure, p.weights, p.data.X, p.data.Y, dir);
            const auto yd = analytic_directional_derivs(p.structure, p.weights, x0, dir);
            csv += std::to_string(d) + ',' + fmt(yd.y_prime) + ',' + fmt(yd.y_doubleprime) + ',' + fmt(d2) + ',' +
                   fmt(fd) + '\n';
        }
        emit(csv, a.out, out);
        return kExitOk;
    }
    throw UsageError("unknown probe kind '" + a.kind + "' (expected sweep, segment, region or second-deriv)");
}

struct EvalArgs {
    std::string structure;
    std::string data;
    std::string test;
    std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto sj = read_json(a.structure);
    const auto s = structure_from_json(sj);
    const auto w = weights_from_json(sj, s);
    if (!w) throw ConfigError(a.structure + " carries no weights");
    const Dataset train = load_stem(a.data);
    std::optional<Dataset> test;
    if (!a.test.empty()) test = load_stem(a.test);
    const auto eq = extract_equation(s, *w);
    const auto rep = evaluate(s, *w, eq, train, test ? &*test : nullptr, train.meta.truth);
    const nlohmann::json j = {{"equations", to_json(eq)}, {"equations_text", to_text(eq)}, {"metrics", metrics_json(rep)}};
    emit(j.dump(2) + "\n", a.out, out);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Convex neuro-symbolic equation search"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate train/test CSVs and metadata");
    g->add_option("name", gen.name, "syn1, syn2, pow, mas or toy")->required();
    g->add_option("--config", gen.config, "Run config supplying generator settings");
    g->add_option("--seed", gen.seed, "Data seed");
    g->add_option("--snr", gen.snr, "Output SNR in dB");
    g->add_option("--n", gen.n, "Rows per split");
    g->add_option("--out", gen.out, "Output directory");

    SearchArgs search;
    auto* s = app.add_subcommand("search", "Run the structure search");
    s->add_option("--config", search.config, "Run config (JSON)")->required();
    s->add_option("--out", search.out, "Output directory");
    s->add_option("--seed", search.seed, "Override the search seed");
    s->add_flag("--timing", search.timing, "Record wall time per episode in episodes.csv");
    s->add_option("--snapshot-every", search.snapshot_every, "Save -Q and -R every N episodes");

    FitArgs fitargs;
    auto* f = app.add_subcommand("fit", "Fit coefficients of a fixed structure");
    f->add_option("--structure", fitargs.structure, "Structure JSON")->required();
    f->add_option("--data", fitargs.data, "Dataset stem, e.g. data/toy_train")->required();
    f->add_option("--init", fitargs.init, "Initial value of every weight");
    f->add_option("--epochs", fitargs.epochs, "Epochs");
    f->add_option("--lr", fitargs.lr, "Learning rate");
    f->add_option("--batch", fitargs.batch, "Mini-batch size (0 = full batch)");
    f->add_option("--out", fitargs.out, "Report path (stdout if absent)");

    ProbeArgs probe;
    auto* p = app.add_subcommand("probe", "Convexity and landscape probes");
    p->add_option("kind", probe.kind, "sweep, segment, region or second-deriv")->required();
    p->add_option("--structure", probe.structure, "Structure JSON (default: the toy problem)");
    p->add_option("--data", probe.data, "Dataset stem");
    p->add_option("--target", probe.target, "ICNN file for segment (.bin or .json)");
    p->add_option("--grid", probe.grid, "Sweep grid: lo..hi[:step] or a,b,c");
    p->add_option("--n", probe.n, "Triples (segment) or directions (region, second-deriv)");
    p->add_option("--tol", probe.tol, "Segment tolerance");
    p->add_option("--lo", probe.lo, "Segment box lower bound");
    p->add_option("--hi", probe.hi, "Segment box upper bound");
    p->add_option("--epochs", probe.epochs, "Fit epochs for sweep and toy probes");
    p->add_option("--batch", probe.batch, "Fit mini-batch size");
    p->add_option("--seed", probe.seed, "Probe seed");
    p->add_flag("--at-optimum", probe.at_optimum, "Refit the given weights before probing");
    p->add_option("--out", probe.out, "Output path (stdout if absent)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a fitted structure");
    e->add_option("--structure", ev.structure, "Structure JSON with weights")->required();
    e->add_option("--data", ev.data, "Training dataset stem")->required();
    e->add_option("--test", ev.test, "Test dataset stem");
    e->add_option("--out", ev.out, "Report path (stdout if absent)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex, out, err);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex, out, err);
        return kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_gen_data(gen, out);
        if (s->parsed()) return cmd_search(search, out);
        if (f->parsed()) return cmd_fit(fitargs, out);
        if (p->parsed()) return cmd_probe(probe, out);
        if (e->parsed()) return cmd_eval(ev, out);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << "\n" << app.help();
        return kExitUsage;
    } catch (const ConsistencyError& ex) {
        err << "consistency failure: " << ex.what() << "\n";
        return kExitConsistency;
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        err << "internal error: " << ex.what() << "\n";
        return kExitInternal;
    }
    return kExitUsage;
}

}  // namespace consol
