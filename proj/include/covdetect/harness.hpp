#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "covdetect/embed.hpp"
#include "covdetect/errordist.hpp"
#include "covdetect/model.hpp"
#include "covdetect/phase.hpp"
#include "covdetect/solvers.hpp"

namespace covdetect::harness {

using nlohmann::json;

struct ConfigError : std::runtime_error {
    ConfigError(int line, const std::string& message)
        : std::runtime_error(line > 0
                                 ? "line " + std::to_string(line) + ": " + message
                                 : message),
          line_no(line) {}
    int line_no = 0;
};

// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct Table {
    std::string name;  // file stem
    std::vector<std::string> columns;
    std::vector<std::vector<json>> rows;

    void add_row(std::vector<json> cells) { rows.push_back(std::move(cells)); }
};

// ---------------------------------------------------------------------------
// Configuration: a flat key = value document. '#' starts a comment. Unknown
// or duplicate keys are hard errors with their line number.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string experiment;
    int N = 0, K = 0, L = 0, M = 0, b = 0;
    int trials = 0, n_samples = 0, n_thresholds = 81;
    std::vector<int> L_list, K_list;
    double noise_var = -1.0;  // < 0: derived from L at 10 dB per-symbol SNR
    double gamma_active = 1.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string kind = "gaussian";
    std::string method = "covmatch";
    bool empirical = false;
    int max_sweeps = 500;
    double tol = 1e-4;
    int refactor_every = 50;
    std::string regularizer = "none";
    double lambda = 0.0;
    double epsilon = 0.1;
    double qp_tol = 1e-6;
    double rank_tol = 1e-9;
    double strict_eps = 1e-9;
    std::vector<double> thresholds;
    std::vector<std::string> arms = {"mle", "nnls"};

    // Environment-level settings, not part of the echoed experiment identity.
    std::string out_dir = ".";
    std::string format = "csv";
    int threads = 0;

    double resolved_noise_var(int length) const {
        return noise_var > 0.0
                   ? noise_var
                   : model::SystemConfig::default_noise_var(length, gamma_active);
    }

    solvers::SolverConfig solver_config(std::uint64_t solver_seed) const {
        solvers::SolverConfig cfg;
        cfg.max_sweeps = max_sweeps;
        cfg.tol = tol;
        cfg.refactor_every = refactor_every;
        cfg.antennas = std::max(M, 1);
        cfg.seed = solver_seed;
        if (regularizer == "none") cfg.regularizer = solvers::Regularizer::none;
        else if (regularizer == "l1") cfg.regularizer = solvers::Regularizer::l1;
        else if (regularizer == "log_sum") cfg.regularizer = solvers::Regularizer::log_sum;
        else throw ConfigError(0, "unknown regularizer '" + regularizer + "'");
        cfg.lambda = lambda;
        cfg.epsilon = epsilon;
        return cfg;
    }
};

namespace detail {

struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

class KeyValueDoc {
  public:
    explicit KeyValueDoc(std::istream& in) {
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::string body = trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos)
                throw ConfigError(line_no, "expected 'key = value'");
            const std::string key = trim(body.substr(0, eq));
            const std::string value = trim(body.substr(eq + 1));
            if (key.empty()) throw ConfigError(line_no, "empty key");
            if (entries_.count(key))
                throw ConfigError(line_no, "duplicate key '" + key + "'");
            entries_[key] = Entry{value, line_no, false};
        }
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    const Entry* fetch(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }

    void reject_unused() const {
        for (const auto& [key, entry] : entries_)
            if (!entry.used)
                throw ConfigError(entry.line, "unknown key '" + key + "'");
    }

  private:
    std::map<std::string, Entry> entries_;
};

inline long long parse_int(const Entry& e, const std::string& key) {
    long long v = 0;
    const auto res = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (res.ec != std::errc() || res.ptr != e.value.data() + e.value.size())
        throw ConfigError(e.line, "key '" + key + "': expected integer, got '" + e.value + "'");
    return v;
}

inline double parse_double(const Entry& e, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError(e.line, "key '" + key + "': expected number, got '" + e.value + "'");
    }
}

template <typename T, typename Parse>
inline std::vector<T> parse_list(const Entry& e, const std::string& key, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty())
            throw ConfigError(e.line, "key '" + key + "': empty list element");
        out.push_back(parse(Entry{t, e.line, true}, key));
    }
    if (out.empty()) throw ConfigError(e.line, "key '" + key + "': empty list");
    return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
    detail::KeyValueDoc doc(in);
    ExperimentConfig cfg;

    auto get_int = [&](const char* key, int& dst) {
        if (const auto* e = doc.fetch(key)) dst = static_cast<int>(detail::parse_int(*e, key));
    };
    auto get_double = [&](const char* key, double& dst) {
        if (const auto* e = doc.fetch(key)) dst = detail::parse_double(*e, key);
    };
    auto get_string = [&](const char* key, std::string& dst) {
        if (const auto* e = doc.fetch(key)) dst = e->value;
    };

    get_string("experiment", cfg.experiment);
    get_int("N", cfg.N);
    get_int("K", cfg.K);
    get_int("L", cfg.L);
    get_int("M", cfg.M);
    get_int("b", cfg.b);
    get_int("trials", cfg.trials);
    get_int("n_samples", cfg.n_samples);
    get_int("n_thresholds", cfg.n_thresholds);
    if (const auto* e = doc.fetch("L_list"))
        cfg.L_list = detail::parse_list<int>(*e, "L_list", [](const detail::Entry& x, const std::string& k) {
            return static_cast<int>(detail::parse_int(x, k));
        });
    if (const auto* e = doc.fetch("K_list"))
        cfg.K_list = detail::parse_list<int>(*e, "K_list", [](const detail::Entry& x, const std::string& k) {
            return static_cast<int>(detail::parse_int(x, k));
        });
    if (const auto* e = doc.fetch("noise_var")) {
        if (e->value == "auto")
            cfg.noise_var = -1.0;
        else
            cfg.noise_var = detail::parse_double(*e, "noise_var");
    }
    get_double("gamma_active", cfg.gamma_active);
    if (const auto* e = doc.fetch("seed")) {
        cfg.seed = static_cast<std::uint64_t>(detail::parse_int(*e, "seed"));
        cfg.seed_set = true;
    }
    get_string("kind", cfg.kind);
    get_string("method", cfg.method);
    if (const auto* e = doc.fetch("empirical")) {
        if (e->value == "true") cfg.empirical = true;
        else if (e->value == "false") cfg.empirical = false;
        else throw ConfigError(e->line, "key 'empirical': expected true or false");
    }
    get_int("max_sweeps", cfg.max_sweeps);
    get_double("tol", cfg.tol);
    get_int("refactor_every", cfg.refactor_every);
    get_string("regularizer", cfg.regularizer);
    get_double("lambda", cfg.lambda);
    get_double("epsilon", cfg.epsilon);
    get_double("qp_tol", cfg.qp_tol);
    get_double("rank_tol", cfg.rank_tol);
    get_double("strict_eps", cfg.strict_eps);
    if (const auto* e = doc.fetch("thresholds"))
        cfg.thresholds = detail::parse_list<double>(*e, "thresholds", detail::parse_double);
    if (const auto* e = doc.fetch("arms"))
        cfg.arms = detail::parse_list<std::string>(*e, "arms", [](const detail::Entry& x, const std::string&) {
            return x.value;
        });

    doc.reject_unused();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
    return parse_config(in);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

struct ResultRecord {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> echo;
    std::vector<Table> tables;
    std::vector<std::string> files;
};

namespace detail {

inline std::string cell_to_text(const json& c) {
    if (c.is_string()) return c.get<std::string>();
    if (c.is_number_integer()) return std::to_string(c.get<long long>());
    if (c.is_number_unsigned()) return std::to_string(c.get<unsigned long long>());
    if (c.is_number_float()) return format_double(c.get<double>());
    return c.dump();
}

inline void write_csv(const std::string& path, const Table& table,
                      const std::vector<std::pair<std::string, std::string>>& echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& [k, v] : echo) out << "# " << k << " = " << v << "\n";
    for (std::size_t c = 0; c < table.columns.size(); ++c)
        out << (c ? "," : "") << table.columns[c];
    out << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << cell_to_text(row[c]);
        out << "\n";
    }
}

inline void write_json(const std::string& path, const Table& table,
                       const std::vector<std::pair<std::string, std::string>>& echo) {
    nlohmann::ordered_json doc;
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : echo) cfg[k] = v;
    doc["config"] = std::move(cfg);
    doc["columns"] = table.columns;
    doc["rows"] = table.rows;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << doc.dump(2) << "\n";
}

inline void emit(ResultRecord& record, const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    for (const auto& table : record.tables) {
        const std::string ext = cfg.format == "json" ? ".json" : ".csv";
        const std::string path =
            (std::filesystem::path(cfg.out_dir) / (table.name + ext)).string();
        if (cfg.format == "json")
            write_json(path, table, record.echo);
        else
            write_csv(path, table, record.echo);
        record.files.push_back(path);
    }
}

inline std::uint64_t fnv1a(const void* data, std::size_t nbytes,
                           std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < nbytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t hash_matrix(const Eigen::MatrixXcd& m, std::uint64_t h) {
    return fnv1a(m.data(), sizeof(std::complex<double>) * m.size(), h);
}

inline std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(0, message);
}

// The echoed key set is the experiment identity: repeating a run from the
// echo reproduces the output byte for byte.
inline std::vector<std::pair<std::string, std::string>> make_echo(
    const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> e;
    auto put = [&](const char* k, const std::string& v) { e.emplace_back(k, v); };
    put("tool", "covdetect 0.1.0");
    put("experiment", c.experiment);
    put("N", std::to_string(c.N));
    put("K", std::to_string(c.K));
    put("L", std::to_string(c.L));
    put("M", std::to_string(c.M));
    put("b", std::to_string(c.b));
    put("trials", std::to_string(c.trials));
    put("n_samples", std::to_string(c.n_samples));
    put("n_thresholds", std::to_string(c.n_thresholds));
    auto join_int = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    if (!c.L_list.empty()) put("L_list", join_int(c.L_list));
    if (!c.K_list.empty()) put("K_list", join_int(c.K_list));
    put("noise_var", c.noise_var > 0.0 ? format_double(c.noise_var) : "auto");
    put("gamma_active", format_double(c.gamma_active));
    put("seed", std::to_string(c.seed));
    put("kind", c.kind);
    put("method", c.method);
    put("empirical", c.empirical ? "true" : "false");
    put("max_sweeps", std::to_string(c.max_sweeps));
    put("tol", format_double(c.tol));
    put("refactor_every", std::to_string(c.refactor_every));
    put("regularizer", c.regularizer);
    put("lambda", format_double(c.lambda));
    put("epsilon", format_double(c.epsilon));
    put("qp_tol", format_double(c.qp_tol));
    put("rank_tol", format_double(c.rank_tol));
    put("strict_eps", format_double(c.strict_eps));
    if (!c.thresholds.empty()) {
        std::string s;
        for (std::size_t i = 0; i < c.thresholds.size(); ++i)
            s += (i ? "," : "") + format_double(c.thresholds[i]);
        put("thresholds", s);
    }
    {
        std::string s;
        for (std::size_t i = 0; i < c.arms.size(); ++i) s += (i ? "," : "") + c.arms[i];
        put("arms", s);
    }
    return e;
}

inline Eigen::VectorXd resolve_thresholds(const ExperimentConfig& cfg) {
    if (!cfg.thresholds.empty()) {
        Eigen::VectorXd t(cfg.thresholds.size());
        for (std::size_t i = 0; i < cfg.thresholds.size(); ++i) t[i] = cfg.thresholds[i];
        for (Eigen::Index i = 1; i < t.size(); ++i)
            require(t[i] >= t[i - 1], "thresholds must be sorted ascending");
        return t;
    }
    // Geometric ladder over [gamma/1e4, 2 gamma], with 0 prepended.
    const int n = std::max(cfg.n_thresholds, 2);
    Eigen::VectorXd t(n + 1);
    t[0] = 0.0;
    const double lo = cfg.gamma_active * 1e-4;
    const double hi = cfg.gamma_active * 2.0;
    for (int i = 0; i < n; ++i)
        t[i + 1] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    return t;
}

// Threshold at which the two pooled error rates cross, and the rate there.
struct EqualError {
    double threshold = 0.0;
    double error_rate = 1.0;
    double pfa = 1.0;
    double pmd = 0.0;
};

inline EqualError equal_error_point(std::vector<double> active_vals,
                                    std::vector<double> inactive_vals) {
    std::sort(active_vals.begin(), active_vals.end());
    std::sort(inactive_vals.begin(), inactive_vals.end());
    std::vector<double> candidates;
    candidates.push_back(0.0);
    candidates.insert(candidates.end(), active_vals.begin(), active_vals.end());
    candidates.insert(candidates.end(), inactive_vals.begin(), inactive_vals.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()),
                     candidates.end());
    EqualError best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double l : candidates) {
        const double pfa =
            inactive_vals.empty()
                ? 0.0
                : static_cast<double>(inactive_vals.end() -
                                      std::lower_bound(inactive_vals.begin(),
                                                       inactive_vals.end(), l)) /
                      inactive_vals.size();
        const double pmd =
            active_vals.empty()
                ? 0.0
                : static_cast<double>(std::lower_bound(active_vals.begin(),
                                                       active_vals.end(), l) -
                                      active_vals.begin()) /
                      active_vals.size();
        const double gap = std::abs(pfa - pmd);
        if (gap < best_gap - 1e-15) {
            best_gap = gap;
            best = EqualError{l, 0.5 * (pfa + pmd), pfa, pmd};
        }
    }
    return best;
}

struct Histogram {
    std::vector<double> bin_lo, bin_hi, density;
};

// Freedman-Diaconis bins over the continuous part; density normalized by the
// total count, so mass at exact zeros is reported separately.
inline Histogram histogram_fd(std::vector<double> values, std::size_t total_count) {
    Histogram h;
    if (values.empty() || total_count == 0) return h;
    std::sort(values.begin(), values.end());
    const double lo = values.front();
    const double hi = values.back();
    const double q1 = values[values.size() / 4];
    const double q3 = values[(values.size() * 3) / 4];
    double width = 2.0 * (q3 - q1) /
                   std::cbrt(static_cast<double>(values.size()));
    if (!(width > 0.0)) width = (hi - lo) / 50.0;
    if (!(width > 0.0)) width = 1.0;
    const int nbins =
        std::max(1, static_cast<int>(std::ceil((hi - lo) / width)) + 1);
    const double step = nbins > 1 ? (hi - lo) / (nbins - 1) : width;
    std::vector<long> counts(nbins, 0);
    for (double v : values) {
        int idx = step > 0.0 ? static_cast<int>((v - lo) / step) : 0;
        idx = std::min(std::max(idx, 0), nbins - 1);
        ++counts[idx];
    }
    for (int i = 0; i < nbins; ++i) {
        h.bin_lo.push_back(lo + i * step);
        h.bin_hi.push_back(lo + (i + 1) * step);
        h.density.push_back(static_cast<double>(counts[i]) /
                            (static_cast<double>(total_count) * step));
    }
    return h;
}

inline double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / (static_cast<double>(v.size()) - 1.0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

namespace detail {

inline Table phase_grid_table(const std::string& name,
                              const phase::PhaseGrid& grid, int b) {
    Table t;
    t.name = name;
    const double denom = static_cast<double>(grid.N) * grid.Q;
    if (b > 0)
        t.columns = {"L", "K", "L2_over_N2b", "K_over_N2b", "success_fraction",
                     "n_trials", "n_inconclusive"};
    else
        t.columns = {"L", "K", "L2_over_N", "K_over_N", "success_fraction",
                     "n_trials", "n_inconclusive"};
    for (std::size_t li = 0; li < grid.L_list.size(); ++li)
        for (std::size_t ki = 0; ki < grid.K_list.size(); ++ki) {
            const int L = grid.L_list[li];
            const int K = grid.K_list[ki];
            t.add_row({L, K, static_cast<double>(L) * L / denom,
                       static_cast<double>(K) / denom,
                       grid.success_fraction(li, ki), grid.trials,
                       grid.inconclusive(li, ki)});
        }
    return t;
}

inline ResultRecord run_phase(const ExperimentConfig& cfg, bool embedded) {
    require(cfg.N >= 1, "phase: N must be >= 1");
    require(!cfg.L_list.empty(), "phase: L_list is required");
    require(!cfg.K_list.empty(), "phase: K_list is required");
    require(cfg.trials >= 1, "phase: trials must be >= 1");
    if (embedded) require(cfg.b >= 1, "phase-embed: b must be >= 1");

    phase::SweepOptions opt;
    opt.method = phase::method_from(cfg.method);
    opt.kind = model::sequence_kind_from(cfg.kind);
    opt.noise_var = cfg.noise_var > 0.0 ? cfg.noise_var : 1.0;
    opt.rank_tol = cfg.rank_tol;
    opt.strict_eps = cfg.strict_eps;
    opt.threads = cfg.threads;

    ResultRecord rec;
    rec.kind = cfg.experiment;
    rec.echo = make_echo(cfg);
    const phase::PhaseGrid grid =
        embedded ? embed::phase_sweep_embed(cfg.N, cfg.b, cfg.L_list, cfg.K_list,
                                            cfg.trials, cfg.seed, opt)
                 : phase::phase_sweep(cfg.N, cfg.L_list, cfg.K_list, cfg.trials,
                                      cfg.seed, opt);
    rec.tables.push_back(phase_grid_table(
        embedded ? "phase_grid_embed" : "phase_grid", grid, embedded ? cfg.b : 0));

    if (cfg.empirical && !embedded) {
        phase::EmpiricalOptions eopt;
        eopt.kind = opt.kind;
        eopt.noise_var = cfg.resolved_noise_var(cfg.L_list.front());
        eopt.gamma_active = cfg.gamma_active;
        eopt.threads = cfg.threads;
        const phase::PhaseGrid emp = phase::empirical_transition(
            cfg.N, cfg.L_list, cfg.K_list, cfg.trials,
            cfg.solver_config(cfg.seed), cfg.seed, eopt);
        rec.tables.push_back(phase_grid_table("phase_grid_empirical", emp, 0));
    }
    return rec;
}

inline Table roc_table(const std::string& name, const errordist::RocCurve& roc) {
    Table t;
    t.name = name;
    t.columns = {"l_th", "pfa", "pmd"};
    for (Eigen::Index i = 0; i < roc.thresholds.size(); ++i)
        t.add_row({roc.thresholds[i], roc.pfa[i], roc.pmd[i]});
    return t;
}

// Shared instance for prediction and simulation: one (S, support) draw; the
// simulated arm re-draws channel and noise per trial.
inline ResultRecord run_roc(const ExperimentConfig& cfg) {
    require(cfg.N >= 1 && cfg.K >= 0 && cfg.L >= 1 && cfg.M >= 1,
            "roc: N, L, M must be >= 1 and K >= 0");
    require(cfg.trials >= 1, "roc: trials must be >= 1");
    require(cfg.n_samples >= 1, "roc: n_samples must be >= 1");

    const double noise_var = cfg.resolved_noise_var(cfg.L);
    const auto kind = model::sequence_kind_from(cfg.kind);
    const model::SequenceMatrix S = model::gen_sequences(kind, cfg.L, cfg.N, cfg.seed);
    const model::GroundTruth gt =
        model::gen_ground_truth(cfg.N, cfg.K, cfg.gamma_active, cfg.seed);
    const Eigen::VectorXd thresholds = resolve_thresholds(cfg);

    errordist::ErrorDistOptions eopt;
    eopt.qp_tol = cfg.qp_tol;
    eopt.rank_tol = cfg.rank_tol;
    eopt.threads = cfg.threads;
    const errordist::ErrorSampleSet predicted = errordist::error_distribution(
        S.entries, gt, noise_var, cfg.M, cfg.n_samples, cfg.seed, eopt);
    const errordist::RocCurve roc_pred =
        errordist::predict_roc(predicted, gt, thresholds);

    // Simulated arm: coordinate-descent estimates pooled across trials.
    Eigen::MatrixXd estimates(cfg.trials, cfg.N);
    parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
        const std::uint64_t trial_seed = rng::derive(cfg.seed, rng::Stream::trial, t);
        const model::ReceivedSignal sig =
            model::simulate(S.entries, gt, cfg.M, noise_var, trial_seed);
        const model::CovMatrix cov = model::sample_covariance(sig.Y);
        const solvers::Estimate est = solvers::coordinate_descent_mle(
            S.entries, cov.sigma, noise_var, cfg.solver_config(trial_seed));
        estimates.row(t) = est.gamma_hat.transpose();
    });

    errordist::RocCurve roc_sim;
    roc_sim.thresholds = thresholds;
    roc_sim.pfa.resize(thresholds.size());
    roc_sim.pmd.resize(thresholds.size());
    std::vector<double> act, inact;
    for (int t = 0; t < cfg.trials; ++t)
        for (int n = 0; n < cfg.N; ++n)
            (gt.gamma0[n] > 0.0 ? act : inact).push_back(estimates(t, n));
    std::sort(act.begin(), act.end());
    std::sort(inact.begin(), inact.end());
    for (Eigen::Index i = 0; i < thresholds.size(); ++i) {
        const double l = thresholds[i];
        roc_sim.pfa[i] = inact.empty()
                             ? 0.0
                             : static_cast<double>(inact.end() -
                                                   std::lower_bound(inact.begin(),
                                                                    inact.end(), l)) /
                                   inact.size();
        roc_sim.pmd[i] = act.empty()
                             ? 0.0
                             : static_cast<double>(std::lower_bound(act.begin(),
                                                                    act.end(), l) -
                                                   act.begin()) /
                                   act.size();
    }

    ResultRecord rec;
    rec.kind = cfg.experiment;
    rec.echo = make_echo(cfg);
    rec.tables.push_back(roc_table("roc_predicted", roc_pred));
    rec.tables.push_back(roc_table("roc_simulated", roc_sim));
    return rec;
}

inline ResultRecord run_error_dist(const ExperimentConfig& cfg) {
    require(cfg.N >= 1 && cfg.L >= 1 && cfg.M >= 1 && cfg.K >= 0,
            "error-dist: N, L, M must be >= 1 and K >= 0");
    require(cfg.trials >= 1 && cfg.n_samples >= 1,
            "error-dist: trials and n_samples must be >= 1");

    const double noise_var = cfg.resolved_noise_var(cfg.L);
    const auto kind = model::sequence_kind_from(cfg.kind);
    const model::SequenceMatrix S = model::gen_sequences(kind, cfg.L, cfg.N, cfg.seed);
    const model::GroundTruth gt =
        model::gen_ground_truth(cfg.N, cfg.K, cfg.gamma_active, cfg.seed);

    errordist::ErrorDistOptions eopt;
    eopt.qp_tol = cfg.qp_tol;
    eopt.rank_tol = cfg.rank_tol;
    eopt.threads = cfg.threads;
    const errordist::ErrorSampleSet predicted = errordist::error_distribution(
        S.entries, gt, noise_var, cfg.M, cfg.n_samples, cfg.seed, eopt);

    Eigen::MatrixXd sim_err(cfg.trials, cfg.N);
    parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
        const std::uint64_t trial_seed = rng::derive(cfg.seed, rng::Stream::trial, t);
        const model::ReceivedSignal sig =
            model::simulate(S.entries, gt, cfg.M, noise_var, trial_seed);
        const model::CovMatrix cov = model::sample_covariance(sig.Y);
        const solvers::Estimate est = solvers::coordinate_descent_mle(
            S.entries, cov.sigma, noise_var, cfg.solver_config(trial_seed));
        sim_err.row(t) = (est.gamma_hat - gt.gamma0).transpose();
    });

    ResultRecord rec;
    rec.kind = cfg.experiment;
    rec.echo = make_echo(cfg);

    Table summary;
    summary.name = "error_summary";
    summary.columns = {"pipeline", "coord_class", "zero_mass", "stddev", "n_values"};

    auto add_pipeline = [&](const std::string& label, const Eigen::MatrixXd& err) {
        std::vector<double> act, inact_nonzero;
        long inact_total = 0, inact_zero = 0;
        for (Eigen::Index r = 0; r < err.rows(); ++r) {
            for (int c : gt.active_set) act.push_back(err(r, c));
            for (int c : gt.inactive_set) {
                ++inact_total;
                if (err(r, c) == 0.0)
                    ++inact_zero;
                else
                    inact_nonzero.push_back(err(r, c));
            }
        }
        Table hist;
        hist.name = "error_hist_" + label;
        hist.columns = {"coord_class", "bin_lo", "bin_hi", "density"};
        const Histogram ha = histogram_fd(act, act.size());
        for (std::size_t i = 0; i < ha.density.size(); ++i)
            hist.add_row({"active", ha.bin_lo[i], ha.bin_hi[i], ha.density[i]});
        const Histogram hi =
            histogram_fd(inact_nonzero, static_cast<std::size_t>(inact_total));
        for (std::size_t i = 0; i < hi.density.size(); ++i)
            hist.add_row({"inactive", hi.bin_lo[i], hi.bin_hi[i], hi.density[i]});
        rec.tables.push_back(std::move(hist));

        summary.add_row({label, "active", 0.0, stddev(act),
                         static_cast<long long>(act.size())});
        const double zero_mass =
            inact_total > 0 ? static_cast<double>(inact_zero) / inact_total : 0.0;
        std::vector<double> inact_all = inact_nonzero;
        inact_all.resize(inact_total, 0.0);
        summary.add_row({label, "inactive", zero_mass, stddev(inact_all),
                         static_cast<long long>(inact_total)});
    };

    add_pipeline("predicted", predicted.samples);
    add_pipeline("simulated", sim_err);
    rec.tables.push_back(std::move(summary));
    return rec;
}

inline ResultRecord run_compare(const ExperimentConfig& cfg) {
    require(cfg.N >= 1 && cfg.K >= 0 && cfg.M >= 1,
            "compare-nnls: N, M must be >= 1 and K >= 0");
    require(!cfg.L_list.empty(), "compare-nnls: L_list is required");
    require(cfg.trials >= 1, "compare-nnls: trials must be >= 1");
    require(!cfg.arms.empty(), "compare-nnls: arms is required");
    for (const auto& arm : cfg.arms)
        require(arm == "mle" || arm == "nnls",
                "compare-nnls: unknown arm '" + arm + "'");
    const auto kind = model::sequence_kind_from(cfg.kind);
    const int Q = 1 << cfg.b;

    ResultRecord rec;
    rec.kind = cfg.experiment;
    rec.echo = make_echo(cfg);
    Table t;
    t.name = "compare_arms";
    t.columns = {"L", "arm", "error_rate_equal", "threshold", "n_trials", "draws_hash"};

    for (int L : cfg.L_list) {
        const double noise_var = cfg.resolved_noise_var(L);
        struct ArmPool {
            std::vector<double> active, inactive;
        };
        std::vector<ArmPool> pools(cfg.arms.size());
        std::vector<std::vector<std::uint64_t>> arm_hashes(
            cfg.arms.size(), std::vector<std::uint64_t>(cfg.trials, 0));
        std::vector<std::vector<ArmPool>> trial_pools(
            cfg.trials, std::vector<ArmPool>(cfg.arms.size()));

        parallel_for(cfg.trials, cfg.threads, [&](std::size_t trial) {
            const std::uint64_t trial_seed =
                rng::derive(cfg.seed, rng::Stream::trial, static_cast<std::uint64_t>(L), trial);
            const model::SequenceMatrix S =
                embed::lift_sequences(kind, L, cfg.N, Q, trial_seed);
            const embed::EmbedGroundTruth egt = embed::gen_embed_ground_truth(
                cfg.N, cfg.K, Q, cfg.gamma_active, trial_seed);
            const model::GroundTruth gt = egt.as_ground_truth();
            const model::ReceivedSignal sig =
                model::simulate(S.entries, gt, cfg.M, noise_var, trial_seed);
            const model::CovMatrix cov = model::sample_covariance(sig.Y);

            for (std::size_t a = 0; a < cfg.arms.size(); ++a) {
                arm_hashes[a][trial] = hash_matrix(cov.sigma, 1469598103934665603ULL);
                const solvers::SolverConfig scfg = cfg.solver_config(trial_seed);
                const solvers::Estimate est =
                    cfg.arms[a] == "mle"
                        ? solvers::coordinate_descent_mle(S.entries, cov.sigma,
                                                          noise_var, scfg)
                        : solvers::nnls(S.entries, cov.sigma, noise_var, scfg);
                // Per-device block statistic: wrong decoded bits count as a miss.
                ArmPool& pool = trial_pools[trial][a];
                for (int n = 0; n < cfg.N; ++n) {
                    int best_q = 0;
                    double best = est.gamma_hat[static_cast<Eigen::Index>(n) * Q];
                    for (int q = 1; q < Q; ++q) {
                        const double v =
                            est.gamma_hat[static_cast<Eigen::Index>(n) * Q + q];
                        if (v > best) {
                            best = v;
                            best_q = q;
                        }
                    }
                    if (egt.selected[n] >= 0) {
                        pool.active.push_back(best_q == egt.selected[n]
                                                  ? best
                                                  : -std::numeric_limits<double>::infinity());
                    } else {
                        pool.inactive.push_back(best);
                    }
                }
            }
        });

        for (int trial = 0; trial < cfg.trials; ++trial)
            for (std::size_t a = 0; a < cfg.arms.size(); ++a) {
                auto& pool = pools[a];
                auto& tp = trial_pools[trial][a];
                pool.active.insert(pool.active.end(), tp.active.begin(), tp.active.end());
                pool.inactive.insert(pool.inactive.end(), tp.inactive.begin(),
                                     tp.inactive.end());
            }

        for (std::size_t a = 0; a < cfg.arms.size(); ++a) {
            std::uint64_t h = 1469598103934665603ULL;
            for (int trial = 0; trial < cfg.trials; ++trial)
                h = fnv1a(&arm_hashes[a][trial], sizeof(std::uint64_t), h);
            const EqualError eq =
                equal_error_point(pools[a].active, pools[a].inactive);
            t.add_row({L, cfg.arms[a], eq.error_rate, eq.threshold, cfg.trials,
                       hex(h)});
        }
    }
    rec.tables.push_back(std::move(t));
    return rec;
}

inline ResultRecord run_joint(const ExperimentConfig& cfg) {
    require(cfg.N >= 1 && cfg.K >= 0 && cfg.L >= 1 && cfg.M >= 1,
            "joint: N, L, M must be >= 1 and K >= 0");
    require(cfg.b >= 1, "joint: b must be >= 1");
    require(cfg.trials >= 1 && cfg.n_samples >= 1,
            "joint: trials and n_samples must be >= 1");

    const int Q = 1 << cfg.b;
    const double noise_var = cfg.resolved_noise_var(cfg.L);
    const auto kind = model::sequence_kind_from(cfg.kind);
    const model::SequenceMatrix S =
        embed::lift_sequences(kind, cfg.L, cfg.N, Q, cfg.seed);
    const embed::EmbedGroundTruth egt =
        embed::gen_embed_ground_truth(cfg.N, cfg.K, Q, cfg.gamma_active, cfg.seed);
    const model::GroundTruth gt = egt.as_ground_truth();
    const Eigen::VectorXd thresholds = resolve_thresholds(cfg);

    errordist::ErrorDistOptions eopt;
    eopt.qp_tol = cfg.qp_tol;
    eopt.rank_tol = cfg.rank_tol;
    eopt.threads = cfg.threads;
    const errordist::ErrorSampleSet predicted = errordist::error_distribution(
        S.entries, gt, noise_var, cfg.M, cfg.n_samples, cfg.seed, eopt);
    const errordist::RocCurve roc_pred =
        embed::predict_roc_joint(predicted, egt, thresholds);

    // Simulated arm: per-trial block peaks, thresholded afterwards.
    std::vector<std::vector<double>> act(cfg.trials), inact(cfg.trials);
    parallel_for(cfg.trials, cfg.threads, [&](std::size_t trial) {
        const std::uint64_t trial_seed = rng::derive(cfg.seed, rng::Stream::trial, trial);
        const model::ReceivedSignal sig =
            model::simulate(S.entries, gt, cfg.M, noise_var, trial_seed);
        const model::CovMatrix cov = model::sample_covariance(sig.Y);
        const solvers::Estimate est = solvers::coordinate_descent_mle(
            S.entries, cov.sigma, noise_var, cfg.solver_config(trial_seed));
        for (int n = 0; n < cfg.N; ++n) {
            int best_q = 0;
            double best = est.gamma_hat[static_cast<Eigen::Index>(n) * Q];
            for (int q = 1; q < Q; ++q) {
                const double v = est.gamma_hat[static_cast<Eigen::Index>(n) * Q + q];
                if (v > best) {
                    best = v;
                    best_q = q;
                }
            }
            if (egt.selected[n] >= 0)
                act[trial].push_back(best_q == egt.selected[n]
                                         ? best
                                         : -std::numeric_limits<double>::infinity());
            else
                inact[trial].push_back(best);
        }
    });
    std::vector<double> act_pool, inact_pool;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        act_pool.insert(act_pool.end(), act[trial].begin(), act[trial].end());
        inact_pool.insert(inact_pool.end(), inact[trial].begin(), inact[trial].end());
    }
    std::sort(act_pool.begin(), act_pool.end());
    std::sort(inact_pool.begin(), inact_pool.end());

    errordist::RocCurve roc_sim;
    roc_sim.mode = errordist::RocMode::joint_data;
    roc_sim.thresholds = thresholds;
    roc_sim.pfa.resize(thresholds.size());
    roc_sim.pmd.resize(thresholds.size());
    for (Eigen::Index i = 0; i < thresholds.size(); ++i) {
        const double l = thresholds[i];
        roc_sim.pfa[i] =
            inact_pool.empty()
                ? 0.0
                : static_cast<double>(inact_pool.end() -
                                      std::lower_bound(inact_pool.begin(),
                                                       inact_pool.end(), l)) /
                      inact_pool.size();
        roc_sim.pmd[i] =
            act_pool.empty()
                ? 0.0
                : static_cast<double>(std::lower_bound(act_pool.begin(),
                                                       act_pool.end(), l) -
                                      act_pool.begin()) /
                      act_pool.size();
    }

    ResultRecord rec;
    rec.kind = cfg.experiment;
    rec.echo = make_echo(cfg);
    rec.tables.push_back(roc_table("joint_predicted", roc_pred));
    rec.tables.push_back(roc_table("joint_simulated", roc_sim));
    return rec;
}

}  // namespace detail

inline ResultRecord compare(const ExperimentConfig& cfg) {
    if (!cfg.seed_set) throw ConfigError(0, "seed is required");
    ResultRecord rec = detail::run_compare(cfg);
    detail::emit(rec, cfg);
    return rec;
}

inline ResultRecord run(const ExperimentConfig& cfg) {
    if (!cfg.seed_set) throw ConfigError(0, "seed is required");
    if (cfg.format != "csv" && cfg.format != "json")
        throw ConfigError(0, "format must be csv or json");
    ResultRecord rec;
    if (cfg.experiment == "phase")
        rec = detail::run_phase(cfg, false);
    else if (cfg.experiment == "phase-embed")
        rec = detail::run_phase(cfg, true);
    else if (cfg.experiment == "roc")
        rec = detail::run_roc(cfg);
    else if (cfg.experiment == "error-dist")
        rec = detail::run_error_dist(cfg);
    else if (cfg.experiment == "compare-nnls")
        return compare(cfg);
    else if (cfg.experiment == "joint")
        rec = detail::run_joint(cfg);
    else
        throw ConfigError(0, "unknown experiment '" + cfg.experiment + "'");
    detail::emit(rec, cfg);
    return rec;
}

}  // namespace covdetect::harness
