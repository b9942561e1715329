#include "srec/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "srec/digest.hpp"
#include "srec/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace srec::io {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

double parse_number(const std::string& raw, const std::string& where,
                    std::vector<std::string>& problems) {
    const std::string s = trim(raw);
    const auto slash = s.find('/');
    auto plain = [&](const std::string& t) -> double {
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0' || errno == ERANGE) {
            problems.push_back(where + ": cannot parse number '" + t + "'");
            return 0.0;
        }
        return v;
    };
    if (slash != std::string::npos) {
        const double num = plain(trim(s.substr(0, slash)));
        const double den = plain(trim(s.substr(slash + 1)));
        if (den == 0.0) {
            problems.push_back(where + ": zero denominator in '" + s + "'");
            return 0.0;
        }
        return num / den;
    }
    return plain(s);
}

long parse_integer(const std::string& raw, const std::string& where,
                   std::vector<std::string>& problems) {
    const double v = parse_number(raw, where, problems);
    const long n = std::lround(v);
    if (std::abs(v - n) > 1e-9) problems.push_back(where + ": expected an integer, got '" + raw + "'");
    return n;
}

std::vector<double> parse_list(const std::string& raw, const std::string& where,
                               std::vector<std::string>& problems) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(raw);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number(item, where, problems));
    }
    if (out.empty()) problems.push_back(where + ": empty list");
    return out;
}

using Section = std::map<std::string, std::string>;

std::map<std::string, Section> tokenize(const std::string& text, const std::string& origin) {
    std::map<std::string, Section> sections;
    std::string current;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::vector<std::string> problems;
    while (std::getline(is, line)) {
        ++lineno;
        // strip inline comments introduced by whitespace + '#'
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
                line.resize(i);
                break;
            }
        }
        const std::string t = trim(line);
        if (t.empty() || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                problems.push_back(origin + ":" + std::to_string(lineno) + ": malformed section header");
                continue;
            }
            current = trim(t.substr(1, t.size() - 2));
            sections.try_emplace(current);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            problems.push_back(origin + ":" + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        if (current.empty()) {
            problems.push_back(origin + ":" + std::to_string(lineno) + ": key outside any section");
            continue;
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (!sections[current].emplace(key, value).second) {
            problems.push_back(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key
                               + "' in [" + current + "]");
        }
    }
    if (!problems.empty()) {
        std::string msg = "cannot parse configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    return sections;
}

// Pulls `key` out of the section, recording unknown-key bookkeeping by
// erasing as it goes; missing keys surface as nullopt.
std::string* find_key(Section& sec, const std::string& key) {
    const auto it = sec.find(key);
    return it == sec.end() ? nullptr : &it->second;
}

}  // namespace

MarketConfig parse_config(const std::string& text, const std::string& origin) {
    auto sections = tokenize(text, origin);
    std::vector<std::string> problems;
    MarketConfig cfg;
    cfg.compliance.requirement.clear();

    // class sections must be contiguous: class.1 .. class.K
    std::vector<std::string> class_names;
    for (const auto& [name, _] : sections) {
        if (name.rfind("class.", 0) == 0) class_names.push_back(name);
    }
    const std::size_t n_classes = class_names.size();
    for (std::size_t k = 1; k <= n_classes; ++k) {
        const std::string expect = "class." + std::to_string(k);
        if (!sections.contains(expect)) {
            problems.push_back("class sections must be numbered 1.." + std::to_string(n_classes)
                               + " (missing [" + expect + "])");
        }
    }

    const std::set<std::string> known_compliance = {"T", "P", "delta", "R", "periods"};
    const std::set<std::string> known_class = {"pi", "h", "sigma", "zeta", "gamma", "nu0", "m0"};
    const std::set<std::string> known_scheme = {"dt", "x_nodes", "epsilon", "max_iters",
                                                "omega", "quad_nodes"};
    const std::set<std::string> known_run = {"seed", "n_agents", "out_dir", "threads"};

    for (const auto& [name, sec] : sections) {
        const std::set<std::string>* known = nullptr;
        if (name == "compliance") known = &known_compliance;
        else if (name == "scheme") known = &known_scheme;
        else if (name == "run") known = &known_run;
        else if (name.rfind("class.", 0) == 0) known = &known_class;
        else {
            problems.push_back("unknown section [" + name + "]");
            continue;
        }
        for (const auto& [key, _] : sec) {
            if (!known->contains(key)) {
                problems.push_back("unknown key '" + key + "' in [" + name + "]");
            }
        }
    }

    auto defaulted = [&cfg](const std::string& entry) { cfg.defaults_applied.push_back(entry); };

    if (auto it = sections.find("compliance"); it != sections.end()) {
        Section& sec = it->second;
        if (auto* v = find_key(sec, "T")) cfg.compliance.horizon_years = parse_number(*v, "compliance.T", problems);
        else problems.push_back("compliance.T is required");
        if (auto* v = find_key(sec, "P")) cfg.compliance.penalty = parse_number(*v, "compliance.P", problems);
        else problems.push_back("compliance.P is required");
        if (auto* v = find_key(sec, "delta")) cfg.compliance.smoothing_delta = parse_number(*v, "compliance.delta", problems);
        else { cfg.compliance.smoothing_delta = 0.05; defaulted("compliance.delta=0.05"); }
        if (auto* v = find_key(sec, "R")) cfg.compliance.requirement = parse_list(*v, "compliance.R", problems);
        else problems.push_back("compliance.R is required");
        if (auto* v = find_key(sec, "periods")) cfg.compliance.periods = static_cast<int>(parse_integer(*v, "compliance.periods", problems));
    } else {
        problems.push_back("section [compliance] is required");
    }

    for (std::size_t k = 1; k <= n_classes; ++k) {
        const std::string name = "class." + std::to_string(k);
        const auto it = sections.find(name);
        if (it == sections.end()) continue;
        Section& sec = it->second;
        SubPopulationParams pop;
        auto need = [&](const char* key, double* slot) {
            if (auto* v = find_key(sec, key)) {
                *slot = parse_number(*v, name + "." + key, problems);
            } else {
                problems.push_back(name + "." + key + " is required");
            }
        };
        need("pi", &pop.fraction);
        need("h", &pop.baseline_rate);
        need("sigma", &pop.volatility);
        need("zeta", &pop.generation_cost);
        need("gamma", &pop.trading_cost);
        need("nu0", &pop.initial_mean);
        need("m0", &pop.initial_var);
        cfg.classes.push_back(pop);
    }
    if (n_classes == 0) problems.push_back("at least one [class.<k>] section is required");

    // broadcast a single requirement across classes
    if (cfg.compliance.requirement.size() == 1 && n_classes > 1) {
        cfg.compliance.requirement.assign(n_classes, cfg.compliance.requirement[0]);
    }

    SchemeSettings def_scheme;
    if (auto it = sections.find("scheme"); it != sections.end()) {
        Section& sec = it->second;
        if (auto* v = find_key(sec, "dt")) cfg.scheme.dt = parse_number(*v, "scheme.dt", problems);
        else { cfg.scheme.dt = def_scheme.dt; defaulted("scheme.dt=1/52"); }
        if (auto* v = find_key(sec, "x_nodes")) cfg.scheme.x_nodes = static_cast<int>(parse_integer(*v, "scheme.x_nodes", problems));
        else { cfg.scheme.x_nodes = def_scheme.x_nodes; defaulted("scheme.x_nodes=401"); }
        if (auto* v = find_key(sec, "epsilon")) cfg.scheme.epsilon = parse_number(*v, "scheme.epsilon", problems);
        else { cfg.scheme.epsilon = def_scheme.epsilon; defaulted("scheme.epsilon=0.0001"); }
        if (auto* v = find_key(sec, "max_iters")) cfg.scheme.max_iters = static_cast<int>(parse_integer(*v, "scheme.max_iters", problems));
        else { cfg.scheme.max_iters = def_scheme.max_iters; defaulted("scheme.max_iters=200"); }
        if (auto* v = find_key(sec, "omega")) cfg.scheme.omega = parse_number(*v, "scheme.omega", problems);
        else { cfg.scheme.omega = def_scheme.omega; defaulted("scheme.omega=0.5"); }
        if (auto* v = find_key(sec, "quad_nodes")) cfg.scheme.quad_nodes = static_cast<int>(parse_integer(*v, "scheme.quad_nodes", problems));
        else { cfg.scheme.quad_nodes = def_scheme.quad_nodes; defaulted("scheme.quad_nodes=41"); }
    } else {
        cfg.scheme = def_scheme;
        defaulted("scheme.dt=1/52");
        defaulted("scheme.x_nodes=401");
        defaulted("scheme.epsilon=0.0001");
        defaulted("scheme.max_iters=200");
        defaulted("scheme.omega=0.5");
        defaulted("scheme.quad_nodes=41");
    }

    RunSettings def_run;
    if (auto it = sections.find("run"); it != sections.end()) {
        Section& sec = it->second;
        if (auto* v = find_key(sec, "seed")) {
            errno = 0;
            char* end = nullptr;
            cfg.run.seed = std::strtoull(v->c_str(), &end, 10);
            if (end == v->c_str() || *end != '\0' || errno == ERANGE) {
                problems.push_back("run.seed: cannot parse unsigned integer '" + *v + "'");
            }
        } else {
            cfg.run.seed = def_run.seed;
            defaulted("run.seed=1");
        }
        if (auto* v = find_key(sec, "n_agents")) cfg.run.n_agents = static_cast<int>(parse_integer(*v, "run.n_agents", problems));
        else { cfg.run.n_agents = def_run.n_agents; defaulted("run.n_agents=2000"); }
        if (auto* v = find_key(sec, "out_dir")) cfg.run.out_dir = *v;
        if (auto* v = find_key(sec, "threads")) cfg.run.threads = static_cast<int>(parse_integer(*v, "run.threads", problems));
        else { cfg.run.threads = def_run.threads; defaulted("run.threads=1"); }
    } else {
        cfg.run = def_run;
        defaulted("run.seed=1");
        defaulted("run.n_agents=2000");
        defaulted("run.threads=1");
    }

    if (!problems.empty()) {
        std::string msg = "invalid configuration " + origin + " ("
                          + std::to_string(problems.size()) + " problem(s)):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    cfg.validate();
    return cfg;
}

MarketConfig load_config(const std::string& path) {
    return parse_config(slurp(path), path);
}

namespace {

std::string emit_model_sections(const MarketConfig& cfg) {
    std::ostringstream os;
    os << "[compliance]\n";
    os << "T = " << fmt17(cfg.compliance.horizon_years) << "\n";
    os << "P = " << fmt17(cfg.compliance.penalty) << "\n";
    os << "delta = " << fmt17(cfg.compliance.smoothing_delta) << "\n";
    os << "R = ";
    for (std::size_t k = 0; k < cfg.compliance.requirement.size(); ++k) {
        if (k) os << ", ";
        os << fmt17(cfg.compliance.requirement[k]);
    }
    os << "\n";
    os << "periods = " << cfg.compliance.periods << "\n";
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const auto& pop = cfg.classes[k];
        os << "\n[class." << (k + 1) << "]\n";
        os << "pi = " << fmt17(pop.fraction) << "\n";
        os << "h = " << fmt17(pop.baseline_rate) << "\n";
        os << "sigma = " << fmt17(pop.volatility) << "\n";
        os << "zeta = " << fmt17(pop.generation_cost) << "\n";
        os << "gamma = " << fmt17(pop.trading_cost) << "\n";
        os << "nu0 = " << fmt17(pop.initial_mean) << "\n";
        os << "m0 = " << fmt17(pop.initial_var) << "\n";
    }
    os << "\n[scheme]\n";
    os << "dt = " << fmt17(cfg.scheme.dt) << "\n";
    os << "x_nodes = " << cfg.scheme.x_nodes << "\n";
    os << "epsilon = " << fmt17(cfg.scheme.epsilon) << "\n";
    os << "max_iters = " << cfg.scheme.max_iters << "\n";
    os << "omega = " << fmt17(cfg.scheme.omega) << "\n";
    os << "quad_nodes = " << cfg.scheme.quad_nodes << "\n";
    return os.str();
}

std::string model_digest(const MarketConfig& cfg) { return sha256_hex(emit_model_sections(cfg)); }

}  // namespace

std::string emit_config(const MarketConfig& cfg) {
    std::ostringstream os;
    os << emit_model_sections(cfg);
    os << "\n[run]\n";
    os << "seed = " << cfg.run.seed << "\n";
    os << "n_agents = " << cfg.run.n_agents << "\n";
    if (!cfg.run.out_dir.empty()) os << "out_dir = " << cfg.run.out_dir << "\n";
    os << "threads = " << cfg.run.threads << "\n";
    return os.str();
}

std::string config_digest(const MarketConfig& cfg) { return sha256_hex(emit_config(cfg)); }

std::string write_artifact(const std::string& out_dir, const std::string& name,
                           const std::string& bytes) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    const fs::path target = fs::path(out_dir) / name;
    const fs::path tmp = fs::path(out_dir) / ("." + name + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
    }
    return sha256_hex(bytes);
}

namespace {

const char* class_label(int k, std::string& buf) {
    buf = "k" + std::to_string(k + 1);
    return buf.c_str();
}

json diagnostics_json(const MarketConfig& cfg, const SolveDiagnostics& d) {
    json j;
    j["converged"] = d.converged;
    j["iterations"] = d.iterations;
    j["final_residual"] = d.final_residual;
    j["residual_history"] = d.residual_history;
    j["grid_warnings"] = d.grid_warnings;
    j["config_digest"] = config_digest(cfg);
    j["model_digest"] = model_digest(cfg);
    return j;
}

}  // namespace

FileDigests emit_solution(const EquilibriumSolution& solution, const MarketConfig& cfg,
                          const std::string& out_dir, const SurfaceArray* z) {
    if (!solution.diagnostics.converged) {
        throw InvariantError("emit_solution: refusing to emit a non-converged solution");
    }
    const SchemeGrid& grid = solution.grid;
    const int m = grid.steps;
    const int d = grid.n_nodes();
    const int K = solution.y.n_classes;
    std::string label;

    std::string price = "t,s\n";
    for (int j = 0; j <= m; ++j) {
        price += fmt17(grid.times[j]);
        price += ',';
        price += fmt17(solution.price.s[j]);
        price += '\n';
    }

    std::string surface = "t,x,class,y,g,gamma\n";
    surface.reserve(static_cast<std::size_t>(m + 1) * d * K * 64);
    for (int j = 0; j <= m; ++j) {
        for (int u = 0; u < d; ++u) {
            for (int k = 0; k < K; ++k) {
                surface += fmt17(grid.times[j]);
                surface += ',';
                surface += fmt17(grid.x[u]);
                surface += ',';
                surface += class_label(k, label);
                surface += ',';
                surface += fmt17(solution.y.at(k, j, u));
                surface += ',';
                surface += fmt17(solution.gen.at(k, j, u));
                surface += ',';
                surface += fmt17(solution.trade.at(k, j, u));
                surface += '\n';
            }
        }
    }

    std::string flow = "t,class,mean,var\n";
    for (int j = 0; j <= m; ++j) {
        for (int k = 0; k < K; ++k) {
            flow += fmt17(grid.times[j]);
            flow += ',';
            flow += class_label(k, label);
            flow += ',';
            flow += fmt17(solution.flow.mean_at(k, j));
            flow += ',';
            flow += fmt17(solution.flow.var_at(k, j));
            flow += '\n';
        }
    }

    FileDigests files;
    files["price.csv"] = write_artifact(out_dir, "price.csv", price);
    files["surface.csv"] = write_artifact(out_dir, "surface.csv", surface);
    files["flow.csv"] = write_artifact(out_dir, "flow.csv", flow);
    files["diagnostics.json"] = write_artifact(
        out_dir, "diagnostics.json", diagnostics_json(cfg, solution.diagnostics).dump(2) + "\n");
    files["config.cfg"] = write_artifact(out_dir, "config.cfg", emit_config(cfg));

    if (z != nullptr) {
        std::string zs = "t,x,class,z\n";
        for (int j = 0; j <= m; ++j) {
            for (int u = 0; u < d; ++u) {
                for (int k = 0; k < K; ++k) {
                    zs += fmt17(grid.times[j]);
                    zs += ',';
                    zs += fmt17(grid.x[u]);
                    zs += ',';
                    zs += class_label(k, label);
                    zs += ',';
                    zs += fmt17(z->at(k, j, u));
                    zs += '\n';
                }
            }
        }
        files["z_surface.csv"] = write_artifact(out_dir, "z_surface.csv", zs);
    }
    return files;
}

FileDigests emit_failure_diagnostics(const MarketConfig& cfg, const std::string& out_dir,
                                     const std::vector<double>& residual_history,
                                     const std::string& reason) {
    SolveDiagnostics d;
    d.converged = false;
    d.iterations = static_cast<int>(residual_history.size());
    d.final_residual = residual_history.empty() ? 0.0 : residual_history.back();
    d.residual_history = residual_history;
    json j = diagnostics_json(cfg, d);
    j["failure_reason"] = reason;
    FileDigests files;
    files["diagnostics.json"] = write_artifact(out_dir, "diagnostics.json", j.dump(2) + "\n");
    return files;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& expected_header) {
    const std::string text = slurp(path);
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || trim(line) != expected_header) {
        throw IoError(path + ": expected header '" + expected_header + "'");
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        rows.push_back(std::move(fields));
    }
    return rows;
}

double parse_exact(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw IoError(where + ": bad number '" + s + "'");
    return v;
}

int parse_class_label(const std::string& s, int n_classes, const std::string& where) {
    if (s.size() < 2 || s[0] != 'k') throw IoError(where + ": bad class label '" + s + "'");
    const int k = std::atoi(s.c_str() + 1) - 1;
    if (k < 0 || k >= n_classes) throw IoError(where + ": class label out of range '" + s + "'");
    return k;
}

}  // namespace

SolutionStamp read_solution_stamp(const std::string& dir) {
    const fs::path p = fs::path(dir) / "diagnostics.json";
    json j;
    try {
        j = json::parse(slurp(p.string()));
    } catch (const json::exception& e) {
        throw IoError(p.string() + ": " + e.what());
    }
    SolutionStamp stamp;
    stamp.converged = j.value("converged", false);
    stamp.config_digest = j.value("model_digest", std::string{});
    stamp.iterations = j.value("iterations", 0);
    stamp.final_residual = j.value("final_residual", 0.0);
    return stamp;
}

EquilibriumSolution load_solution(const std::string& dir, const MarketConfig& cfg) {
    cfg.validate();
    EquilibriumSolution sol;
    sol.grid = SchemeGrid::make(cfg);
    const int m = sol.grid.steps;
    const int d = sol.grid.n_nodes();
    const int K = static_cast<int>(cfg.classes.size());

    const auto stamp_path = (fs::path(dir) / "diagnostics.json").string();
    json diag;
    try {
        diag = json::parse(slurp(stamp_path));
    } catch (const json::exception& e) {
        throw IoError(stamp_path + ": " + e.what());
    }
    if (diag.value("model_digest", std::string{}) != model_digest(cfg)) {
        throw ConfigError(dir
                          + ": diagnostics.json was produced by a different model configuration");
    }
    sol.diagnostics.converged = diag.value("converged", false);
    sol.diagnostics.iterations = diag.value("iterations", 0);
    sol.diagnostics.final_residual = diag.value("final_residual", 0.0);
    sol.diagnostics.grid_warnings = diag.value("grid_warnings", 0);
    sol.diagnostics.residual_history = diag.value("residual_history", std::vector<double>{});

    const auto price_rows = read_csv((fs::path(dir) / "price.csv").string(), "t,s");
    if (static_cast<int>(price_rows.size()) != m + 1) {
        throw IoError(dir + "/price.csv: expected " + std::to_string(m + 1) + " rows");
    }
    sol.price.s.resize(m + 1);
    for (int j = 0; j <= m; ++j) {
        if (price_rows[j].size() != 2) throw IoError(dir + "/price.csv: malformed row");
        if (parse_exact(price_rows[j][0], "price.csv t") != sol.grid.times[j]) {
            throw IoError(dir + "/price.csv: time grid mismatch at row " + std::to_string(j));
        }
        sol.price.s[j] = parse_exact(price_rows[j][1], "price.csv s");
    }

    sol.y = SurfaceArray(K, m + 1, d);
    sol.gen = SurfaceArray(K, m + 1, d);
    sol.trade = SurfaceArray(K, m + 1, d);
    const auto surf_rows = read_csv((fs::path(dir) / "surface.csv").string(), "t,x,class,y,g,gamma");
    const std::size_t expected = static_cast<std::size_t>(m + 1) * d * K;
    if (surf_rows.size() != expected) {
        throw IoError(dir + "/surface.csv: expected " + std::to_string(expected) + " rows");
    }
    std::size_t r = 0;
    for (int j = 0; j <= m; ++j) {
        for (int u = 0; u < d; ++u) {
            for (int k = 0; k < K; ++k, ++r) {
                const auto& row = surf_rows[r];
                if (row.size() != 6) throw IoError(dir + "/surface.csv: malformed row");
                if (parse_exact(row[0], "surface.csv t") != sol.grid.times[j]
                    || parse_exact(row[1], "surface.csv x") != sol.grid.x[u]
                    || parse_class_label(row[2], K, "surface.csv") != k) {
                    throw IoError(dir + "/surface.csv: row order mismatch at row "
                                  + std::to_string(r));
                }
                sol.y.at(k, j, u) = parse_exact(row[3], "surface.csv y");
                sol.gen.at(k, j, u) = parse_exact(row[4], "surface.csv g");
                sol.trade.at(k, j, u) = parse_exact(row[5], "surface.csv gamma");
            }
        }
    }

    sol.flow = GaussianFlow(K, m + 1);
    const auto flow_rows = read_csv((fs::path(dir) / "flow.csv").string(), "t,class,mean,var");
    if (flow_rows.size() != static_cast<std::size_t>(m + 1) * K) {
        throw IoError(dir + "/flow.csv: unexpected row count");
    }
    r = 0;
    for (int j = 0; j <= m; ++j) {
        for (int k = 0; k < K; ++k, ++r) {
            const auto& row = flow_rows[r];
            if (row.size() != 4) throw IoError(dir + "/flow.csv: malformed row");
            if (parse_exact(row[0], "flow.csv t") != sol.grid.times[j]
                || parse_class_label(row[1], K, "flow.csv") != k) {
                throw IoError(dir + "/flow.csv: row order mismatch");
            }
            sol.flow.mean_at(k, j) = parse_exact(row[2], "flow.csv mean");
            sol.flow.var_at(k, j) = parse_exact(row[3], "flow.csv var");
        }
    }
    return sol;
}

FileDigests emit_simulation(std::span<const SimulationRun> runs, const MarketConfig& cfg,
                            const std::string& out_dir) {
    if (runs.empty()) throw ConfigError("emit_simulation: no runs");
    const double T = cfg.compliance.horizon_years;
    const int m = static_cast<int>(runs[0].price.size()) - 1;
    const double dt = T / m;
    std::string label;

    std::string price = "seed,t,s\n";
    for (const auto& run : runs) {
        for (int j = 0; j <= m; ++j) {
            price += std::to_string(run.seed);
            price += ',';
            price += fmt17(T * j / m);
            price += ',';
            price += fmt17(run.price[j]);
            price += '\n';
        }
    }

    std::string agents = "seed,agent,class,x0,x_T,generation,trading,compliant\n";
    for (const auto& run : runs) {
        for (int i = 0; i < run.n; ++i) {
            double gen_total = 0.0, trade_total = 0.0;
            for (int j = 0; j < m; ++j) {
                gen_total += run.gen(j, i) * dt;
                trade_total += run.trade(j, i) * dt;
            }
            const int k = run.class_of[i];
            agents += std::to_string(run.seed);
            agents += ',';
            agents += std::to_string(i);
            agents += ',';
            agents += class_label(k, label);
            agents += ',';
            agents += fmt17(run.inventory(0, i));
            agents += ',';
            agents += fmt17(run.inventory(m, i));
            agents += ',';
            agents += fmt17(gen_total);
            agents += ',';
            agents += fmt17(trade_total);
            agents += ',';
            agents += (run.inventory(m, i) >= cfg.compliance.requirement[k]) ? '1' : '0';
            agents += '\n';
        }
    }

    json summary;
    summary["n_agents"] = runs[0].n;
    summary["class_counts"] = runs[0].class_counts;
    json seeds = json::array();
    json rates = json::object();
    json price_avg = json::object();
    json digests = json::object();
    double max_imbalance = 0.0;
    const std::size_t K = cfg.classes.size();
    std::vector<double> rate_mean(K, 0.0);
    for (const auto& run : runs) {
        seeds.push_back(run.seed);
        json per_class = json::array();
        for (std::size_t k = 0; k < K; ++k) {
            per_class.push_back(run.noncompliance_rate[k]);
            rate_mean[k] += run.noncompliance_rate[k] / runs.size();
        }
        rates[std::to_string(run.seed)] = per_class;
        double avg = 0.0;
        for (int j = 0; j < m; ++j) avg += run.price[j];
        price_avg[std::to_string(run.seed)] = avg / m;
        digests[std::to_string(run.seed)] = run.digest;
        max_imbalance = std::max(max_imbalance, run.max_clearing_imbalance);
    }
    summary["seeds"] = seeds;
    summary["noncompliance_by_seed"] = rates;
    summary["noncompliance_mean"] = rate_mean;
    summary["price_time_average_by_seed"] = price_avg;
    summary["max_clearing_imbalance"] = max_imbalance;
    summary["digests"] = digests;

    FileDigests files;
    files["sim_price.csv"] = write_artifact(out_dir, "sim_price.csv", price);
    files["sim_agents.csv"] = write_artifact(out_dir, "sim_agents.csv", agents);
    files["sim_summary.json"] = write_artifact(out_dir, "sim_summary.json", summary.dump(2) + "\n");
    return files;
}

FileDigests emit_deviation_report(const DeviationReport& report, const ProbeReport* probe,
                                  const std::string& out_dir) {
    json j;
    j["deviant_class"] = "k" + std::to_string(report.deviant_class + 1);
    j["family"] = report.family_description;
    j["seeds"] = report.seeds;
    j["agent_counts"] = report.agent_counts;
    j["note"] = "estimates are lower bounds on the deviation gain over the searched family";
    json gains = json::array();
    for (const auto& g : report.gains) {
        json jg;
        jg["n_agents"] = g.n_agents;
        jg["estimate"] = g.estimate;
        jg["se"] = g.se;
        jg["best_cell"] = g.best_cell;
        jg["crn_variance_reduced"] = g.crn_variance_reduced;
        json cells = json::array();
        for (const auto& c : g.cells) {
            cells.push_back({{"label", c.label},
                             {"mean_gain", c.mean_gain},
                             {"se", c.se}});
        }
        jg["cells"] = cells;
        gains.push_back(jg);
    }
    j["gains"] = gains;
    if (probe != nullptr) {
        json probes = json::array();
        for (const auto& p : probe->probes) {
            probes.push_back({{"t", p.t},
                              {"x", p.x},
                              {"class", "k" + std::to_string(p.cls + 1)},
                              {"d_gen", p.d_gen},
                              {"se_gen", p.se_gen},
                              {"d_trade", p.d_trade},
                              {"se_trade", p.se_trade},
                              {"pass", p.pass}});
        }
        j["first_order_probes"] = probes;
        j["first_order_all_pass"] = probe->all_pass;
    }
    FileDigests files;
    files["deviation_report.json"] =
        write_artifact(out_dir, "deviation_report.json", j.dump(2) + "\n");
    return files;
}

FileDigests emit_report(const std::string& run_dir, const MarketConfig& cfg,
                        const std::string& out_dir) {
    const EquilibriumSolution sol = load_solution(run_dir, cfg);
    const SchemeGrid& grid = sol.grid;
    const int m = grid.steps;
    const int K = static_cast<int>(cfg.classes.size());
    std::string label;
    FileDigests files;

    // Control profiles against inventory at a handful of times.
    std::vector<int> slices = {0, m / 5, 2 * m / 5, 3 * m / 5, 4 * m / 5, m};
    slices.erase(std::unique(slices.begin(), slices.end()), slices.end());
    std::string controls = "t,x,class,y,g,gamma\n";
    for (int j : slices) {
        for (int u = 0; u < grid.n_nodes(); ++u) {
            for (int k = 0; k < K; ++k) {
                controls += fmt17(grid.times[j]);
                controls += ',';
                controls += fmt17(grid.x[u]);
                controls += ',';
                controls += class_label(k, label);
                controls += ',';
                controls += fmt17(sol.y.at(k, j, u));
                controls += ',';
                controls += fmt17(sol.gen.at(k, j, u));
                controls += ',';
                controls += fmt17(sol.trade.at(k, j, u));
                controls += '\n';
            }
        }
    }
    files["controls_slice.csv"] = write_artifact(out_dir, "controls_slice.csv", controls);

    std::string flow = "t,class,pi,mean,var\n";
    for (int j = 0; j <= m; ++j) {
        for (int k = 0; k < K; ++k) {
            flow += fmt17(grid.times[j]);
            flow += ',';
            flow += class_label(k, label);
            flow += ',';
            flow += fmt17(cfg.classes[k].fraction);
            flow += ',';
            flow += fmt17(sol.flow.mean_at(k, j));
            flow += ',';
            flow += fmt17(sol.flow.var_at(k, j));
            flow += '\n';
        }
    }
    files["flow_params.csv"] = write_artifact(out_dir, "flow_params.csv", flow);

    // Finite-player views require simulation artifacts.
    const fs::path sim_price_path = fs::path(run_dir) / "sim_price.csv";
    if (fs::exists(sim_price_path)) {
        std::string series = "series,t,s\n";
        for (int j = 0; j <= m; ++j) {
            series += "mfg,";
            series += fmt17(grid.times[j]);
            series += ',';
            series += fmt17(sol.price.s[j]);
            series += '\n';
        }
        for (const auto& row : read_csv(sim_price_path.string(), "seed,t,s")) {
            if (row.size() != 3) throw IoError("sim_price.csv: malformed row");
            series += "seed" + row[0] + "," + row[1] + "," + row[2] + "\n";
        }
        files["report_price.csv"] = write_artifact(out_dir, "report_price.csv", series);
    }

    const fs::path agents_path = fs::path(run_dir) / "sim_agents.csv";
    if (fs::exists(agents_path)) {
        const auto rows =
            read_csv(agents_path.string(), "seed,agent,class,x0,x_T,generation,trading,compliant");
        // columns in sim_agents.csv holding each histogram variable
        const std::pair<const char*, int> variables[] = {
            {"initial", 3}, {"terminal", 4}, {"generation", 5}, {"trading", 6}};
        std::string hist = "class,variable,bin_lo,bin_hi,count\n";
        for (int k = 0; k < K; ++k) {
            const std::string want = "k" + std::to_string(k + 1);
            for (const auto& [var_name, col] : variables) {
                std::vector<double> values;
                for (const auto& row : rows) {
                    if (row.size() != 8) throw IoError("sim_agents.csv: malformed row");
                    if (row[2] == want) values.push_back(parse_exact(row[col], "sim_agents.csv"));
                }
                if (values.empty()) continue;
                const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
                double lo = *mn_it, hi = *mx_it;
                if (lo == hi) {
                    lo -= 0.5;
                    hi += 0.5;
                }
                constexpr int kBins = 40;
                std::vector<int> counts(kBins, 0);
                for (double v : values) {
                    int b = static_cast<int>((v - lo) / (hi - lo) * kBins);
                    b = std::clamp(b, 0, kBins - 1);
                    ++counts[b];
                }
                for (int b = 0; b < kBins; ++b) {
                    hist += want;
                    hist += ',';
                    hist += var_name;
                    hist += ',';
                    hist += fmt17(lo + (hi - lo) * b / kBins);
                    hist += ',';
                    hist += fmt17(lo + (hi - lo) * (b + 1) / kBins);
                    hist += ',';
                    hist += std::to_string(counts[b]);
                    hist += '\n';
                }
            }
        }
        files["histograms.csv"] = write_artifact(out_dir, "histograms.csv", hist);
    }
    return files;
}

void update_manifest(const std::string& out_dir, const std::string& subcommand,
                     const MarketConfig& cfg, double elapsed_ms, const FileDigests& files) {
    const fs::path path = fs::path(out_dir) / "manifest.json";
    json j;
    if (fs::exists(path)) {
        try {
            j = json::parse(slurp(path.string()));
        } catch (const json::exception&) {
            j = json::object();  // rebuilt from scratch
        }
    }
    j["artifact_version"] = "0.1.0";
    j["config_digest"] = config_digest(cfg);
    j["model_digest"] = model_digest(cfg);
    json entry;
    entry["elapsed_ms"] = elapsed_ms;
    entry["defaults_applied"] = cfg.defaults_applied;
    json jf = json::object();
    for (const auto& [name, digest] : files) jf[name] = digest;
    entry["files"] = jf;
    j["runs"][subcommand] = entry;
    write_artifact(out_dir, "manifest.json", j.dump(2) + "\n");
}

std::vector<std::string> manifest_mismatches(const std::string& out_dir) {
    const fs::path path = fs::path(out_dir) / "manifest.json";
    json j;
    try {
        j = json::parse(slurp(path.string()));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    std::vector<std::string> bad;
    if (!j.contains("runs")) return bad;
    for (const auto& [cmd, entry] : j["runs"].items()) {
        (void)cmd;
        if (!entry.contains("files")) continue;
        for (const auto& [name, digest] : entry["files"].items()) {
            const fs::path file = fs::path(out_dir) / name;
            if (!fs::exists(file)) {
                bad.push_back(name + " (missing)");
                continue;
            }
            if (sha256_hex(slurp(file.string())) != digest.get<std::string>()) {
                bad.push_back(name);
            }
        }
    }
    return bad;
}

}  // namespace srec::io
