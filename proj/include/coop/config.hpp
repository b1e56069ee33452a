#pragma once

// Line-oriented experiment configuration.
//
// Format: `key = value` lines grouped under `[section]` headers; `#` starts a
// comment; blank lines are ignored. Sections may repeat ([domain] appears once
// per domain). Keys before any header live in the unnamed top-level section.
// Unknown keys are rejected so typos fail loudly instead of silently falling
// back to defaults.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "fusion.hpp"
#include "model.hpp"

namespace coop {

struct config_section {
    std::string name; // "" for the top-level section
    std::vector<std::pair<std::string, std::string>> kv;
};

struct config_file {
    std::vector<config_section> sections;

    const std::string* find(const std::string& section, const std::string& key) const {
        for (const auto& s : sections) {
            if (s.name != section) continue;
            for (const auto& [k, v] : s.kv)
                if (k == key) return &v;
        }
        return nullptr;
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline long to_long(const std::string& v, const std::string& where) {
    try {
        size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw validation_error(cat("config: ", where, " expects an integer, got '", v, "'"));
    }
}

inline uint64_t to_u64(const std::string& v, const std::string& where) {
    try {
        size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return uint64_t(x);
    } catch (const std::exception&) {
        throw validation_error(cat("config: ", where, " expects an unsigned integer, got '", v,
                                   "'"));
    }
}

inline double to_double(const std::string& v, const std::string& where) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw validation_error(cat("config: ", where, " expects a number, got '", v, "'"));
    }
}

inline bool to_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw validation_error(cat("config: ", where, " expects true/false, got '", v, "'"));
}

// shortest representation that parses back to the same double
inline std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

inline std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(v);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

} // namespace config_detail

inline config_file parse_config(const std::string& text) {
    config_file cf;
    cf.sections.push_back({"", {}});
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw validation_error(cat("config: line ", lineno, ": unterminated section '",
                                           line, "'"));
            cf.sections.push_back({config_detail::trim(line.substr(1, line.size() - 2)), {}});
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw validation_error(cat("config: line ", lineno, ": expected key = value, got '",
                                       line, "'"));
        std::string key = config_detail::trim(line.substr(0, eq));
        std::string val = config_detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw validation_error(cat("config: line ", lineno, ": empty key"));
        cf.sections.back().kv.push_back({std::move(key), std::move(val)});
    }
    return cf;
}

inline config_file load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error(cat("config: cannot open '", path, "'"));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

// the knobs shared by every training phase of the cooperative pipeline
struct cooperative_config {
    long pretrain_steps = 200;    // phase 1 on the mixture
    long specialist_steps = 2000; // phase 3 per domain
    int batch_size = 8;
    double lr = 2e-4;
    double weight_decay = 0.1;
    double warmup_frac = 0.1;
    int freeze_layers = 2; // K: embeddings + first K blocks stay fixed
    int mixture_chunks = 360;
};

struct router_config {
    router_kind kind = router_kind::linear;
    router_input input = router_input::specialist_mean;
    long steps = 500;
    int batch_size = 8;
    double lr = 1e-2;
    double weight_decay = 0.0; // decay drags the gate projection back toward uniform
    int mixture_chunks = 120;
};

struct baseline_flags {
    bool monolithic = false; // summed-budget training; off by default for runtime
    bool wider = false;      // >= 3x parameter monolithic control
    bool weight_avg = true;
    bool uniform = true;
    bool oracle = true;
    bool hard = true;
    bool sparse = true;
};

struct experiment_config {
    std::string name = "core";
    std::string output_dir = "runs/core";
    std::vector<uint64_t> seeds = {42, 137, 2026};
    model_config model;
    std::vector<domain_spec> domains;
    cooperative_config coop;
    router_config router;
    baseline_flags baselines;

    void validate() const {
        if (seeds.empty()) throw validation_error("config: seeds must be non-empty");
        if (name.empty()) throw validation_error("config: name must be non-empty");
        for (char c : name)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
                throw validation_error(cat("config: name '", name,
                                           "' is not filesystem-safe (use [A-Za-z0-9_-])"));
        if (domains.empty()) throw validation_error("config: at least one [domain] required");
        for (const auto& d : domains)
            for (const auto& e : domains)
                if (&d != &e && d.name == e.name)
                    throw validation_error(cat("config: duplicate domain name '", d.name, "'"));
        model.validate();
        if (coop.pretrain_steps < 0 || coop.specialist_steps < 0)
            throw validation_error("config: step counts must be >= 0");
        if (coop.freeze_layers < 0 || coop.freeze_layers > model.n_layers)
            throw validation_error(cat("config: freeze_layers ", coop.freeze_layers,
                                       " outside [0, ", model.n_layers, "]"));
    }
};

namespace config_detail {

// consume key/value pairs of every section with this name, rejecting typos
template <typename Fn>
inline void eat_sections(const config_file& cf, const std::string& section, Fn&& fn) {
    for (const auto& s : cf.sections) {
        if (s.name != section) continue;
        for (const auto& [k, v] : s.kv)
            if (!fn(k, v))
                throw validation_error(cat("config: unknown key '", k, "' in [",
                                           section.empty() ? "top-level" : section, "]"));
    }
}

inline domain_spec parse_domain(const config_section& s) {
    domain_spec d;
    bool has_kind = false;
    for (const auto& [k, v] : s.kv) {
        const std::string where = cat("[domain] ", k);
        if (k == "name") d.name = v;
        else if (k == "kind") { d.kind = generator_from_name(v); has_kind = true; }
        else if (k == "dialect") d.dialect_id = int(to_long(v, where));
        else if (k == "seed") d.seed = to_u64(v, where);
        else if (k == "n_chunks") d.n_chunks = int(to_long(v, where));
        else if (k == "holdout_frac") d.holdout_frac = to_double(v, where);
        else throw validation_error(cat("config: unknown key '", k, "' in [domain]"));
    }
    if (d.name.empty()) throw validation_error("config: [domain] requires a name");
    if (!has_kind) throw validation_error(cat("config: [domain] '", d.name, "' requires a kind"));
    return d;
}

} // namespace config_detail

inline experiment_config experiment_from_config(const config_file& cf) {
    using namespace config_detail;
    experiment_config ec;
    eat_sections(cf, "", [&](const std::string& k, const std::string& v) {
        if (k == "name") ec.name = v;
        else if (k == "output_dir") ec.output_dir = v;
        else if (k == "seeds") {
            ec.seeds.clear();
            for (const auto& s : split_commas(v)) ec.seeds.push_back(to_u64(s, "seeds"));
        } else return false;
        return true;
    });
    eat_sections(cf, "model", [&](const std::string& k, const std::string& v) {
        const std::string where = cat("[model] ", k);
        if (k == "n_layers") ec.model.n_layers = int(to_long(v, where));
        else if (k == "d_model") ec.model.d_model = int(to_long(v, where));
        else if (k == "n_heads") ec.model.n_heads = int(to_long(v, where));
        else if (k == "vocab") ec.model.vocab = int(to_long(v, where));
        else if (k == "context") ec.model.context = int(to_long(v, where));
        else return false;
        return true;
    });
    for (const auto& s : cf.sections)
        if (s.name == "domain") ec.domains.push_back(parse_domain(s));
    eat_sections(cf, "cooperative", [&](const std::string& k, const std::string& v) {
        const std::string where = cat("[cooperative] ", k);
        if (k == "pretrain_steps") ec.coop.pretrain_steps = to_long(v, where);
        else if (k == "specialist_steps") ec.coop.specialist_steps = to_long(v, where);
        else if (k == "batch_size") ec.coop.batch_size = int(to_long(v, where));
        else if (k == "lr") ec.coop.lr = to_double(v, where);
        else if (k == "weight_decay") ec.coop.weight_decay = to_double(v, where);
        else if (k == "warmup_frac") ec.coop.warmup_frac = to_double(v, where);
        else if (k == "freeze_layers") ec.coop.freeze_layers = int(to_long(v, where));
        else if (k == "mixture_chunks") ec.coop.mixture_chunks = int(to_long(v, where));
        else return false;
        return true;
    });
    eat_sections(cf, "router", [&](const std::string& k, const std::string& v) {
        const std::string where = cat("[router] ", k);
        if (k == "kind") ec.router.kind = router_kind_from_name(v);
        else if (k == "input") ec.router.input = router_input_from_name(v);
        else if (k == "steps") ec.router.steps = to_long(v, where);
        else if (k == "batch_size") ec.router.batch_size = int(to_long(v, where));
        else if (k == "lr") ec.router.lr = to_double(v, where);
        else if (k == "weight_decay") ec.router.weight_decay = to_double(v, where);
        else if (k == "mixture_chunks") ec.router.mixture_chunks = int(to_long(v, where));
        else return false;
        return true;
    });
    eat_sections(cf, "baselines", [&](const std::string& k, const std::string& v) {
        const std::string where = cat("[baselines] ", k);
        if (k == "monolithic") ec.baselines.monolithic = to_bool(v, where);
        else if (k == "wider") ec.baselines.wider = to_bool(v, where);
        else if (k == "weight_avg") ec.baselines.weight_avg = to_bool(v, where);
        else if (k == "uniform") ec.baselines.uniform = to_bool(v, where);
        else if (k == "oracle") ec.baselines.oracle = to_bool(v, where);
        else if (k == "hard") ec.baselines.hard = to_bool(v, where);
        else if (k == "sparse") ec.baselines.sparse = to_bool(v, where);
        else return false;
        return true;
    });
    for (const auto& s : cf.sections)
        if (!s.name.empty() && s.name != "model" && s.name != "domain" &&
            s.name != "cooperative" && s.name != "router" && s.name != "baselines")
            throw validation_error(cat("config: unknown section [", s.name, "]"));
    ec.validate();
    return ec;
}

inline experiment_config load_experiment(const std::string& path) {
    return experiment_from_config(load_config(path));
}

// canonical serialization: reading it back yields an identical config
inline std::string write_config(const experiment_config& ec) {
    std::ostringstream o;
    o << "name = " << ec.name << "\n";
    o << "output_dir = " << ec.output_dir << "\n";
    o << "seeds = ";
    for (size_t i = 0; i < ec.seeds.size(); ++i) o << (i ? ", " : "") << ec.seeds[i];
    o << "\n\n[model]\n";
    o << "n_layers = " << ec.model.n_layers << "\n";
    o << "d_model = " << ec.model.d_model << "\n";
    o << "n_heads = " << ec.model.n_heads << "\n";
    o << "vocab = " << ec.model.vocab << "\n";
    o << "context = " << ec.model.context << "\n";
    for (const auto& d : ec.domains) {
        o << "\n[domain]\n";
        o << "name = " << d.name << "\n";
        o << "kind = " << generator_name(d.kind) << "\n";
        if (d.kind == generator_kind::markov_dialect) o << "dialect = " << d.dialect_id << "\n";
        o << "seed = " << d.seed << "\n";
        o << "n_chunks = " << d.n_chunks << "\n";
        o << "holdout_frac = " << config_detail::fmt_double(d.holdout_frac) << "\n";
    }
    o << "\n[cooperative]\n";
    o << "pretrain_steps = " << ec.coop.pretrain_steps << "\n";
    o << "specialist_steps = " << ec.coop.specialist_steps << "\n";
    o << "batch_size = " << ec.coop.batch_size << "\n";
    o << "lr = " << config_detail::fmt_double(ec.coop.lr) << "\n";
    o << "weight_decay = " << config_detail::fmt_double(ec.coop.weight_decay) << "\n";
    o << "warmup_frac = " << config_detail::fmt_double(ec.coop.warmup_frac) << "\n";
    o << "freeze_layers = " << ec.coop.freeze_layers << "\n";
    o << "mixture_chunks = " << ec.coop.mixture_chunks << "\n";
    o << "\n[router]\n";
    o << "kind = " << router_kind_name(ec.router.kind) << "\n";
    o << "input = " << router_input_name(ec.router.input) << "\n";
    o << "steps = " << ec.router.steps << "\n";
    o << "batch_size = " << ec.router.batch_size << "\n";
    o << "lr = " << config_detail::fmt_double(ec.router.lr) << "\n";
    o << "weight_decay = " << config_detail::fmt_double(ec.router.weight_decay) << "\n";
    o << "mixture_chunks = " << ec.router.mixture_chunks << "\n";
    o << "\n[baselines]\n";
    o << "monolithic = " << (ec.baselines.monolithic ? "true" : "false") << "\n";
    o << "wider = " << (ec.baselines.wider ? "true" : "false") << "\n";
    o << "weight_avg = " << (ec.baselines.weight_avg ? "true" : "false") << "\n";
    o << "uniform = " << (ec.baselines.uniform ? "true" : "false") << "\n";
    o << "oracle = " << (ec.baselines.oracle ? "true" : "false") << "\n";
    o << "hard = " << (ec.baselines.hard ? "true" : "false") << "\n";
    o << "sparse = " << (ec.baselines.sparse ? "true" : "false") << "\n";
    return o.str();
}

} // namespace coop
