#pragma once

// Seeded synthetic corpora over a fixed 128-id symbol vocabulary.
//
// Five generator families with deliberately disjoint surface statistics:
//   arithmetic_expressions  "23+7=30."            digits and operators
//   balanced_brackets       "([{}])():2."         nested brackets + depth tag
//   sorted_runs             "<1234567 >97531 "    monotone digit runs
//   markov_dialect(id)      "qvz kqe..."          2nd-order chain on a per-id
//                                                 random 10-letter support
//   copy_tasks              "ab3x#ab3x."          prefix # prefix echo
//
// Samples are packed greedily into chunks of exactly `context` tokens with a
// separator token after each sample; a sample that cannot fit the remainder
// starts the next chunk (the tail is padded with separators), and a sample
// longer than the context is truncated. Train/holdout membership is decided
// per chunk index before packing; holdout order is generation order.

#include <array>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace coop {

// fixed symbol table; ids are stable across the whole system
namespace symbols {
constexpr int vocab_size = 128;
constexpr int sep = 0;
constexpr int plus = 63, minus = 64, star = 65, slash = 66, equals = 67;
constexpr int lparen = 68, rparen = 69, lbracket = 70, rbracket = 71;
constexpr int lbrace = 72, rbrace = 73, langle = 74, rangle = 75;
constexpr int space = 76, comma = 77, period = 78, colon = 79, hash = 80;

inline int digit(int d) { return 1 + d; }          // 0-9 -> 1..10
inline int lower(char c) { return 11 + (c - 'a'); } // a-z -> 11..36
inline int upper(char c) { return 37 + (c - 'A'); } // A-Z -> 37..62

inline char repr(int id) {
    if (id == sep) return '|';
    if (id >= 1 && id <= 10) return char('0' + id - 1);
    if (id >= 11 && id <= 36) return char('a' + id - 11);
    if (id >= 37 && id <= 62) return char('A' + id - 37);
    switch (id) {
        case plus: return '+';
        case minus: return '-';
        case star: return '*';
        case slash: return '/';
        case equals: return '=';
        case lparen: return '(';
        case rparen: return ')';
        case lbracket: return '[';
        case rbracket: return ']';
        case lbrace: return '{';
        case rbrace: return '}';
        case langle: return '<';
        case rangle: return '>';
        case space: return ' ';
        case comma: return ',';
        case period: return '.';
        case colon: return ':';
        case hash: return '#';
    }
    return '?';
}
} // namespace symbols

enum class generator_kind {
    arithmetic_expressions,
    balanced_brackets,
    sorted_runs,
    markov_dialect,
    copy_tasks,
};

inline const char* generator_name(generator_kind k) {
    switch (k) {
        case generator_kind::arithmetic_expressions: return "arithmetic_expressions";
        case generator_kind::balanced_brackets: return "balanced_brackets";
        case generator_kind::sorted_runs: return "sorted_runs";
        case generator_kind::markov_dialect: return "markov_dialect";
        case generator_kind::copy_tasks: return "copy_tasks";
    }
    return "?";
}

inline generator_kind generator_from_name(const std::string& s) {
    if (s == "arithmetic_expressions") return generator_kind::arithmetic_expressions;
    if (s == "balanced_brackets") return generator_kind::balanced_brackets;
    if (s == "sorted_runs") return generator_kind::sorted_runs;
    if (s == "markov_dialect") return generator_kind::markov_dialect;
    if (s == "copy_tasks") return generator_kind::copy_tasks;
    throw validation_error(cat("corpus: unknown generator kind '", s, "'"));
}

struct domain_spec {
    std::string name;
    generator_kind kind = generator_kind::arithmetic_expressions;
    int dialect_id = 0; // markov_dialect only
    uint64_t seed = 0;
    int n_chunks = 0;
    double holdout_frac = 0.10;
};

struct domain_data {
    domain_spec spec;
    int context = 0;
    std::vector<std::vector<int>> train, heldout; // chunks of exactly `context` ids
};

namespace corpus_detail {

inline void push_number(std::vector<int>& out, int v) {
    char buf[16];
    int n = std::snprintf(buf, sizeof(buf), "%d", v);
    for (int i = 0; i < n; ++i) out.push_back(symbols::digit(buf[i] - '0'));
}

inline std::vector<int> sample_arithmetic(rng& r) {
    std::vector<int> out;
    const int a = 1 + int(r.below(99));
    const int op = int(r.below(3));
    int b, res, sym;
    if (op == 0) {
        b = 1 + int(r.below(99));
        res = a + b;
        sym = symbols::plus;
    } else if (op == 1) {
        b = 1 + int(r.below(uint64_t(a)));
        res = a - b;
        sym = symbols::minus;
    } else {
        b = 2 + int(r.below(8));
        res = a * b;
        sym = symbols::star;
    }
    push_number(out, a);
    out.push_back(sym);
    push_number(out, b);
    out.push_back(symbols::equals);
    push_number(out, res);
    out.push_back(symbols::period);
    return out;
}

inline void gen_brackets(rng& r, std::vector<int>& out, int depth, int max_depth,
                         int& deepest, int budget) {
    static constexpr int opens[3] = {symbols::lparen, symbols::lbracket, symbols::lbrace};
    static constexpr int closes[3] = {symbols::rparen, symbols::rbracket, symbols::rbrace};
    int groups = 1 + int(r.below(3));
    while (groups-- > 0 && int(out.size()) < budget) {
        const int k = int(r.below(3));
        out.push_back(opens[k]);
        if (depth + 1 > deepest) deepest = depth + 1;
        if (depth + 1 < max_depth && r.below(100) < 55)
            gen_brackets(r, out, depth + 1, max_depth, deepest, budget);
        out.push_back(closes[k]);
    }
}

inline std::vector<int> sample_brackets(rng& r) {
    std::vector<int> out;
    int deepest = 0;
    gen_brackets(r, out, 0, 4, deepest, 20);
    out.push_back(symbols::colon);
    push_number(out, deepest);
    out.push_back(symbols::period);
    return out;
}

inline std::vector<int> sample_sorted_run(rng& r) {
    std::vector<int> out;
    const bool ascending = r.below(2) == 0;
    const int step = 1 + int(r.below(2));
    out.push_back(ascending ? symbols::langle : symbols::rangle);
    int v = ascending ? int(r.below(4)) : 6 + int(r.below(4));
    const int len = 4 + int(r.below(6));
    for (int i = 0; i < len; ++i) {
        if (v < 0 || v > 9) break;
        out.push_back(symbols::digit(v));
        v += ascending ? step : -step;
    }
    out.push_back(symbols::space);
    return out;
}

// per-id dialect: a random 10-letter support and a 2nd-order transition table,
// both derived from the dialect id alone so every corpus of dialect d speaks
// the same language
struct markov_dialect_params {
    std::array<int, 11> support;              // 10 letters + trailing space token
    std::vector<std::array<double, 11>> cdf;  // [11*11] rows of cumulative probs
};

inline markov_dialect_params make_dialect(int id) {
    markov_dialect_params p;
    rng r(0x6d61726b6f76ull ^ mix64(uint64_t(id)));
    std::vector<int> letters(26);
    for (int i = 0; i < 26; ++i) letters[i] = symbols::lower(char('a' + i));
    r.shuffle(letters);
    for (int i = 0; i < 10; ++i) p.support[i] = letters[i];
    p.support[10] = symbols::space;
    p.cdf.resize(11 * 11);
    for (int a = 0; a < 11; ++a) {
        for (int b = 0; b < 11; ++b) {
            std::array<double, 11> w{};
            double total = 0.0;
            for (int c = 0; c < 11; ++c) {
                if (b == 10 && c == 10) {
                    w[c] = 0.0; // no double spaces
                } else {
                    const double u = r.uniform();
                    w[c] = u * u * u; // cubing sharpens the rows
                }
                total += w[c];
            }
            double acc = 0.0;
            for (int c = 0; c < 11; ++c) {
                acc += w[c] / total;
                p.cdf[size_t(a) * 11 + b][c] = acc;
            }
        }
    }
    return p;
}

inline std::vector<int> sample_markov(rng& r, const markov_dialect_params& p) {
    std::vector<int> out;
    int a = int(r.below(10)), b = int(r.below(10));
    out.push_back(p.support[a]);
    out.push_back(p.support[b]);
    const int len = 30 + int(r.below(31));
    for (int i = 0; i < len; ++i) {
        const auto& row = p.cdf[size_t(a) * 11 + b];
        const double u = r.uniform();
        int c = 0;
        while (c < 10 && u > row[c]) ++c;
        out.push_back(p.support[c]);
        a = b;
        b = c;
    }
    out.push_back(symbols::period);
    return out;
}

inline std::vector<int> sample_copy(rng& r) {
    const int len = 4 + int(r.below(7));
    std::vector<int> prefix(len);
    for (auto& t : prefix)
        t = r.below(2) == 0 ? symbols::digit(int(r.below(10)))
                            : symbols::lower(char('a' + int(r.below(26))));
    std::vector<int> out = prefix;
    out.push_back(symbols::hash);
    out.insert(out.end(), prefix.begin(), prefix.end());
    out.push_back(symbols::period);
    return out;
}

} // namespace corpus_detail

inline domain_data generate_domain(const domain_spec& spec, int context) {
    if (spec.name.empty()) throw validation_error("corpus: domain name must not be empty");
    if (spec.n_chunks < 10)
        throw validation_error(cat("corpus: domain '", spec.name, "' needs n_chunks >= 10, got ",
                                   spec.n_chunks));
    if (!(spec.holdout_frac > 0.0 && spec.holdout_frac < 1.0))
        throw validation_error(cat("corpus: domain '", spec.name, "' holdout_frac ",
                                   spec.holdout_frac, " outside (0, 1)"));
    if (context < 8)
        throw validation_error(cat("corpus: context ", context, " too small (>= 8)"));
    if (spec.dialect_id < 0)
        throw validation_error(cat("corpus: domain '", spec.name, "' dialect_id ",
                                   spec.dialect_id, " must be >= 0"));

    rng root(spec.seed);
    rng content = root.split(1);
    rng split_rng = root.split(2);

    // split decided per chunk index before packing
    const int n_held = std::max(1, int(spec.holdout_frac * spec.n_chunks + 0.5));
    std::vector<int> order(spec.n_chunks);
    for (int i = 0; i < spec.n_chunks; ++i) order[i] = i;
    split_rng.shuffle(order);
    std::vector<bool> is_held(spec.n_chunks, false);
    for (int i = 0; i < n_held; ++i) is_held[order[i]] = true;

    corpus_detail::markov_dialect_params dialect;
    if (spec.kind == generator_kind::markov_dialect)
        dialect = corpus_detail::make_dialect(spec.dialect_id);

    auto sample = [&]() {
        switch (spec.kind) {
            case generator_kind::arithmetic_expressions:
                return corpus_detail::sample_arithmetic(content);
            case generator_kind::balanced_brackets:
                return corpus_detail::sample_brackets(content);
            case generator_kind::sorted_runs:
                return corpus_detail::sample_sorted_run(content);
            case generator_kind::markov_dialect:
                return corpus_detail::sample_markov(content, dialect);
            case generator_kind::copy_tasks:
                return corpus_detail::sample_copy(content);
        }
        throw validation_error("corpus: unknown generator kind");
    };

    domain_data data;
    data.spec = spec;
    data.context = context;

    std::vector<int> cur;
    cur.reserve(context);
    int produced = 0;
    auto close_chunk = [&]() {
        cur.resize(context, symbols::sep); // pad the remainder with separators
        (is_held[produced] ? data.heldout : data.train).push_back(cur);
        cur.clear();
        ++produced;
    };
    while (produced < spec.n_chunks) {
        std::vector<int> s = sample();
        if (int(s.size()) > context) s.resize(context); // oversized samples truncate
        if (int(cur.size() + s.size()) > context) close_chunk();
        if (produced >= spec.n_chunks) break;
        cur.insert(cur.end(), s.begin(), s.end());
        if (int(cur.size()) < context) cur.push_back(symbols::sep); // separator between samples
        if (int(cur.size()) == context) close_chunk();
    }
    return data;
}

// stratified mixture of train chunks: exact per-domain counts via largest
// remainder, seeded selection within each domain, seeded global shuffle
inline std::vector<std::vector<int>> mixed_stream(const std::vector<const domain_data*>& domains,
                                                  const std::vector<double>& proportions,
                                                  int total, uint64_t seed) {
    if (domains.empty()) throw validation_error("mixed_stream: no domains given");
    if (proportions.size() != domains.size())
        throw validation_error(cat("mixed_stream: ", proportions.size(), " proportions for ",
                                   domains.size(), " domains"));
    if (total <= 0) throw validation_error("mixed_stream: total chunk count must be positive");
    double sum = 0.0;
    for (double p : proportions) {
        if (p < 0) throw validation_error("mixed_stream: negative proportion");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw validation_error(cat("mixed_stream: proportions sum to ", sum, ", expected 1"));

    // largest-remainder apportionment (ties resolved toward lower index)
    const size_t n = domains.size();
    std::vector<int> counts(n);
    std::vector<std::pair<double, size_t>> frac(n);
    int assigned = 0;
    for (size_t i = 0; i < n; ++i) {
        const double exact = proportions[i] * total;
        counts[i] = int(exact);
        frac[i] = {exact - counts[i], i};
        assigned += counts[i];
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int k = 0; k < total - assigned; ++k) counts[frac[size_t(k) % n].second]++;

    rng root(seed);
    std::vector<std::vector<int>> out;
    out.reserve(total);
    for (size_t i = 0; i < n; ++i) {
        const auto& train = domains[i]->train;
        if (train.empty())
            throw validation_error(cat("mixed_stream: domain '", domains[i]->spec.name,
                                       "' has no train chunks"));
        if (counts[i] > int(train.size()))
            throw validation_error(cat("mixed_stream: domain '", domains[i]->spec.name,
                                       "' has ", train.size(), " train chunks, needs ",
                                       counts[i]));
        std::vector<int> idx(train.size());
        for (size_t j = 0; j < train.size(); ++j) idx[j] = int(j);
        rng pick = root.split(i + 1);
        pick.shuffle(idx);
        for (int j = 0; j < counts[i]; ++j) out.push_back(train[size_t(idx[size_t(j)])]);
    }
    rng order = root.split(0);
    order.shuffle(out);
    return out;
}

// token histogram over chunks, normalized; total-variation distance between
// two histograms is 0.5 * L1
inline std::array<double, symbols::vocab_size> unigram(const std::vector<std::vector<int>>& chunks) {
    std::array<double, symbols::vocab_size> h{};
    double total = 0.0;
    for (const auto& c : chunks)
        for (int t : c) {
            h[size_t(t)] += 1.0;
            total += 1.0;
        }
    if (total > 0)
        for (auto& v : h) v /= total;
    return h;
}

inline double tv_distance(const std::array<double, symbols::vocab_size>& a,
                          const std::array<double, symbols::vocab_size>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

} // namespace coop
