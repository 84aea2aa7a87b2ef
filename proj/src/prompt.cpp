#include "flowrom/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flowrom/rng.hpp"

namespace flowrom::prompt {

// Embedded copies of data/vocab.txt and data/prompt_template.txt (generated
// at configure time, see src/embedded_data.cpp.in).
extern const char* kDefaultVocabText;
extern const char* kDefaultTemplateText;

void DatasetContext::validate() const {
    if (case_name.empty()) throw std::invalid_argument("DatasetContext: case_name is empty");
    if (variable.empty()) throw std::invalid_argument("DatasetContext: variable is empty");
    if (!(mach >= 0.0)) throw std::invalid_argument("DatasetContext: mach must be >= 0");
    if (!(reynolds > 0.0)) throw std::invalid_argument("DatasetContext: reynolds must be > 0");
}

void TaskSpec::validate() const {
    if (lookback < 1) throw std::invalid_argument("TaskSpec: lookback must be >= 1");
    if (horizon < 1) throw std::invalid_argument("TaskSpec: horizon must be >= 1");
}

const char* trend_name(Trend t) {
    switch (t) {
        case Trend::up: return "up";
        case Trend::down: return "down";
        default: return "flat";
    }
}

std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", value);
    return buf;
}

InputStats compute_stats(const series::Window& w, std::size_t lag_count) {
    const std::size_t n = w.length();
    if (n < 2) throw std::invalid_argument("compute_stats: window shorter than 2");
    if (lag_count > n - 1) {
        throw std::invalid_argument("compute_stats: lag count " + std::to_string(lag_count) +
                                    " exceeds max lag " + std::to_string(n - 1));
    }

    InputStats stats;
    std::vector<double> sorted = w.values;
    std::sort(sorted.begin(), sorted.end());
    stats.min = sorted.front();
    stats.max = sorted.back();
    stats.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    // Least-squares slope against the step index, with a dead band for flat.
    double mean_i = 0.5 * static_cast<double>(n - 1);
    double mean_v = 0.0;
    for (double v : w.values) mean_v += v;
    mean_v /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double di = static_cast<double>(i) - mean_i;
        num += di * (w.values[i] - mean_v);
        den += di * di;
    }
    const double slope = num / den;
    if (std::abs(slope) < 1e-9) {
        stats.trend = Trend::flat;
    } else {
        stats.trend = slope > 0.0 ? Trend::up : Trend::down;
    }

    // Autocorrelation at lags 1..n-1, normalized by the lag-0 mass. A
    // constant window has zero mass everywhere; lags then rank by index.
    double mass = 0.0;
    for (double v : w.values) mass += (v - mean_v) * (v - mean_v);
    std::vector<double> corr(n, 0.0);
    if (mass > 0.0) {
        for (std::size_t lag = 1; lag < n; ++lag) {
            double acc = 0.0;
            for (std::size_t t = 0; t + lag < n; ++t) {
                acc += (w.values[t] - mean_v) * (w.values[t + lag] - mean_v);
            }
            corr[lag] = acc / mass;
        }
    }
    std::vector<std::size_t> lags(n - 1);
    std::iota(lags.begin(), lags.end(), 1);
    std::stable_sort(lags.begin(), lags.end(), [&](std::size_t a, std::size_t b) {
        if (corr[a] != corr[b]) return corr[a] > corr[b];
        return a < b;
    });
    stats.top_lags.assign(lags.begin(), lags.begin() + static_cast<std::ptrdiff_t>(lag_count));
    return stats;
}

Template Template::parse(const std::string& text, const std::string& version) {
    std::vector<std::string> lines;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.size() != 3) {
        throw std::invalid_argument("Template: expected 3 sections (context, task, statistics), got " +
                                    std::to_string(lines.size()));
    }
    Template t;
    t.context_section = lines[0];
    t.task_section = lines[1];
    t.stats_section = lines[2];
    t.version = version;
    return t;
}

const Template& default_template() {
    static const Template t = Template::parse(kDefaultTemplateText, "v1");
    return t;
}

Template load_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_template: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    char version[32];
    std::snprintf(version, sizeof(version), "custom-%016llx",
                  static_cast<unsigned long long>(fnv1a64(ss.str())));
    return Template::parse(ss.str(), version);
}

namespace {

std::string substitute(const std::string& section,
                       const std::unordered_map<std::string, std::string>& values) {
    std::string out;
    out.reserve(section.size());
    std::size_t i = 0;
    while (i < section.size()) {
        const char c = section[i];
        if (c != '{') {
            out.push_back(c);
            ++i;
            continue;
        }
        const std::size_t close = section.find('}', i);
        if (close == std::string::npos)
            throw std::invalid_argument("render_prompt: unterminated placeholder");
        const std::string name = section.substr(i + 1, close - i - 1);
        auto it = values.find(name);
        if (it == values.end())
            throw std::invalid_argument("render_prompt: unknown placeholder {" + name + "}");
        out += it->second;
        i = close + 1;
    }
    return out;
}

}  // namespace

std::string render_prompt(const DatasetContext& ctx, const TaskSpec& task,
                          const InputStats& stats, const Template& tmpl) {
    ctx.validate();
    task.validate();

    std::string lags;
    for (std::size_t i = 0; i < stats.top_lags.size(); ++i) {
        if (i > 0) lags += ", ";
        lags += std::to_string(stats.top_lags[i]);
    }

    const std::unordered_map<std::string, std::string> values = {
        {"case_name", ctx.case_name},
        {"variable", ctx.variable},
        {"mach", format_number(ctx.mach)},
        {"aoa", format_number(ctx.aoa)},
        {"reynolds", format_number(ctx.reynolds)},
        {"description", ctx.description},
        {"lookback", std::to_string(task.lookback)},
        {"horizon", std::to_string(task.horizon)},
        {"instruction", task.instruction},
        {"min", format_number(stats.min)},
        {"max", format_number(stats.max)},
        {"median", format_number(stats.median)},
        {"trend", trend_name(stats.trend)},
        {"lags", lags},
    };

    return substitute(tmpl.context_section, values) + " " +
           substitute(tmpl.task_section, values) + " " +
           substitute(tmpl.stats_section, values);
}

int Vocab::id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? unk_id : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
        throw std::invalid_argument("Vocab: token id " + std::to_string(id) + " out of range [0, " +
                                    std::to_string(tokens.size()) + ")");
    }
    return tokens[static_cast<std::size_t>(id)];
}

Vocab parse_vocab(const std::string& text) {
    Vocab v;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (v.index.count(line))
            throw std::invalid_argument("Vocab: duplicate token \"" + line + "\"");
        v.index[line] = static_cast<int>(v.tokens.size());
        v.tokens.push_back(line);
    }
    if (v.tokens.empty() || v.tokens[0] != "<unk>")
        throw std::invalid_argument("Vocab: first token must be <unk>");
    v.unk_id = 0;
    return v;
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_vocab(ss.str());
}

const Vocab& default_vocab() {
    static const Vocab v = parse_vocab(kDefaultVocabText);
    return v;
}

std::uint64_t vocab_hash(const Vocab& v) {
    std::string joined;
    for (const auto& t : v.tokens) {
        joined += t;
        joined += '\n';
    }
    return fnv1a64(joined);
}

namespace {

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || c == '_';
}

bool is_digit(char c) {
    return c >= '0' && c <= '9';
}

}  // namespace

std::vector<std::string> normalize_tokens(const std::string& text) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = lower.size();
    while (i < n) {
        const char c = lower[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            std::size_t start = i;
            while (i < n && is_word_char(lower[i])) ++i;
            tokens.push_back(lower.substr(start, i - start));
            continue;
        }
        if (is_digit(c)) {
            // Maximal numeric literal: digits [. digits] [e [+-] digits].
            std::size_t start = i;
            while (i < n && is_digit(lower[i])) ++i;
            if (i + 1 < n && lower[i] == '.' && is_digit(lower[i + 1])) {
                ++i;
                while (i < n && is_digit(lower[i])) ++i;
            }
            if (i < n && lower[i] == 'e') {
                std::size_t j = i + 1;
                if (j < n && (lower[j] == '+' || lower[j] == '-')) ++j;
                if (j < n && is_digit(lower[j])) {
                    i = j;
                    while (i < n && is_digit(lower[i])) ++i;
                }
            }
            const double value = std::strtod(lower.substr(start, i - start).c_str(), nullptr);
            for (char qc : format_number(value)) tokens.push_back(std::string(1, qc));
            continue;
        }
        tokens.push_back(std::string(1, c));
        ++i;
    }
    return tokens;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const std::string& t : normalize_tokens(text)) ids.push_back(vocab.id_of(t));
    return ids;
}

std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vocab.token(id));
    return out;
}

Matrix embed_tokens(const std::vector<int>& ids, const Matrix& embedding) {
    Matrix out(ids.size(), embedding.cols);
    for (std::size_t p = 0; p < ids.size(); ++p) {
        const int id = ids[p];
        if (id < 0 || static_cast<std::size_t>(id) >= embedding.rows) {
            throw std::invalid_argument("embed_tokens: id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(embedding.rows) +
                                        ")");
        }
        for (std::size_t j = 0; j < embedding.cols; ++j) {
            out(p, j) = embedding(static_cast<std::size_t>(id), j);
        }
    }
    return out;
}

}  // namespace flowrom::prompt
