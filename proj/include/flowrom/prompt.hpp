#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowrom/matrix.hpp"
#include "flowrom/series.hpp"

namespace flowrom::prompt {

// Flow-case background rendered into the prompt's context section.
struct DatasetContext {
    std::string case_name;
    std::string variable;  // density / pressure / velocity / ...
    double mach = 0.0;
    double aoa = 0.0;  // degrees
    double reynolds = 1.0;
    std::string description;

    void validate() const;
};

struct TaskSpec {
    std::size_t lookback = 10;
    std::size_t horizon = 1;
    std::string instruction;  // optional extra guidance appended by custom templates

    void validate() const;
};

enum class Trend { up, down, flat };
const char* trend_name(Trend t);

struct InputStats {
    double min = 0.0;
    double max = 0.0;
    double median = 0.0;
    Trend trend = Trend::flat;
    std::vector<std::size_t> top_lags;
};

InputStats compute_stats(const series::Window& w, std::size_t lag_count = 5);

// Three-section prompt template: context, task guidance, input statistics.
// The sections are the lines of the template file, in that order.
struct Template {
    std::string context_section;
    std::string task_section;
    std::string stats_section;
    std::string version;

    static Template parse(const std::string& text, const std::string& version);
};

const Template& default_template();
Template load_template(const std::string& path);

std::string render_prompt(const DatasetContext& ctx, const TaskSpec& task,
                          const InputStats& stats, const Template& tmpl = default_template());

// Word-level vocabulary; line number is the token id and line 0 is "<unk>".
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;
    int unk_id = 0;

    std::size_t size() const { return tokens.size(); }
    int id_of(const std::string& token) const;
    const std::string& token(int id) const;
};

Vocab parse_vocab(const std::string& text);
Vocab load_vocab(const std::string& path);
const Vocab& default_vocab();
std::uint64_t vocab_hash(const Vocab& v);

// Lowercases, splits on whitespace/punctuation, quantizes numeric literals to
// 4 significant digits and splits them into per-character tokens.
std::vector<std::string> normalize_tokens(const std::string& text);
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
std::vector<std::string> detokenize(const std::vector<int>& ids, const Vocab& vocab);

Matrix embed_tokens(const std::vector<int>& ids, const Matrix& embedding);

// 4-significant-digit rendering used by both the template and the tokenizer.
std::string format_number(double value);

}  // namespace flowrom::prompt
