#include "replyfx/textadjust.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "replyfx/errors.hpp"
#include "replyfx/stats.hpp"

namespace replyfx::textadjust {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

SlurList SlurList::load(const std::string& path, std::string replacement) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open slur list: " + path);
    SlurList list;
    list.replacement = std::move(replacement);
    std::unordered_set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::string term = lower_ascii(line);
        if (!seen.insert(term).second) throw InputError("duplicate slur term: " + term);
        list.terms.push_back(std::move(term));
    }
    if (list.terms.empty()) throw InputError("slur list is empty: " + path);
    return list;
}

std::unordered_set<std::string> load_stopwords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open stopword list: " + path);
    std::unordered_set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) out.insert(lower_ascii(line));
    }
    return out;
}

std::string strip_blockquotes(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        bool has_newline = nl != std::string_view::npos;
        std::string_view line = text.substr(pos, has_newline ? nl - pos : std::string_view::npos);
        pos = has_newline ? nl + 1 : text.size();

        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        bool quoted = i < line.size() && (line[i] == '>' || line.substr(i, 4) == "&gt;");
        if (quoted) continue;
        out.append(line);
        if (has_newline) out.push_back('\n');
    }
    return out;
}

std::string replace_slurs(std::string_view text, const SlurList& slurs) {
    std::unordered_set<std::string> term_set(slurs.terms.begin(), slurs.terms.end());
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
            out.push_back(text[i]);
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        std::string_view word = text.substr(start, i - start);
        if (term_set.count(lower_ascii(word)))
            out.append(slurs.replacement);
        else
            out.append(word);
    }
    return out;
}

std::vector<Keyword> tfidf_keywords(const std::vector<std::string>& target_docs,
                                    const std::vector<std::string>& background_docs,
                                    std::size_t top_n,
                                    const std::unordered_set<std::string>& stopwords) {
    if (target_docs.empty() || background_docs.empty())
        throw InputError("tfidf_keywords: corpora must be non-empty");

    auto tokenize_into = [&](const std::string& doc, auto&& per_token) {
        std::size_t i = 0;
        while (i < doc.size()) {
            if (!is_word_byte(static_cast<unsigned char>(doc[i]))) {
                ++i;
                continue;
            }
            std::size_t start = i;
            while (i < doc.size() && is_word_byte(static_cast<unsigned char>(doc[i]))) ++i;
            std::string token = lower_ascii(std::string_view(doc).substr(start, i - start));
            if (!stopwords.count(token)) per_token(std::move(token));
        }
    };

    // df over the pooled document set; tf over the target corpus.
    std::map<std::string, int> df;
    std::map<std::string, double> tf;
    auto add_df = [&](const std::string& doc) {
        std::unordered_set<std::string> seen;
        tokenize_into(doc, [&](std::string token) {
            if (seen.insert(token).second) ++df[token];
        });
    };
    for (const auto& doc : target_docs) {
        add_df(doc);
        tokenize_into(doc, [&](std::string token) { tf[token] += 1.0; });
    }
    for (const auto& doc : background_docs) add_df(doc);

    const double n_docs = static_cast<double>(target_docs.size() + background_docs.size());
    std::vector<Keyword> ranked;
    ranked.reserve(tf.size());
    for (const auto& [term, count] : tf) {
        double idf = std::log((n_docs + 1.0) / (df[term] + 1.0)) + 1.0;
        ranked.push_back({term, count * idf});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Keyword& a, const Keyword& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.term < b.term;
    });
    if (ranked.size() > top_n) ranked.resize(top_n);
    return ranked;
}

ToxicityComparison adjusted_toxicity_comparison(
    const std::array<std::vector<std::string>, labeler::kNumClasses>& replies_by_class,
    const SlurList& slurs, scorers::ToxicityScorer& scorer) {
    ToxicityComparison report;
    std::array<std::vector<double>, labeler::kNumClasses> raw, adjusted;
    for (int c = 0; c < labeler::kNumClasses; ++c) {
        bool counterspeech = c == static_cast<int>(labeler::LabelClass::Counterspeech);
        for (const auto& text : replies_by_class[static_cast<std::size_t>(c)]) {
            double raw_score = scorer.score_toxicity(text);
            raw[static_cast<std::size_t>(c)].push_back(raw_score);
            double adj_score = raw_score;
            if (counterspeech) {
                std::string cleaned = replace_slurs(strip_blockquotes(text), slurs);
                // A reply that was entirely quote collapses to nothing; keep its
                // raw score rather than scoring an empty string.
                if (!cleaned.empty() && cleaned != text) adj_score = scorer.score_toxicity(cleaned);
            }
            adjusted[static_cast<std::size_t>(c)].push_back(adj_score);
        }
    }

    for (int c = 0; c < labeler::kNumClasses; ++c) {
        auto& cell = report.per_class[static_cast<std::size_t>(c)];
        const auto& r = raw[static_cast<std::size_t>(c)];
        const auto& a = adjusted[static_cast<std::size_t>(c)];
        cell.n = static_cast<int>(r.size());
        if (cell.n == 0) continue;
        cell.raw_mean = stats::mean(r);
        cell.adjusted_mean = stats::mean(a);
        cell.raw_se = std::sqrt(stats::sample_variance(r) / cell.n);
        cell.adjusted_se = std::sqrt(stats::sample_variance(a) / cell.n);
    }

    const auto& other = report.per_class[static_cast<std::size_t>(labeler::LabelClass::Other)];
    for (int c = 0; c < labeler::kNumClasses; ++c) {
        auto& cell = report.per_class[static_cast<std::size_t>(c)];
        double nan = std::numeric_limits<double>::quiet_NaN();
        report.raw_pct_vs_other[static_cast<std::size_t>(c)] =
            (other.n > 0 && other.raw_mean > 0 && cell.n > 0)
                ? 100.0 * (cell.raw_mean - other.raw_mean) / other.raw_mean
                : nan;
        report.adjusted_pct_vs_other[static_cast<std::size_t>(c)] =
            (other.n > 0 && other.adjusted_mean > 0 && cell.n > 0)
                ? 100.0 * (cell.adjusted_mean - other.adjusted_mean) / other.adjusted_mean
                : nan;
    }
    return report;
}

}  // namespace replyfx::textadjust
