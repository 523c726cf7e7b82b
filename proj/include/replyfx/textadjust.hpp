#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "replyfx/labeler.hpp"
#include "replyfx/scorers.hpp"

namespace replyfx::textadjust {

struct SlurList {
    std::vector<std::string> terms; // lowercase, deduplicated
    std::string replacement = "person";

    static SlurList load(const std::string& path, std::string replacement = "person");
};

std::unordered_set<std::string> load_stopwords(const std::string& path);

// Drops lines whose first non-whitespace characters are ">" or "&gt;". Kept
// lines are byte-identical; a trailing newline survives iff a kept line had one.
std::string strip_blockquotes(std::string_view text);

// Case-insensitive whole-word replacement. Word boundaries are non-alphanumeric
// bytes; bytes >= 0x80 count as word characters so UTF-8 words stay intact.
std::string replace_slurs(std::string_view text, const SlurList& slurs);

struct Keyword {
    std::string term;
    double score = 0.0;
};

// Terms most characteristic of the target corpus: score = term frequency in
// target * (log((N+1)/(df+1)) + 1) with N and df over the pooled documents.
// Ties rank lexicographically.
std::vector<Keyword> tfidf_keywords(const std::vector<std::string>& target_docs,
                                    const std::vector<std::string>& background_docs,
                                    std::size_t top_n = 1000,
                                    const std::unordered_set<std::string>& stopwords = {});

struct ClassToxicity {
    int n = 0;
    double raw_mean = 0.0;
    double raw_se = 0.0;
    double adjusted_mean = 0.0;
    double adjusted_se = 0.0;
};

struct ToxicityComparison {
    std::array<ClassToxicity, labeler::kNumClasses> per_class;
    // Percent excess of each class's mean over the Other class, e.g. 88 means
    // "88% more toxic"; NaN when the Other mean is zero or absent.
    std::array<double, labeler::kNumClasses> raw_pct_vs_other{};
    std::array<double, labeler::kNumClasses> adjusted_pct_vs_other{};
};

// Re-scores counterspeech replies after quote-stripping and slur replacement;
// other classes keep their raw scores.
ToxicityComparison adjusted_toxicity_comparison(
    const std::array<std::vector<std::string>, labeler::kNumClasses>& replies_by_class,
    const SlurList& slurs, scorers::ToxicityScorer& scorer);

}  // namespace replyfx::textadjust
