#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "replyfx/errors.hpp"
#include "replyfx/scorers.hpp"
#include "replyfx/textadjust.hpp"

using namespace replyfx;
using namespace replyfx::textadjust;

namespace {

std::string temp_path(const std::string& stem) {
    return "/tmp/replyfx_textadjust_" + std::to_string(getpid()) + "_" + stem;
}

std::string write_temp(const std::string& stem, const std::string& content) {
    auto path = temp_path(stem);
    std::ofstream out(path);
    out << content;
    return path;
}

// Looks scores up in a table so the adjusted path is observable; counts calls
// to prove unchanged texts are not rescored.
class TableScorer : public scorers::ToxicityScorer {
public:
    explicit TableScorer(std::map<std::string, double> table) : table_(std::move(table)) {}
    double score_toxicity(std::string_view text) override {
        ++calls;
        auto it = table_.find(std::string(text));
        REQUIRE_MESSAGE(it != table_.end(), "unexpected text scored: " << text);
        return it->second;
    }
    int calls = 0;

private:
    std::map<std::string, double> table_;
};

}  // namespace

TEST_SUITE("textadjust") {

TEST_CASE("slur list normalizes, deduplicates, and rejects bad input") {
    auto path = write_temp("slurs.txt", "Vermin \r\nslurx\n\n");
    auto list = SlurList::load(path, "individual");
    CHECK(list.terms == std::vector<std::string>{"vermin", "slurx"});
    CHECK(list.replacement == "individual");

    auto dup = write_temp("slurs_dup.txt", "slurx\nSLURX\n");
    CHECK_THROWS_AS((void)SlurList::load(dup), InputError);
    auto empty = write_temp("slurs_empty.txt", "\n\n");
    CHECK_THROWS_AS((void)SlurList::load(empty), InputError);
    CHECK_THROWS_AS((void)SlurList::load(temp_path("missing.txt")), InputError);

    std::remove(path.c_str());
    std::remove(dup.c_str());
    std::remove(empty.c_str());
}

TEST_CASE("bundled stopword list loads lowercased") {
    const auto words = load_stopwords(REPLYFX_ASSET_DIR "/stopwords.txt");
    CHECK(words.count("a") == 1);
    CHECK(words.count("about") == 1);
    CHECK(words.size() > 50);
    CHECK_THROWS_AS((void)load_stopwords(temp_path("nope.txt")), InputError);
}

TEST_CASE("blockquote stripping drops quoted lines byte-exactly") {
    CHECK(strip_blockquotes("keep one\n> quoted\nkeep two") == "keep one\nkeep two");
    CHECK(strip_blockquotes("  &gt; escaped quote\nbody\n") == "body\n");
    CHECK(strip_blockquotes("\t> tabbed quote\n") == "");
    CHECK(strip_blockquotes("> everything quoted") == "");
    CHECK(strip_blockquotes("a &gt; b stays inline") == "a &gt; b stays inline");
    CHECK(strip_blockquotes("") == "");
    CHECK(strip_blockquotes("no quotes here\n") == "no quotes here\n");
}

TEST_CASE("slur replacement is whole-word and case-insensitive") {
    SlurList slurs;
    slurs.terms = {"slurx", "vermin"};
    CHECK(replace_slurs("SlurX here, vermin!", slurs) == "person here, person!");
    CHECK(replace_slurs("notslurx slurxnot slurx2", slurs) == "notslurx slurxnot slurx2");
    CHECK(replace_slurs("slurx.slurx-SLURX", slurs) == "person.person-person");
    // Multi-byte characters extend the word, so the term no longer matches.
    CHECK(replace_slurs("\xc3\xa9slurx", slurs) == "\xc3\xa9slurx");
    CHECK(replace_slurs("", slurs) == "");
}

TEST_CASE("tfidf ranking follows the smoothed idf formula") {
    const std::vector<std::string> target{"apple banana apple", "banana cherry"};
    const std::vector<std::string> background{"cherry cherry date"};

    const auto ranked = tfidf_keywords(target, background, 10);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].term == "apple");
    CHECK(ranked[0].score == doctest::Approx(2.0 * (std::log(4.0 / 2.0) + 1.0)));
    CHECK(ranked[1].term == "banana");
    CHECK(ranked[1].score == doctest::Approx(2.0 * (std::log(4.0 / 3.0) + 1.0)));
    CHECK(ranked[2].term == "cherry");
    CHECK(ranked[2].score == doctest::Approx(std::log(4.0 / 3.0) + 1.0));

    const auto top1 = tfidf_keywords(target, background, 1);
    REQUIRE(top1.size() == 1);
    CHECK(top1[0].term == "apple");

    const auto filtered = tfidf_keywords(target, background, 10, {"apple"});
    CHECK(filtered[0].term == "banana");

    // Equal scores rank lexicographically.
    const auto tied = tfidf_keywords({"bb aa"}, {"zz"}, 10);
    REQUIRE(tied.size() == 2);
    CHECK(tied[0].term == "aa");
    CHECK(tied[1].term == "bb");

    CHECK_THROWS_AS((void)tfidf_keywords({}, background, 10), InputError);
    CHECK_THROWS_AS((void)tfidf_keywords(target, {}, 10), InputError);
}

TEST_CASE("adjusted comparison rescores only changed counterspeech") {
    SlurList slurs;
    slurs.terms = {"slurx"};

    const std::string cs_changed = "&gt; quoted insult\nyou slurx";
    const std::string cs_all_quote = "> nothing but quote";
    const std::string cs_clean = "calm reply";

    std::array<std::vector<std::string>, 3> replies;
    replies[0] = {cs_changed, cs_all_quote, cs_clean};
    replies[1] = {"hateful text"};
    replies[2] = {"other a", "other b"};

    TableScorer scorer({{cs_changed, 0.9},
                        {"you person", 0.1},
                        {cs_all_quote, 0.7},
                        {cs_clean, 0.2},
                        {"hateful text", 0.8},
                        {"other a", 0.2},
                        {"other b", 0.4}});

    const auto report = adjusted_toxicity_comparison(replies, slurs, scorer);
    // One extra call for the single rewritten counterspeech reply.
    CHECK(scorer.calls == 7);

    const auto& cs = report.per_class[0];
    CHECK(cs.n == 3);
    CHECK(cs.raw_mean == doctest::Approx(0.6));
    CHECK(cs.adjusted_mean == doctest::Approx((0.1 + 0.7 + 0.2) / 3.0));

    const auto& hate = report.per_class[1];
    CHECK(hate.n == 1);
    CHECK(hate.raw_mean == doctest::Approx(0.8));
    CHECK(hate.adjusted_mean == doctest::Approx(0.8));
    CHECK(hate.raw_se == 0.0);

    const auto& other = report.per_class[2];
    CHECK(other.n == 2);
    CHECK(other.raw_mean == doctest::Approx(0.3));
    CHECK(other.raw_se == doctest::Approx(0.1));

    CHECK(report.raw_pct_vs_other[0] == doctest::Approx(100.0));
    CHECK(report.adjusted_pct_vs_other[0] ==
          doctest::Approx(100.0 * (cs.adjusted_mean - 0.3) / 0.3));
    CHECK(report.raw_pct_vs_other[1] == doctest::Approx(100.0 * (0.8 - 0.3) / 0.3));
    CHECK(report.raw_pct_vs_other[2] == doctest::Approx(0.0));
}

TEST_CASE("comparison handles empty classes with nan percentages") {
    SlurList slurs;
    slurs.terms = {"slurx"};
    std::array<std::vector<std::string>, 3> replies;
    replies[1] = {"hateful text"};
    TableScorer scorer({{"hateful text", 0.8}});

    const auto report = adjusted_toxicity_comparison(replies, slurs, scorer);
    CHECK(report.per_class[0].n == 0);
    CHECK(report.per_class[2].n == 0);
    CHECK(std::isnan(report.raw_pct_vs_other[1]));
    CHECK(std::isnan(report.adjusted_pct_vs_other[0]));
}

}  // TEST_SUITE
