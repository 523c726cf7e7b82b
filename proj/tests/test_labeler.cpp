#include <doctest.h>

#include <string>
#include <vector>

#include "replyfx/errors.hpp"
#include "replyfx/labeler.hpp"
#include "replyfx/scorers.hpp"

using namespace replyfx;
using namespace replyfx::labeler;

namespace {

const char* kTemplate = "Context: {{context}}\nNewcomer: {{newcomer}}\nReply: {{reply}}\nAnswer:";

scorers::WarnFn quiet() {
    return [](const std::string&) {};
}

ConfidenceRecord rec(const char* id, int cs, int hs, int other) {
    return make_confidence_record(id, {cs, hs, other});
}

// Generator that plays back scripted completions in call order.
class ScriptedGenerator : public scorers::TextGenerator {
public:
    explicit ScriptedGenerator(std::vector<std::string> lines) : lines_(std::move(lines)) {}
    std::string generate_label(std::string_view, double, std::uint64_t) override {
        const auto i = std::min(calls_, lines_.size() - 1);
        ++calls_;
        return lines_[i];
    }
    std::size_t calls() const { return calls_; }

private:
    std::vector<std::string> lines_;
    std::size_t calls_ = 0;
};

}  // namespace

TEST_SUITE("labeler") {

TEST_CASE("label names round-trip and reject unknowns") {
    CHECK(label_name(LabelClass::Counterspeech) == std::string("counterspeech"));
    CHECK(label_name(LabelClass::HateSpeech) == std::string("hate speech"));
    CHECK(label_name(LabelClass::Other) == std::string("other"));
    for (auto c : {LabelClass::Counterspeech, LabelClass::HateSpeech, LabelClass::Other})
        CHECK(label_from_name(label_name(c)) == c);
    CHECK_FALSE(label_from_name("unknown").has_value());
}

TEST_CASE("confidence records derive k, fractions, and argmax") {
    const auto r = rec("x", 3, 1, 1);
    CHECK(r.k == 5);
    CHECK(r.confidence[0] == doctest::Approx(0.6));
    CHECK(r.confidence[1] == doctest::Approx(0.2));
    CHECK(r.argmax_label == LabelClass::Counterspeech);
    // Ties resolve to the first class in enum order.
    CHECK(rec("y", 2, 2, 1).argmax_label == LabelClass::Counterspeech);
    CHECK(rec("z", 0, 2, 2).argmax_label == LabelClass::HateSpeech);
}

TEST_CASE("prompt rendering fills every slot or throws") {
    const auto p = render_prompt(kTemplate, "ctx", "first post", "the reply");
    CHECK(p.find("Context: ctx") != std::string::npos);
    CHECK(p.find("Newcomer: first post") != std::string::npos);
    CHECK(p.find("Reply: the reply") != std::string::npos);
    CHECK(p.find("{{") == std::string::npos);
    CHECK_THROWS_AS((void)render_prompt("Newcomer: {{newcomer}}", "a", "b", "c"), InputError);
}

TEST_CASE("model replies parse loosely but fail on garbage") {
    auto p = parse_model_reply("(newcomer: hate speech, reply: counterspeech)");
    CHECK(p.first == LabelClass::HateSpeech);
    CHECK(p.second == LabelClass::Counterspeech);

    p = parse_model_reply("Sure! Here you go:\n(Newcomer:  OTHER ,\tReply: Hate  Speech)");
    CHECK(p.first == LabelClass::Other);
    CHECK(p.second == LabelClass::HateSpeech);

    CHECK_THROWS_AS((void)parse_model_reply("I cannot assist with that."), ParseError);
    CHECK_THROWS_AS((void)parse_model_reply("(newcomer: spam, reply: other)"), ParseError);
}

TEST_CASE("ensemble votes mirror the stub vote tags") {
    scorers::StubGenerator gen;
    LabelPairInput pair;
    pair.item_id = "t1";
    pair.context = "a thread";
    pair.newcomer = "@votes:hhhoo@ newcomer text";
    pair.reply = "@votes:ccoho@ reply text";
    // Seeds 1..5 walk the vote strings in order.
    const auto res = ensemble_label(gen, pair, kTemplate, {}, quiet());
    CHECK(res.newcomer.votes == std::array<int, 3>{0, 3, 2});
    CHECK(res.reply.votes == std::array<int, 3>{2, 1, 2});
    CHECK(res.newcomer.argmax_label == LabelClass::HateSpeech);
    CHECK(res.resamples_used == 0);
    CHECK(res.counted_as_other == 0);
}

TEST_CASE("unparseable completions are resampled then counted as other") {
    LabelPairInput pair;
    pair.item_id = "t2";
    pair.newcomer = "n";
    pair.reply = "r";
    EnsembleConfig config;
    config.k = 3;
    config.max_resamples = 2;

    SUBCASE("a transient failure burns one resample") {
        ScriptedGenerator gen({"nonsense", "(newcomer: other, reply: counterspeech)"});
        const auto res = ensemble_label(gen, pair, kTemplate, config, quiet());
        CHECK(res.resamples_used == 1);
        CHECK(res.counted_as_other == 0);
        CHECK(res.reply.votes == std::array<int, 3>{3, 0, 0});
        CHECK(gen.calls() == 4); // one wasted sample plus three votes
    }

    SUBCASE("budget exhaustion falls back to other votes") {
        ScriptedGenerator gen({"still nonsense"});
        const auto res = ensemble_label(gen, pair, kTemplate, config, quiet());
        CHECK(res.resamples_used == 2);
        CHECK(res.counted_as_other == 3);
        CHECK(res.reply.votes == std::array<int, 3>{0, 0, 3});
        CHECK(res.newcomer.votes == std::array<int, 3>{0, 0, 3});
    }
}

TEST_CASE("majority vote flags ties") {
    AnnotationTable table;
    table.rows = {{LabelClass::Counterspeech, LabelClass::Counterspeech, LabelClass::Other},
                  {LabelClass::HateSpeech, LabelClass::Other, LabelClass::Other},
                  {LabelClass::Counterspeech, LabelClass::HateSpeech, LabelClass::Other}};
    const auto mv = majority_vote(table);
    CHECK(mv.labels == std::vector<LabelClass>{LabelClass::Counterspeech, LabelClass::Other,
                                               LabelClass::Counterspeech});
    CHECK(mv.tie == std::vector<bool>{false, false, true});
}

TEST_CASE("fleiss kappa on the frozen two-item table") {
    // Two items, three raters, votes 2-1 and 1-2 across two classes:
    // observed agreement 1/3, chance agreement 1/2, kappa -1/3.
    AnnotationTable table;
    table.rows = {{LabelClass::Counterspeech, LabelClass::Counterspeech, LabelClass::HateSpeech},
                  {LabelClass::HateSpeech, LabelClass::HateSpeech, LabelClass::Counterspeech}};
    const auto kappa = fleiss_kappa(table);
    REQUIRE(kappa.has_value());
    CHECK(*kappa == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));

    AnnotationTable unanimous;
    unanimous.rows = {{LabelClass::Other, LabelClass::Other},
                      {LabelClass::Other, LabelClass::Other}};
    CHECK_FALSE(fleiss_kappa(unanimous).has_value());

    AnnotationTable ragged;
    ragged.rows = {{LabelClass::Other, LabelClass::Other}, {LabelClass::Other}};
    CHECK_THROWS_AS((void)fleiss_kappa(ragged), InputError);
}

TEST_CASE("precision at threshold counts only confident predictions") {
    const std::vector<ConfidenceRecord> records{rec("a", 5, 0, 0), rec("b", 4, 1, 0),
                                                rec("c", 3, 2, 0), rec("d", 0, 5, 0)};
    const std::vector<LabelClass> gold{LabelClass::Counterspeech, LabelClass::Other,
                                       LabelClass::Counterspeech, LabelClass::HateSpeech};
    auto res = precision_at_threshold(records, gold, LabelClass::Counterspeech, 0.8);
    CHECK(res.n_predicted == 2);
    CHECK(res.precision == doctest::Approx(0.5));

    res = precision_at_threshold(records, gold, LabelClass::Counterspeech, 0.6);
    CHECK(res.n_predicted == 3);
    CHECK(res.precision == doctest::Approx(2.0 / 3.0));

    res = precision_at_threshold(records, gold, LabelClass::Other, 0.9);
    CHECK(res.n_predicted == 0);
    CHECK_FALSE(res.precision.has_value());

    CHECK_THROWS_AS((void)precision_at_threshold(records, {}, LabelClass::Other, 0.5), InputError);
}

TEST_CASE("threshold selection maximizes precision with a support floor") {
    const std::vector<ConfidenceRecord> records{rec("a", 5, 0, 0), rec("b", 4, 1, 0),
                                                rec("c", 3, 2, 0), rec("d", 2, 3, 0)};
    const std::vector<LabelClass> gold{LabelClass::Counterspeech, LabelClass::Counterspeech,
                                       LabelClass::Other, LabelClass::Other};
    // Precision 1.0 first reached at confidence 0.8 with 2 predictions.
    CHECK(select_threshold(records, gold, LabelClass::Counterspeech, 1) == doctest::Approx(0.8));
    // Requiring more support forces the lower, less precise threshold.
    CHECK(select_threshold(records, gold, LabelClass::Counterspeech, 3) == doctest::Approx(0.6));
    CHECK_THROWS_AS((void)select_threshold(records, gold, LabelClass::Counterspeech, 5),
                    InfeasibleError);
}

TEST_CASE("roc auc on the frozen four-item oracle") {
    // Positive scores {0.9, 0.4}, negative {0.6, 0.1}: 3 of 4 pairs ordered.
    const std::vector<ConfidenceRecord> records{rec("a", 9, 1, 0), rec("b", 4, 6, 0),
                                                rec("c", 6, 4, 0), rec("d", 1, 9, 0)};
    const std::vector<LabelClass> gold{LabelClass::Counterspeech, LabelClass::Counterspeech,
                                       LabelClass::HateSpeech, LabelClass::HateSpeech};
    CHECK(roc_auc(records, gold, LabelClass::Counterspeech) == doctest::Approx(0.75).epsilon(1e-12));
    // Ties contribute one half.
    const std::vector<ConfidenceRecord> tied{rec("a", 1, 1, 0), rec("b", 1, 1, 0)};
    CHECK(roc_auc(tied, {LabelClass::Counterspeech, LabelClass::Other},
                  LabelClass::Counterspeech) == doctest::Approx(0.5));
    CHECK_FALSE(roc_auc(records,
                        {LabelClass::Counterspeech, LabelClass::Counterspeech,
                         LabelClass::Counterspeech, LabelClass::Counterspeech},
                        LabelClass::Counterspeech)
                    .has_value());
}

TEST_CASE("bootstrap intervals are deterministic and cover the point value") {
    std::vector<double> values(100);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i);
    auto metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        double s = 0.0;
        for (auto j : idx) s += values[j];
        return s / static_cast<double>(idx.size());
    };
    const auto ci = bootstrap_ci(metric, values.size(), 500, 0.95, 7);
    CHECK(ci.lower < 49.5);
    CHECK(ci.upper > 49.5);
    CHECK(ci.upper - ci.lower > 5.0);
    CHECK(ci.upper - ci.lower < 15.0);
    const auto again = bootstrap_ci(metric, values.size(), 500, 0.95, 7);
    CHECK(ci.lower == again.lower);
    CHECK(ci.upper == again.upper);

    auto undefined = [](const std::vector<std::size_t>&) -> std::optional<double> {
        return std::nullopt;
    };
    CHECK_THROWS_AS((void)bootstrap_ci(undefined, 10, 100), InstabilityError);
}

TEST_CASE("evaluate assembles thresholds, precision, and auc per class") {
    std::vector<ConfidenceRecord> records;
    std::vector<LabelClass> gold;
    for (int i = 0; i < 12; ++i) {
        records.push_back(rec("cs", 4, 1, 0));
        gold.push_back(i < 10 ? LabelClass::Counterspeech : LabelClass::Other);
    }
    for (int i = 0; i < 12; ++i) {
        records.push_back(rec("oth", 1, 1, 3));
        gold.push_back(i < 10 ? LabelClass::Other : LabelClass::Counterspeech);
    }
    const auto report = evaluate(records, gold, 5, 100, 3);
    CHECK(report.n_items == 24);
    const auto& cs = report.per_class[0];
    REQUIRE(cs.precision.has_value());
    CHECK(*cs.precision == doctest::Approx(10.0 / 12.0));
    CHECK(cs.threshold == doctest::Approx(0.8));
    CHECK(cs.n_predicted == 12);
    CHECK(cs.n_gold == 12);
    REQUIRE(cs.auc.has_value());
    CHECK(cs.precision_ci.lower <= *cs.precision);
    CHECK(cs.precision_ci.upper >= *cs.precision);
    // The floor threshold predicts everything, so a class with no gold
    // support still reports a (zero) precision but no AUC.
    const auto& hs = report.per_class[1];
    REQUIRE(hs.precision.has_value());
    CHECK(*hs.precision == 0.0);
    CHECK_FALSE(hs.auc.has_value());
    CHECK(hs.n_gold == 0);
}

TEST_CASE("temperature sweep reports a tie when samples ignore temperature") {
    // Stub votes depend only on the seed, so every temperature produces the
    // same table and the sweep keeps the lowest one.
    scorers::StubGenerator gen;
    std::vector<LabelPairInput> pairs;
    std::vector<LabelClass> gold;
    for (int i = 0; i < 6; ++i) {
        LabelPairInput p;
        p.item_id = "p" + std::to_string(i);
        p.newcomer = "@votes:ooooo@ n";
        p.reply = i < 4 ? "@votes:ccccc@ r" : "@votes:ccooo@ r";
        pairs.push_back(p);
        gold.push_back(i < 4 ? LabelClass::Counterspeech : LabelClass::Other);
    }
    const auto sweep = temperature_sweep(gen, pairs, gold, kTemplate, {0.5, 1.0, 1.5}, 5, 2,
                                         quiet());
    CHECK(sweep.table.size() == 3);
    CHECK(sweep.best_temperature == 0.5);
    CHECK(sweep.tie);
    for (const auto& row : sweep.table) {
        REQUIRE(row.precision.has_value());
        CHECK(*row.precision == doctest::Approx(1.0));
        CHECK(row.n_predicted == 4);
    }
}

}  // TEST_SUITE
