#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "metric_oracle.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/metrics.hpp"

using namespace mmfuse;
using mmfuse::testing::frozen_fixture;
using mmfuse::testing::oracle_bleu;
using mmfuse::testing::oracle_cider;
using mmfuse::testing::oracle_rouge;
using mmfuse::testing::toks;

TEST_CASE("bleu: hand-computed value, perfect match, zero overlap") {
  std::vector<EvalPair> one = {
      {"h0", toks("the cat sat"), {toks("the cat sat down")}}};
  CHECK(bleu(one, 1) ==
        doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-9));  // 0.7165

  std::vector<EvalPair> perfect;
  for (const auto& p : frozen_fixture()) {
    EvalPair q = p;
    q.candidate = q.references[0];
    perfect.push_back(q);
  }
  for (int n = 1; n <= 4; ++n) {
    CHECK(bleu(perfect, n) == doctest::Approx(1.0).epsilon(1e-12));
  }

  std::vector<EvalPair> disjoint = {
      {"d0", toks("alpha beta gamma delta"), {toks("epsilon zeta eta theta")}},
      {"d1", toks("one two three four"), {toks("five six seven eight")}}};
  for (int n = 1; n <= 4; ++n) CHECK(bleu(disjoint, n) == 0.0);

  CHECK_THROWS_AS(bleu({}, 1), ContractError);
  CHECK_THROWS_AS(bleu(one, 5), ContractError);
}

TEST_CASE("rouge_l: hand-computed value, identity, reference reordering") {
  std::vector<EvalPair> one = {{"h0", toks("the cat"), {toks("the cat sat")}}};
  // LCS = 2, P = 1, R = 2/3, beta = 1.2
  const double expect = (1 + 1.44) * 1.0 * (2.0 / 3.0) / (2.0 / 3.0 + 1.44);
  CHECK(rouge_l(one) == doctest::Approx(expect).epsilon(1e-9));  // 0.7722

  std::vector<EvalPair> self = {{"s", toks("a b c d"), {toks("a b c d")}}};
  CHECK(rouge_l(self) == doctest::Approx(1.0));

  std::vector<EvalPair> fixture = frozen_fixture();
  std::vector<EvalPair> reordered = fixture;
  for (auto& p : reordered) {
    std::reverse(p.references.begin(), p.references.end());
  }
  CHECK(rouge_l(fixture) ==
        doctest::Approx(rouge_l(reordered)).epsilon(1e-12));
  for (int n = 1; n <= 4; ++n) {
    CHECK(bleu(fixture, n) ==
          doctest::Approx(bleu(reordered, n)).epsilon(1e-12));
  }
  CHECK(cider(fixture) == doctest::Approx(cider(reordered)).epsilon(1e-12));
}

TEST_CASE("cider: self-consensus of sole references reaches exactly 10") {
  std::vector<EvalPair> self;
  for (const auto& p : frozen_fixture()) {
    EvalPair q;
    q.id = p.id;
    q.candidate = p.references[0];
    q.references = {p.references[0]};
    self.push_back(q);
  }
  CHECK(cider(self) == doctest::Approx(10.0).epsilon(1e-9));

  std::vector<EvalPair> disjoint = {
      {"d0", toks("alpha beta gamma delta"), {toks("epsilon zeta eta theta")}},
      {"d1", toks("one two three four"), {toks("five six seven eight")}}};
  CHECK(cider(disjoint) == doctest::Approx(0.0));

  std::vector<EvalPair> lone = {disjoint[0]};
  CHECK_THROWS_AS(cider(lone), ContractError);
}

TEST_CASE("oracle equivalence on the frozen fixture, within 1e-9") {
  const std::vector<EvalPair> fixture = frozen_fixture();
  for (int n = 1; n <= 4; ++n) {
    CHECK(bleu(fixture, n) ==
          doctest::Approx(oracle_bleu(fixture, n)).epsilon(1e-9));
  }
  CHECK(rouge_l(fixture) ==
        doctest::Approx(oracle_rouge(fixture)).epsilon(1e-9));
  CHECK(cider(fixture) ==
        doctest::Approx(oracle_cider(fixture)).epsilon(1e-9));
}

TEST_CASE("tf scaling: repeating a reference n-gram matches the oracle") {
  std::vector<EvalPair> fixture = frozen_fixture();
  // double a 1-gram repetition inside one reference
  fixture[2].references[1] = toks("the regions are mostly green green");
  CHECK(cider(fixture) ==
        doctest::Approx(oracle_cider(fixture)).epsilon(1e-9));
  CHECK(bleu(fixture, 2) ==
        doctest::Approx(oracle_bleu(fixture, 2)).epsilon(1e-9));
}

TEST_CASE("ranges hold over assorted inputs") {
  const std::vector<EvalPair> fixture = frozen_fixture();
  for (int n = 1; n <= 4; ++n) {
    const double b = bleu(fixture, n);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
  }
  const double r = rouge_l(fixture);
  CHECK(r >= 0.0);
  CHECK(r <= 1.0);
  const double c = cider(fixture);
  CHECK(c >= 0.0);
  CHECK(c <= 10.0);
}

TEST_CASE("appending a matching reference never lowers rouge or clipped "
          "precision") {
  for (const auto& base : frozen_fixture()) {
    std::vector<EvalPair> before = {base, frozen_fixture()[9]};
    std::vector<EvalPair> after = before;
    after[0].references.push_back(after[0].candidate);
    CHECK(rouge_l(after) >= rouge_l(before) - 1e-12);
    for (int n = 1; n <= 4; ++n) {
      CHECK(bleu(after, n) >= bleu(before, n) - 1e-12);
    }
  }
}

TEST_CASE("evaluate_corpus: intersection handling and delegation") {
  const std::vector<EvalPair> fixture = frozen_fixture();
  std::map<std::string, std::vector<std::string>> responses;
  std::map<std::string, std::vector<std::vector<std::string>>> references;
  for (const auto& p : fixture) {
    responses[p.id] = p.candidate;
    references[p.id] = p.references;
  }
  responses["ghost"] = toks("not in the corpus");
  references["unanswered"] = {toks("never generated")};

  const ScoreReport report = evaluate_corpus(responses, references);
  CHECK(report.missing_ids == std::vector<std::string>{"ghost"});
  CHECK(report.uncovered_ids == std::vector<std::string>{"unanswered"});
  CHECK(report.per_instance.size() == fixture.size());
  // the assembled scores match the individually invoked metrics exactly
  CHECK(report.bleu1 == bleu(fixture, 1));
  CHECK(report.bleu4 == bleu(fixture, 4));
  CHECK(report.rouge_l == rouge_l(fixture));
  CHECK(report.cider == cider(fixture));

  std::map<std::string, std::vector<std::string>> stranger;
  stranger["ghost"] = toks("still not here");
  CHECK_THROWS_AS(evaluate_corpus(stranger, references), ContractError);
}

TEST_CASE("self-evaluation against first references maxes every metric") {
  std::map<std::string, std::vector<std::string>> responses;
  std::map<std::string, std::vector<std::vector<std::string>>> references;
  for (const auto& p : frozen_fixture()) {
    responses[p.id] = p.references[0];
    references[p.id] = {p.references[0]};  // sole-reference reduction
  }
  const ScoreReport report = evaluate_corpus(responses, references);
  CHECK(report.bleu1 == doctest::Approx(1.0));
  CHECK(report.bleu4 == doctest::Approx(1.0));
  CHECK(report.rouge_l == doctest::Approx(1.0));
  CHECK(report.cider == doctest::Approx(10.0).epsilon(1e-9));
}
