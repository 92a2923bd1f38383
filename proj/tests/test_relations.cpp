#include <catch2/catch_amalgamated.hpp>

#include <reze/relations.hpp>

#include "support.hpp"

using reze::EmbeddingDump;
using reze::Index;
using reze::Matrix;
using reze::RelationSet;
using reze::Vector;
using test_support::CaptureWarnings;

namespace {

EmbeddingDump make_dump(Matrix vectors, std::vector<std::uint32_t> ids,
                        std::vector<std::string> names) {
  EmbeddingDump d;
  d.dim = vectors.cols();
  d.vectors = std::move(vectors);
  d.source_ids = std::move(ids);
  d.source_names = std::move(names);
  return d;
}

}  // namespace

TEST_CASE("relations concatenate anchor and positive halves") {
  Matrix a(2, 2), p(2, 2);
  a << 3.0, 4.0, 1.0, 0.0;
  p << 0.0, 2.0, 5.0, 12.0;
  const auto anchors = make_dump(a, {0, 1}, {"s0", "s1"});
  const auto positives = make_dump(p, {0, 1}, {"s0", "s1"});

  SECTION("without normalization the rows are literal copies") {
    const RelationSet set = reze::build_relations(anchors, positives, false);
    REQUIRE(set.dim == 4);
    REQUIRE_FALSE(set.normalized);
    Matrix expected(2, 4);
    expected << 3.0, 4.0, 0.0, 2.0, 1.0, 0.0, 5.0, 12.0;
    REQUIRE(set.relations == expected);
    REQUIRE(set.source_ids == anchors.source_ids);
    REQUIRE(set.source_names == anchors.source_names);
  }

  SECTION("with normalization each half has unit norm") {
    const RelationSet set = reze::build_relations(anchors, positives, true);
    REQUIRE(set.normalized);
    // (3,4) has norm 5, (0,2) norm 2, (5,12) norm 13.
    Matrix expected(2, 4);
    expected << 0.6, 0.8, 0.0, 1.0, 1.0, 0.0, 5.0 / 13.0, 12.0 / 13.0;
    REQUIRE((set.relations - expected).cwiseAbs().maxCoeff() < 1e-15);
    for (Index i = 0; i < 2; ++i) {
      REQUIRE(set.relations.row(i).head(2).norm() ==
              Catch::Approx(1.0).margin(1e-12));
      REQUIRE(set.relations.row(i).tail(2).norm() ==
              Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("relation construction validates its inputs") {
  Matrix a(2, 2), p1(1, 2), p2(2, 3);
  a << 1.0, 0.0, 0.0, 1.0;
  p1 << 1.0, 0.0;
  p2 << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  const auto anchors = make_dump(a, {0, 0}, {"s"});

  REQUIRE_THROWS_WITH(
      reze::build_relations(anchors, make_dump(p1, {0}, {"s"})),
      Catch::Matchers::ContainsSubstring("sample count mismatch"));
  REQUIRE_THROWS_WITH(
      reze::build_relations(anchors, make_dump(p2, {0, 0}, {"s"})),
      Catch::Matchers::ContainsSubstring("dimension mismatch"));
  const auto other_ids = make_dump(a, {0, 1}, {"s", "t"});
  REQUIRE_THROWS_WITH(
      reze::build_relations(anchors, other_ids),
      Catch::Matchers::ContainsSubstring("source_ids mismatch"));
}

TEST_CASE("zero vectors pass through normalization with a warning") {
  Matrix a(1, 2), p(1, 2);
  a << 0.0, 0.0;
  p << 1.0, 0.0;
  CaptureWarnings capture;
  const RelationSet set = reze::build_relations(make_dump(a, {0}, {"s"}),
                                                make_dump(p, {0}, {"s"}), true);
  REQUIRE(set.relations(0, 0) == 0.0);
  REQUIRE(set.relations(0, 1) == 0.0);
  REQUIRE(set.relations(0, 2) == 1.0);
  REQUIRE(capture.messages.size() == 1);
  REQUIRE_THAT(capture.messages[0],
               Catch::Matchers::ContainsSubstring("zero-norm"));
}

TEST_CASE("dump validation rejects malformed inputs") {
  Matrix v(1, 2);
  v << 1.0, 2.0;
  REQUIRE_THROWS_WITH(make_dump(v, {5}, {"s"}).validate(),
                      Catch::Matchers::ContainsSubstring("out of range"));
  REQUIRE_THROWS_WITH(make_dump(v, {}, {"s"}).validate(),
                      Catch::Matchers::ContainsSubstring("one source id"));
  Matrix bad(1, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(make_dump(bad, {0}, {"s"}).validate(),
                      Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("pooling concatenates sets and reindexes sources") {
  RelationSet first, second;
  first.dim = 2;
  first.relations = Matrix(2, 2);
  first.relations << 1.0, 0.0, 0.0, 1.0;
  first.source_ids = {0, 1};
  first.source_names = {"a", "b"};
  first.normalized = false;
  second.dim = 2;
  second.relations = Matrix(1, 2);
  second.relations << 2.0, 2.0;
  second.source_ids = {0};
  second.source_names = {"c"};
  second.normalized = false;

  const std::vector<RelationSet> inputs = {first, second};
  const RelationSet pooled = reze::pool_sources(inputs);
  REQUIRE(pooled.size() == 3);
  REQUIRE(pooled.sources() == 3);
  REQUIRE(pooled.source_ids == std::vector<std::uint32_t>{0, 1, 2});
  REQUIRE(pooled.source_names == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(pooled.relations.row(2)(0) == 2.0);
  REQUIRE_FALSE(pooled.normalized);
}

TEST_CASE("pooling rejects mismatched inputs") {
  RelationSet a, b;
  a.dim = 2;
  a.relations = Matrix::Identity(2, 2);
  a.source_ids = {0, 0};
  a.source_names = {"a"};
  b = a;
  b.dim = 4;
  b.relations = Matrix::Identity(4, 4);
  b.source_ids = {0, 0, 0, 0};
  const std::vector<RelationSet> mixed = {a, b};
  REQUIRE_THROWS_WITH(reze::pool_sources(mixed),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));

  b = a;
  b.normalized = false;
  const std::vector<RelationSet> flags = {a, b};
  REQUIRE_THROWS_WITH(reze::pool_sources(flags),
                      Catch::Matchers::ContainsSubstring("normalized flag"));
}

TEST_CASE("pooling a single source warns") {
  RelationSet only;
  only.dim = 2;
  only.relations = Matrix::Identity(2, 2);
  only.source_ids = {0, 0};
  only.source_names = {"solo"};
  CaptureWarnings capture;
  const std::vector<RelationSet> inputs = {only};
  reze::pool_sources(inputs);
  REQUIRE(capture.messages.size() == 1);
  REQUIRE_THAT(capture.messages[0],
               Catch::Matchers::ContainsSubstring("single source"));
}

TEST_CASE("global centering subtracts the pooled mean") {
  RelationSet set;
  set.dim = 2;
  set.relations = Matrix(2, 2);
  set.relations << 1.0, 3.0, 3.0, 5.0;
  set.source_ids = {0, 1};
  set.source_names = {"a", "b"};
  const reze::CenteredRelations centered = reze::global_center(set);
  Vector expected_mean(2);
  expected_mean << 2.0, 4.0;
  REQUIRE(centered.mean == expected_mean);
  REQUIRE(centered.centered.colwise().mean().cwiseAbs().maxCoeff() == 0.0);

  // Centering already-centered rows changes nothing.
  RelationSet again = set;
  again.relations = centered.centered;
  const reze::CenteredRelations twice = reze::global_center(again);
  REQUIRE(twice.mean.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(twice.centered == centered.centered);
}
