#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include <json.hpp>

#include "hsearch/ranking.hpp"

using namespace hs;

namespace {

RankNeighbor nb(uint32_t wsi, uint32_t label, double score) {
  return {wsi, label, score};
}

PatchEvidence patch(uint32_t idx, std::vector<RankNeighbor> neighbors) {
  PatchEvidence ev;
  ev.patch_index = idx;
  ev.neighbors = std::move(neighbors);
  return ev;
}

}  // namespace

TEST_CASE("uncertainty weight follows the frozen entropy example") {
  // Three of one label, one of another, two classes.
  std::vector<RankNeighbor> n{nb(0, 0, 1), nb(1, 0, 2), nb(2, 0, 3), nb(3, 1, 4)};
  REQUIRE(weighted_uncertainty(n, 2) ==
          Catch::Approx(0.1887218755408672).margin(1e-12));
}

TEST_CASE("uncertainty weight spans [0,1] with the right endpoints") {
  std::vector<RankNeighbor> unanimous{nb(0, 1, 1), nb(1, 1, 2), nb(2, 1, 3)};
  REQUIRE(weighted_uncertainty(unanimous, 2) == 1.0);
  REQUIRE(weighted_uncertainty(unanimous, 5) == 1.0);

  std::vector<RankNeighbor> split{nb(0, 0, 1), nb(1, 1, 2)};
  REQUIRE(weighted_uncertainty(split, 2) == Catch::Approx(0.0).margin(1e-12));
  // Uniform over 2 of 4 classes: H = ln 2, so w = 1/2.
  REQUIRE(weighted_uncertainty(split, 4) == Catch::Approx(0.5).margin(1e-12));

  // More observed labels than declared classes would go negative; it clamps.
  std::vector<RankNeighbor> three{nb(0, 0, 1), nb(1, 1, 2), nb(2, 2, 3)};
  REQUIRE(weighted_uncertainty(three, 2) == 0.0);

  REQUIRE_THROWS_AS(weighted_uncertainty({}, 2), UsageError);
  REQUIRE_THROWS_AS(weighted_uncertainty(unanimous, 1), UsageError);
}

TEST_CASE("cleaning drops outlier patches past one sigma, hand-traced") {
  // Bests are 1, 1, 1, 10: mean 3.25, sigma ~3.897, threshold ~7.147.
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 0, 1.0), nb(1, 1, 5.0)}),
      patch(1, {nb(2, 0, 1.0), nb(3, 0, 1.0)}),
      patch(2, {nb(4, 1, 1.0), nb(5, 1, 1.0)}),
      patch(3, {nb(6, 2, 10.0), nb(7, 2, 12.0)}),
  };
  auto out = clean(ev, ScoreKind::distance);
  REQUIRE(out.size() == 3);
  REQUIRE(out[0].patch_index == 0);
  REQUIRE(out[1].patch_index == 1);
  REQUIRE(out[2].patch_index == 2);
  // Patch 0 neighbors have mean 3.0; the 5.0 neighbor is strictly worse.
  REQUIRE(out[0].neighbors.size() == 1);
  REQUIRE(out[0].neighbors[0].score == 1.0);
  // Equal-score neighbors sit exactly at their mean and all survive.
  REQUIRE(out[1].neighbors.size() == 2);
  REQUIRE(out[2].neighbors.size() == 2);
}

TEST_CASE("cleaning respects the score direction") {
  // Similarity: bests 10, 10, 10, 2 give mean 8, sigma ~3.464, cut at ~4.54.
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 0, 10.0)}),
      patch(1, {nb(1, 0, 10.0)}),
      patch(2, {nb(2, 0, 10.0)}),
      patch(3, {nb(3, 1, 2.0)}),
  };
  auto out = clean(ev, ScoreKind::similarity);
  REQUIRE(out.size() == 3);
  for (const auto& e : out) REQUIRE(e.patch_index != 3);
}

TEST_CASE("the globally best patch always survives cleaning") {
  std::vector<PatchEvidence> solo{patch(0, {nb(0, 0, 42.0)})};
  auto out = clean(solo, ScoreKind::distance);
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].neighbors.size() == 1);

  std::vector<PatchEvidence> equal{
      patch(0, {nb(0, 0, 3.0)}), patch(1, {nb(1, 1, 3.0)}),
      patch(2, {nb(2, 0, 3.0)})};
  REQUIRE(clean(equal, ScoreKind::distance).size() == 3);

  REQUIRE_THROWS_AS(clean({}, ScoreKind::distance), UsageError);
  std::vector<PatchEvidence> hollow{patch(0, {})};
  REQUIRE_THROWS_AS(clean(hollow, ScoreKind::distance), UsageError);
}

TEST_CASE("prediction filter keeps confident patches and floors at one") {
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 0, 1), nb(1, 0, 2), nb(2, 1, 3)}),  // prob 2/3
      patch(1, {nb(3, 0, 1), nb(4, 1, 2)}),               // prob 1/2
      patch(2, {nb(5, 0, 1), nb(6, 1, 2), nb(7, 2, 3)}),  // prob 1/3
  };
  auto out = filter_by_prediction(ev, ScoreKind::distance, 0.5);
  REQUIRE(out.size() == 2);
  REQUIRE(out[0].patch_index == 0);
  REQUIRE(out[1].patch_index == 1);

  // Nothing reaches 0.9: the single most confident patch stays.
  auto floor = filter_by_prediction(ev, ScoreKind::distance, 0.9);
  REQUIRE(floor.size() == 1);
  REQUIRE(floor[0].patch_index == 0);

  // Probability ties on the floor pick the earliest patch.
  std::vector<PatchEvidence> tied{
      patch(7, {nb(0, 0, 1), nb(1, 1, 2)}),
      patch(9, {nb(2, 0, 1), nb(3, 1, 2)}),
  };
  auto one = filter_by_prediction(tied, ScoreKind::distance, 0.9);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].patch_index == 7);
}

TEST_CASE("a poisoned unanimous outlier flips the pooled vote but not the ranked one") {
  // Two class-0 patches near the query plus one far-away patch whose
  // neighbors are unanimously class 1. Pooled voting counts 5 beats 4;
  // cleaning removes the outlier before it can vote.
  std::vector<PatchEvidence> ev{
      patch(0, {nb(5, 0, 1.0), nb(7, 0, 1.2), nb(9, 1, 1.4)}),
      patch(1, {nb(7, 0, 1.1), nb(5, 0, 1.0), nb(9, 1, 1.3)}),
      patch(2, {nb(8, 1, 9.0), nb(8, 1, 9.5), nb(8, 1, 9.9)}),
  };
  REQUIRE(pooled_label(ev, ScoreKind::distance) == 1);

  RankedOutcome out = rank_and_label(ev, 2, ScoreKind::distance);
  REQUIRE(out.label == 0);
  REQUIRE(out.surviving == std::vector<uint32_t>{0, 1});
  REQUIRE(out.weights.size() == 2);
  for (double w : out.weights) REQUIRE(w == 1.0);  // unanimous after cleanup
}

TEST_CASE("label support ties break by best score, then smaller id") {
  // One patch per label, equal weights; label 1 holds the better distance.
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 1, 1.0), nb(1, 1, 2.0)}),
      patch(1, {nb(2, 0, 1.5), nb(3, 0, 2.0)}),
  };
  RankedOutcome out = rank_and_label(ev, 2, ScoreKind::distance);
  REQUIRE(out.label == 1);

  // Identical best scores: the smaller label id wins.
  std::vector<PatchEvidence> even{
      patch(0, {nb(0, 1, 1.0)}),
      patch(1, {nb(1, 0, 1.0)}),
  };
  REQUIRE(rank_and_label(even, 2, ScoreKind::distance).label == 0);
}

TEST_CASE("pooled majority ties go to the best-scored label") {
  // Labels A,B,A,B,C by increasing distance; rank 1 carries label A.
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 0, 1), nb(1, 1, 2), nb(2, 0, 3), nb(3, 1, 4), nb(4, 2, 5)}),
  };
  REQUIRE(pooled_label(ev, ScoreKind::distance) == 0);

  // Same counts, but under similarity the larger score wins the tie.
  std::vector<PatchEvidence> sim{
      patch(0, {nb(0, 1, 5), nb(1, 0, 4), nb(2, 1, 3), nb(3, 0, 2), nb(4, 2, 1)}),
  };
  REQUIRE(pooled_label(sim, ScoreKind::similarity) == 1);
}

TEST_CASE("ranked WSI ordering weights survivors and breaks ties by raw score") {
  std::vector<PatchEvidence> ev{
      patch(0, {nb(5, 0, 1.0), nb(7, 0, 1.2), nb(9, 1, 1.4)}),
      patch(1, {nb(7, 0, 1.1), nb(5, 0, 1.0), nb(9, 1, 1.3)}),
      patch(2, {nb(8, 1, 9.0), nb(8, 1, 9.5), nb(8, 1, 9.9)}),
  };
  RankedRetrieval rr = rank_evidence(ev, 2, ScoreKind::distance);
  REQUIRE(rr.outcome.label == 0);
  REQUIRE(rr.wsis.size() == 2);  // the outlier's WSI 8 and neighbor 9 are gone
  REQUIRE(rr.wsis[0].wsi == 5);  // ties with 7 on score; better raw 1.0 < 1.1
  REQUIRE(rr.wsis[1].wsi == 7);
  REQUIRE(rr.wsis[0].score == rr.wsis[1].score);

  auto pooled = pooled_wsi_votes(ev, ScoreKind::distance);
  REQUIRE(pooled.size() == 4);
  REQUIRE(pooled[0].wsi == 8);  // three raw votes beat everyone else's two
  REQUIRE(pooled[0].score == 3.0);
  REQUIRE(pooled[1].wsi == 5);
  REQUIRE(pooled[2].wsi == 7);
  REQUIRE(pooled[3].wsi == 9);
}

TEST_CASE("trace lines are valid JSON, one per stage") {
  std::vector<PatchEvidence> ev{
      patch(0, {nb(0, 0, 1.0), nb(1, 0, 1.5)}),
      patch(1, {nb(2, 1, 2.0), nb(3, 0, 2.5)}),
  };
  RankedOutcome out = rank_and_label(ev, 2, ScoreKind::distance, 0.5, true);
  REQUIRE(out.trace.size() == 4);
  std::vector<std::string> stages;
  for (const auto& line : out.trace) {
    auto j = nlohmann::json::parse(line);
    stages.push_back(j.at("stage").get<std::string>());
  }
  REQUIRE(stages == std::vector<std::string>{"clean", "filter", "weights", "label"});

  REQUIRE(rank_and_label(ev, 2, ScoreKind::distance).trace.empty());
}
