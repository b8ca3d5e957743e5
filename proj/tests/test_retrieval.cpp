#include <doctest.h>

#include <cmath>
#include <sstream>

#include "craid/retrieval.hpp"
#include "craid/training.hpp"
#include "testutil.hpp"

using namespace craid;
using testutil::layout_of;
using testutil::level_of;
using testutil::make_tiny;

namespace {

VaryingLengthEmbedding emb(int level, const std::vector<Rational>& ratios,
                           std::vector<std::vector<double>> subvectors) {
  VaryingLengthEmbedding z;
  z.level = ResolutionLevel{level, ratios[level - 1]};
  z.subvectors = std::move(subvectors);
  return z;
}

VaryingLengthEmbedding random_emb(int level, const EmbeddingLayout& layout,
                                  const std::vector<Rational>& ratios, Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VaryingLengthEmbedding z;
  z.level = ResolutionLevel{level, ratios[level - 1]};
  for (int j = 0; j < level; ++j) {
    std::vector<double> sv(layout.dims[j]);
    for (double& v : sv) v = unit(rng);
    z.subvectors.push_back(std::move(sv));
  }
  return z;
}

std::vector<IdentityImageRecord> small_fixture(int identities = 5, int per_camera = 2) {
  FixtureConfig cfg;
  cfg.identities = identities;
  cfg.images_per_camera = per_camera;
  cfg.height = 16;
  cfg.width = 8;
  return make_fixture(cfg);
}

}  // namespace

TEST_CASE("distance over a shared prefix is zero") {
  auto ratios = ratios_for_rates({2, 3, 4});
  auto layout = layout_of({2, 2, 2, 2});
  auto g = emb(4, ratios, {{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  auto q = emb(2, ratios, {{1, 2}, {3, 4}});
  CHECK(cross_res_distance(q, g, layout) == 0.0);
}

TEST_CASE("gallery sub-vectors beyond the query level are ignored") {
  auto ratios = ratios_for_rates({2});
  auto layout = layout_of({2, 2});
  auto q = emb(1, ratios, {{1, 2}});
  auto g = emb(2, ratios, {{3, 4}, {9, 9}});
  CHECK(cross_res_distance(q, g, layout) == 8.0);  // (1-3)^2 + (2-4)^2
}

TEST_CASE("at the top level the metric is the plain squared distance") {
  auto ratios = ratios_for_rates({2, 3, 4});
  auto layout = layout_of({2, 3, 4, 5});
  Rng rng(1);
  auto a = random_emb(4, layout, ratios, rng);
  auto b = random_emb(4, layout, ratios, rng);
  double direct = 0.0;
  auto ca = a.concat(), cb = b.concat();
  for (std::size_t i = 0; i < ca.size(); ++i) direct += (ca[i] - cb[i]) * (ca[i] - cb[i]);
  CHECK(std::fabs(cross_res_distance(a, b, layout) - direct) < 1e-12);
}

TEST_CASE("slicing and zero-pad-then-subtract give the same distance") {
  auto ratios = ratios_for_rates({2, 3, 4});
  auto layout = layout_of({2, 3, 4, 5});
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    for (int k = 1; k <= 4; ++k) {
      auto q = random_emb(k, layout, ratios, rng);
      auto g = random_emb(4, layout, ratios, rng);
      double sliced = cross_res_distance(q, g, layout);

      // Pad both sides to full length, truncating the gallery at level k.
      auto qp = zero_pad(q, layout);
      VaryingLengthEmbedding g_trunc;
      g_trunc.level = ResolutionLevel{k, ratios[k - 1]};
      g_trunc.subvectors.assign(g.subvectors.begin(), g.subvectors.begin() + k);
      auto gp = zero_pad(g_trunc, layout);
      double padded = 0.0;
      for (std::size_t i = 0; i < qp.size(); ++i) padded += (qp[i] - gp[i]) * (qp[i] - gp[i]);
      CHECK(std::fabs(sliced - padded) < 1e-9);
    }
  }
}

TEST_CASE("distance rejects a short gallery embedding") {
  auto ratios = ratios_for_rates({2});
  auto layout = layout_of({2, 2});
  auto q = emb(1, ratios, {{1, 2}});
  CHECK_THROWS_AS(cross_res_distance(q, q, layout), ShapeError);
}

TEST_CASE("ranking sorts by distance with stable ties") {
  auto ratios = ratios_for_rates({2});
  auto layout = layout_of({2, 2});
  auto q = emb(1, ratios, {{0, 0}});
  std::vector<VaryingLengthEmbedding> gallery = {
      emb(2, ratios, {{3, 0}, {0, 0}}),  // dist 9
      emb(2, ratios, {{1, 0}, {5, 5}}),  // dist 1
      emb(2, ratios, {{1, 0}, {9, 9}}),  // dist 1, tie with #1
      emb(2, ratios, {{0, 0}, {2, 2}}),  // dist 0
  };
  RankedList rl = rank(q, gallery, layout);
  CHECK(rl.gallery_order == std::vector<int>{3, 1, 2, 0});
  CHECK(rl.distances == std::vector<double>{0.0, 1.0, 1.0, 9.0});
  CHECK_THROWS_AS(rank(q, {}, layout), DomainError);
}

TEST_CASE("an exact prefix match ranks first with distance zero") {
  auto ratios = ratios_for_rates({2, 3, 4});
  auto layout = layout_of({2, 2, 2, 2});
  Rng rng(3);
  auto g0 = random_emb(4, layout, ratios, rng);
  auto g1 = random_emb(4, layout, ratios, rng);
  VaryingLengthEmbedding q;
  q.level = ResolutionLevel{2, ratios[1]};
  q.subvectors = {g1.subvectors[0], g1.subvectors[1]};
  RankedList rl = rank(q, {g0, g1}, layout);
  CHECK(rl.gallery_order[0] == 1);
  CHECK(rl.distances[0] == 0.0);
}

TEST_CASE("scaling every embedding leaves the ranking unchanged") {
  auto ratios = ratios_for_rates({2, 3, 4});
  auto layout = layout_of({2, 3, 4, 5});
  Rng rng(4);
  auto q = random_emb(3, layout, ratios, rng);
  std::vector<VaryingLengthEmbedding> gallery;
  for (int g = 0; g < 6; ++g) gallery.push_back(random_emb(4, layout, ratios, rng));
  RankedList before = rank(q, gallery, layout);

  auto scale = [](VaryingLengthEmbedding z, double f) {
    for (auto& sv : z.subvectors)
      for (double& v : sv) v *= f;
    return z;
  };
  auto q2 = scale(q, 3.7);
  std::vector<VaryingLengthEmbedding> gallery2;
  for (const auto& g : gallery) gallery2.push_back(scale(g, 3.7));
  RankedList after = rank(q2, gallery2, layout);
  CHECK(before.gallery_order == after.gallery_order);
}

TEST_CASE("a perfect ranking gives unit match rate and precision") {
  std::vector<RankedList> ranked;
  std::vector<int> qids, gids = {10, 11, 12};
  for (int q = 0; q < 3; ++q) {
    RankedList rl;
    rl.gallery_order = {q, (q + 1) % 3, (q + 2) % 3};
    rl.distances = {0.0, 1.0, 2.0};
    ranked.push_back(rl);
    qids.push_back(10 + q);
  }
  TrialEval ev = cmc_map(ranked, qids, gids);
  CHECK(ev.cmc[0] == 1.0);
  CHECK(ev.mean_ap == 1.0);
}

TEST_CASE("a single query matching at rank three follows the step curve") {
  RankedList rl;
  rl.gallery_order = {0, 1, 2, 3, 4};
  rl.distances = {0, 1, 2, 3, 4};
  std::vector<int> gids = {7, 8, 9, 10, 11};
  TrialEval ev = cmc_map({rl}, {9}, gids);
  CHECK(ev.cmc == std::vector<double>{0.0, 0.0, 1.0, 1.0, 1.0});
  CHECK(ev.mean_ap == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("queries without any gallery match are excluded and counted") {
  RankedList rl;
  rl.gallery_order = {0, 1};
  rl.distances = {0, 1};
  std::vector<int> gids = {5, 6};
  TrialEval ev = cmc_map({rl, rl}, {5, 99}, gids);
  CHECK(ev.evaluated_queries == 1);
  CHECK(ev.skipped_queries == 1);
  CHECK_THROWS_AS(cmc_map({rl}, {99}, gids), DataError);
}

TEST_CASE("random rankings match the uniform baseline on average") {
  const int G = 5;
  Rng rng(5);
  std::vector<int> gids(G);
  for (int g = 0; g < G; ++g) gids[g] = g;
  double hits = 0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    RankedList rl;
    rl.gallery_order.resize(G);
    std::iota(rl.gallery_order.begin(), rl.gallery_order.end(), 0);
    std::shuffle(rl.gallery_order.begin(), rl.gallery_order.end(), rng);
    rl.distances.assign(G, 0.0);
    TrialEval ev = cmc_map({rl}, {3}, gids);
    hits += ev.cmc[0];
  }
  double rate = hits / trials;
  CHECK(rate == doctest::Approx(1.0 / G).epsilon(0.2));
}

TEST_CASE("cmc curves are monotone and the ranking is a permutation") {
  auto s = make_tiny(50);
  auto records = small_fixture();
  EvalOptions opt;
  opt.trials = 3;
  opt.master_seed = 99;
  EvalReport report = evaluate_mlr(s.model, records, opt);
  for (const auto& trial : report.per_trial) {
    for (std::size_t k = 1; k < trial.cmc.size(); ++k) CHECK(trial.cmc[k] >= trial.cmc[k - 1]);
    CHECK(trial.mean_ap >= 0.0);
    CHECK(trial.mean_ap <= 1.0);
  }
}

TEST_CASE("a single-trial evaluation equals one manual trial") {
  auto s = make_tiny(51);
  auto records = small_fixture();
  EvalOptions opt;
  opt.trials = 1;
  opt.master_seed = 1234;

  EvalReport report = evaluate_mlr(s.model, records, opt);

  // Manual replay of trial 0 with the same derived seed.
  std::uint64_t trial_seed = derive_seed(1234, 0xe7a1u);
  TrialSplit split = make_mlr_query_gallery(records, {2, 3, 4}, s.model.known_ratios, trial_seed);
  ResolutionLevel top{s.model.levels(), s.model.known_ratios.back()};
  std::vector<VaryingLengthEmbedding> gallery;
  std::vector<int> gids;
  for (const auto& g : split.gallery) {
    gallery.push_back(s.model.embed(records[g.record_index].pixels, top));
    gids.push_back(g.identity);
  }
  std::vector<RankedList> ranked;
  std::vector<int> qids;
  for (const auto& q : split.queries) {
    auto z = s.model.embed(degrade(records[q.record_index].pixels, q.rate), q.level);
    ranked.push_back(rank(z, gallery, s.model.layout));
    qids.push_back(q.identity);
  }
  TrialEval manual = cmc_map(ranked, qids, gids);
  CHECK(report.per_trial[0].cmc == manual.cmc);
  CHECK(report.per_trial[0].mean_ap == manual.mean_ap);
}

TEST_CASE("evaluation reports are byte-identical under a fixed seed") {
  auto s = make_tiny(52);
  auto records = small_fixture();
  EvalOptions opt;
  opt.trials = 4;
  opt.master_seed = 777;
  std::string a = evaluate_mlr(s.model, records, opt).to_text();
  std::string b = evaluate_mlr(s.model, records, opt).to_text();
  CHECK(a == b);

  opt.master_seed = 778;
  std::string c = evaluate_mlr(s.model, records, opt).to_text();
  CHECK(a != c);
}

TEST_CASE("forced unseen rates are logged with their assignment") {
  auto s = make_tiny(53);  // knows rates 2,3,4
  auto records = small_fixture();
  EvalOptions opt;
  opt.trials = 2;
  opt.master_seed = 5;
  opt.forced_query_rate = 6;
  EvalReport report = evaluate_mlr(s.model, records, opt);
  REQUIRE(report.assignments.size() == 1);
  CHECK(report.assignments[0].rate == 6);
  CHECK(report.assignments[0].assigned_rate == 4);  // nearest trained rate
  CHECK(report.to_text().find("rate-assignment r=6 -> level=1 (rate 4)") != std::string::npos);
}

TEST_CASE("embedding exports round-trip with full precision") {
  auto s = make_tiny(54);
  Rng rng(6);
  auto ratios = s.ratios;
  const auto& layout = s.model.layout;

  std::vector<VaryingLengthEmbedding> embeddings;
  std::vector<EmbeddingExportRecord> records;
  for (int i = 0; i < 6; ++i) {
    int level = 1 + i % 4;
    auto z = random_emb(level, layout, ratios, rng);
    EmbeddingExportRecord rec;
    rec.image_id = "img" + std::to_string(i);
    rec.level = level;
    rec.values = z.concat();
    embeddings.push_back(std::move(z));
    records.push_back(std::move(rec));
  }

  std::stringstream buffer;
  write_embedding_export(buffer, records);
  auto loaded = read_embedding_export(buffer);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].image_id == records[i].image_id);
    CHECK(loaded[i].level == records[i].level);
    // Record lengths vary with the level.
    CHECK(static_cast<int>(loaded[i].values.size()) == layout.prefix_dim(loaded[i].level));
  }

  // Distances recomputed from the file match the in-memory values.
  auto gallery4 = random_emb(4, layout, ratios, rng);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    VaryingLengthEmbedding z;
    z.level = ResolutionLevel{loaded[i].level, ratios[loaded[i].level - 1]};
    std::size_t pos = 0;
    for (int j = 0; j < loaded[i].level; ++j) {
      z.subvectors.emplace_back(loaded[i].values.begin() + pos,
                                loaded[i].values.begin() + pos + layout.dims[j]);
      pos += layout.dims[j];
    }
    double from_file = cross_res_distance(z, gallery4, layout);
    double in_memory = cross_res_distance(embeddings[i], gallery4, layout);
    CHECK(std::fabs(from_file - in_memory) < 1e-6);
  }
}
