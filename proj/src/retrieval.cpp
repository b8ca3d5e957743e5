#include "craid/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace craid {

double cross_res_distance(const VaryingLengthEmbedding& z_p, const VaryingLengthEmbedding& z_g,
                          const EmbeddingLayout& layout) {
  z_p.validate(layout);
  z_g.validate(layout);
  if (z_g.level.level_index != layout.levels())
    throw ShapeError("cross_res_distance: gallery embedding must be full length");
  int k = z_p.level.level_index;
  double acc = 0.0;
  for (int j = 0; j < k; ++j) {
    const auto& a = z_p.subvectors[j];
    const auto& b = z_g.subvectors[j];
    for (std::size_t i = 0; i < a.size(); ++i) {
      double diff = a[i] - b[i];
      acc += diff * diff;
    }
  }
  return acc;
}

RankedList rank(const VaryingLengthEmbedding& query,
                const std::vector<VaryingLengthEmbedding>& gallery,
                const EmbeddingLayout& layout) {
  if (gallery.empty()) throw DomainError("rank: empty gallery");
  RankedList out;
  out.gallery_order.resize(gallery.size());
  std::iota(out.gallery_order.begin(), out.gallery_order.end(), 0);
  std::vector<double> dist(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g)
    dist[g] = cross_res_distance(query, gallery[g], layout);
  std::stable_sort(out.gallery_order.begin(), out.gallery_order.end(),
                   [&](int a, int b) { return dist[a] < dist[b]; });
  out.distances.reserve(gallery.size());
  for (int g : out.gallery_order) out.distances.push_back(dist[g]);
  return out;
}

TrialEval cmc_map(const std::vector<RankedList>& ranked_lists,
                  const std::vector<int>& query_identities,
                  const std::vector<int>& gallery_identities) {
  if (ranked_lists.size() != query_identities.size())
    throw ShapeError("cmc_map: one identity per ranked list required");
  std::size_t gallery_size = gallery_identities.size();
  TrialEval out;
  out.cmc.assign(gallery_size, 0.0);

  for (std::size_t q = 0; q < ranked_lists.size(); ++q) {
    const RankedList& rl = ranked_lists[q];
    if (rl.gallery_order.size() != gallery_size)
      throw ShapeError("cmc_map: ranked list length does not match the gallery");
    int qid = query_identities[q];
    int first_match = -1;
    int num_rel = 0;
    double ap = 0.0;
    for (std::size_t pos = 0; pos < gallery_size; ++pos) {
      if (gallery_identities[rl.gallery_order[pos]] == qid) {
        ++num_rel;
        ap += static_cast<double>(num_rel) / static_cast<double>(pos + 1);
        if (first_match < 0) first_match = static_cast<int>(pos);
      }
    }
    if (num_rel == 0) {
      ++out.skipped_queries;
      continue;
    }
    ++out.evaluated_queries;
    out.mean_ap += ap / num_rel;
    for (std::size_t k = static_cast<std::size_t>(first_match); k < gallery_size; ++k)
      out.cmc[k] += 1.0;
  }
  if (out.evaluated_queries == 0) throw DataError("cmc_map: no query has a gallery match");
  for (double& v : out.cmc) v /= out.evaluated_queries;
  out.mean_ap /= out.evaluated_queries;
  return out;
}

namespace {

void normalize_embedding(VaryingLengthEmbedding& z) {
  double sq = 0.0;
  for (const auto& sv : z.subvectors)
    for (double v : sv) sq += v * v;
  if (sq <= 0.0) return;
  double inv = 1.0 / std::sqrt(sq);
  for (auto& sv : z.subvectors)
    for (double& v : sv) v *= inv;
}

}  // namespace

EvalReport evaluate_mlr(const Model& model, const std::vector<IdentityImageRecord>& test_records,
                        const EvalOptions& options) {
  if (options.trials < 1) throw DomainError("evaluate_mlr: trials must be >= 1");
  if (test_records.empty()) throw DataError("evaluate_mlr: empty test set");
  std::vector<int> query_rates =
      options.forced_query_rate ? std::vector<int>{*options.forced_query_rate} : options.rates;
  if (query_rates.empty()) throw DomainError("evaluate_mlr: no query rates");

  EvalReport report;
  report.trials = options.trials;
  report.report_ranks = options.report_ranks;

  int top = model.levels();
  ResolutionLevel top_level{top, model.known_ratios[top - 1]};
  std::map<int, RateAssignment> assignment_log;

  for (int t = 0; t < options.trials; ++t) {
    std::uint64_t trial_seed = derive_seed(options.master_seed, 0xe7a1u + t);
    TrialSplit split =
        make_mlr_query_gallery(test_records, query_rates, model.known_ratios, trial_seed);

    // Gallery embeddings are computed once per trial and reused by every
    // query of the trial.
    std::vector<VaryingLengthEmbedding> gallery_emb;
    std::vector<int> gallery_ids;
    for (const auto& g : split.gallery) {
      gallery_emb.push_back(model.embed(test_records[g.record_index].pixels, top_level));
      if (options.normalize_embeddings) normalize_embedding(gallery_emb.back());
      gallery_ids.push_back(g.identity);
    }

    std::vector<RankedList> ranked;
    std::vector<int> query_ids;
    for (const auto& q : split.queries) {
      Tensor degraded = degrade(test_records[q.record_index].pixels, q.rate);
      VaryingLengthEmbedding z = model.embed(degraded, q.level);
      if (options.normalize_embeddings) normalize_embedding(z);
      RankedList rl = rank(z, gallery_emb, model.layout);
      rl.query_index = q.record_index;
      ranked.push_back(std::move(rl));
      query_ids.push_back(q.identity);
      if (!assignment_log.count(q.rate)) {
        RateAssignment a;
        a.rate = q.rate;
        a.assigned_level = q.level.level_index;
        a.assigned_rate = static_cast<int>(q.level.ratio.inverse().value());
        assignment_log[q.rate] = a;
      }
    }
    report.per_trial.push_back(cmc_map(ranked, query_ids, gallery_ids));
  }

  for (const auto& [rate, a] : assignment_log) report.assignments.push_back(a);

  std::size_t curve_len = report.per_trial.front().cmc.size();
  for (const auto& tr : report.per_trial)
    curve_len = std::min(curve_len, tr.cmc.size());
  report.mean_cmc.assign(curve_len, 0.0);
  double map_sum = 0.0, map_sq = 0.0;
  for (const auto& tr : report.per_trial) {
    for (std::size_t k = 0; k < curve_len; ++k) report.mean_cmc[k] += tr.cmc[k];
    map_sum += tr.mean_ap;
    map_sq += tr.mean_ap * tr.mean_ap;
  }
  for (double& v : report.mean_cmc) v /= report.trials;
  report.mean_map = map_sum / report.trials;
  double var = map_sq / report.trials - report.mean_map * report.mean_map;
  report.std_map = std::sqrt(var > 0.0 ? var : 0.0);
  return report;
}

double EvalReport::mean_cmc_at(int rank) const {
  if (rank < 1) throw DomainError("EvalReport: rank must be >= 1");
  std::size_t idx = std::min<std::size_t>(rank - 1, mean_cmc.size() - 1);
  return mean_cmc[idx];
}

double EvalReport::std_cmc_at(int rank) const {
  if (rank < 1) throw DomainError("EvalReport: rank must be >= 1");
  double mean = mean_cmc_at(rank);
  double sq = 0.0;
  for (const auto& tr : per_trial) {
    std::size_t idx = std::min<std::size_t>(rank - 1, tr.cmc.size() - 1);
    double d = tr.cmc[idx] - mean;
    sq += d * d;
  }
  return std::sqrt(sq / per_trial.size());
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  char buf[160];
  out << "# craid evaluation report\n";
  out << "trials " << trials << "\n";
  for (const auto& a : assignments) {
    std::snprintf(buf, sizeof(buf), "rate-assignment r=%d -> level=%d (rate %d)\n", a.rate,
                  a.assigned_level, a.assigned_rate);
    out << buf;
  }
  for (int r : report_ranks) {
    std::snprintf(buf, sizeof(buf), "rank-%d mean %.6f std %.6f\n", r, mean_cmc_at(r),
                  std_cmc_at(r));
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "mAP mean %.6f std %.6f\n", mean_map, std_map);
  out << buf;
  for (std::size_t t = 0; t < per_trial.size(); ++t) {
    const TrialEval& tr = per_trial[t];
    out << "trial " << (t + 1) << ":";
    for (int r : report_ranks) {
      std::size_t idx = std::min<std::size_t>(r - 1, tr.cmc.size() - 1);
      std::snprintf(buf, sizeof(buf), " rank-%d %.6f", r, tr.cmc[idx]);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), " mAP %.6f queries %d skipped %d\n", tr.mean_ap,
                  tr.evaluated_queries, tr.skipped_queries);
    out << buf;
  }
  return out.str();
}

void write_embedding_export(std::ostream& out,
                            const std::vector<EmbeddingExportRecord>& records) {
  out << "# craid embeddings v1\n";
  out << "# columns: image_id level v1..vk (tab-separated)\n";
  char buf[32];
  for (const auto& rec : records) {
    out << rec.image_id << "\t" << rec.level;
    for (double v : rec.values) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

std::vector<EmbeddingExportRecord> read_embedding_export(std::istream& in) {
  std::vector<EmbeddingExportRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    EmbeddingExportRecord rec;
    if (!(ls >> rec.image_id >> rec.level))
      throw DataError("embedding export: malformed row '" + line + "'");
    double v;
    while (ls >> v) rec.values.push_back(v);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace craid
