#ifndef CRAID_RETRIEVAL_HPP_
#define CRAID_RETRIEVAL_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "craid/data.hpp"
#include "craid/model.hpp"

namespace craid {

// Squared Euclidean distance over the shared sub-vector prefix: a level-k
// query is compared against the first k sub-vectors of the full-length
// gallery embedding; gallery dimensions beyond k are ignored.
double cross_res_distance(const VaryingLengthEmbedding& z_p, const VaryingLengthEmbedding& z_g,
                          const EmbeddingLayout& layout);

struct RankedList {
  int query_index = -1;
  std::vector<int> gallery_order;  // gallery indices, ascending distance
  std::vector<double> distances;   // aligned with gallery_order
};

// Sorts the gallery by the query-level distance; equal distances keep
// ascending gallery-index order.
RankedList rank(const VaryingLengthEmbedding& query,
                const std::vector<VaryingLengthEmbedding>& gallery,
                const EmbeddingLayout& layout);

struct TrialEval {
  std::vector<double> cmc;  // cmc[k] = fraction matched within rank k+1
  double mean_ap = 0.0;
  int evaluated_queries = 0;
  int skipped_queries = 0;  // queries without any gallery match
};

// CMC and (uninterpolated) mean average precision over one trial.
TrialEval cmc_map(const std::vector<RankedList>& ranked_lists,
                  const std::vector<int>& query_identities,
                  const std::vector<int>& gallery_identities);

struct EvalOptions {
  int trials = 10;
  std::uint64_t master_seed = 0;
  std::vector<int> rates = {2, 3, 4};
  // Unseen-resolution mode: every query uses this rate; its level comes from
  // the nearest-rate assignment against the model's known ratios.
  std::optional<int> forced_query_rate;
  std::vector<int> report_ranks = {1, 5, 10};
  bool normalize_embeddings = false;  // L2-normalize each embedding first
};

struct RateAssignment {
  int rate = 0;
  int assigned_level = 0;
  int assigned_rate = 0;  // down-rate of the assigned level
};

struct EvalReport {
  int trials = 0;
  std::vector<int> report_ranks;
  std::vector<TrialEval> per_trial;
  std::vector<double> mean_cmc;  // averaged full curve
  double mean_map = 0.0;
  double std_map = 0.0;
  std::vector<RateAssignment> assignments;  // distinct query rates seen

  double mean_cmc_at(int rank) const;  // 1-based rank
  double std_cmc_at(int rank) const;
  std::string to_text() const;
};

EvalReport evaluate_mlr(const Model& model, const std::vector<IdentityImageRecord>& test_records,
                        const EvalOptions& options);

// ---------------------------------------------------------------------------
// Columnar embedding export: tab-separated "id<TAB>level<TAB>v1..vk" rows,
// one per image, preceded by '#' header lines. Doubles are printed with 17
// significant digits so a reload reproduces them exactly.
struct EmbeddingExportRecord {
  std::string image_id;
  int level = 0;
  std::vector<double> values;
};

void write_embedding_export(std::ostream& out, const std::vector<EmbeddingExportRecord>& records);
std::vector<EmbeddingExportRecord> read_embedding_export(std::istream& in);

}  // namespace craid

#endif  // CRAID_RETRIEVAL_HPP_
