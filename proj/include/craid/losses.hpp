#ifndef CRAID_LOSSES_HPP_
#define CRAID_LOSSES_HPP_

#include <vector>

#include "craid/layers.hpp"
#include "craid/types.hpp"

namespace craid {

// Identity prototypes, one d-dimensional column per identity. W partitions
// row-wise into per-level blocks W_1..W_m aligned with the embedding layout,
// so a zero-padded level-k sample interacts only with the first k blocks.
// Bias-free, which keeps that factorization exact.
struct PrototypeClassifier {
  EmbeddingLayout layout;
  int d = 0;
  int C = 0;
  Param W;  // row-major [d][C]

  static PrototypeClassifier build(const EmbeddingLayout& layout, int identities, Rng& rng);
  void collect(std::vector<Param*>& out) { out.push_back(&W); }
};

// Same-identity predictor on the difference of two padded embeddings:
// p = sigmoid(w2 · tanh(w1 x + b1) + b2).
struct VerificationHead {
  int d = 0;
  int hidden = 0;
  Linear fc1;  // d -> hidden
  Linear fc2;  // hidden -> 1

  static VerificationHead build(int d, Rng& rng);
  double logit(const std::vector<double>& diff) const;
  void collect(std::vector<Param*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

struct LossWeights {
  double lambda = 0.5;
};

std::vector<double> id_logits(const std::vector<double>& z_padded,
                              const PrototypeClassifier& classifier);

// Softmax cross-entropy against the identity label.
double id_loss(const std::vector<double>& logits, int label);

// Forward + backward in one pass: accumulates scale * dL/dW into the
// classifier gradient and scale * dL/dz into grad_z_padded. Positions beyond
// occupied_dim receive no contribution: the padded entries are constants,
// not sample dimensions, so no gradient flows through them.
double id_loss_backward(const std::vector<double>& z_padded, int label,
                        PrototypeClassifier& classifier, int occupied_dim,
                        std::vector<double>& grad_z_padded, double scale);

// p(same | v_i, v_j) = sigmoid(f(v_i - v_j)). The difference is
// antisymmetric, so p(i,j) and p(j,i) are generally unrelated; in particular
// their sum is not 1.
double verification_probability(const std::vector<double>& v_i, const std::vector<double>& v_j,
                                const VerificationHead& head);

struct VerificationPair {
  std::vector<double> v_i;
  std::vector<double> v_j;
  int label = 0;  // 1 = same identity
};

struct VerificationLossValue {
  double sum = 0.0;
  double mean = 0.0;
  std::size_t pairs = 0;
};

VerificationLossValue verification_loss(const std::vector<VerificationPair>& pairs,
                                        const VerificationHead& head);

// Single-pair forward + backward; adds scale * gradients into the head params
// and into the two embedding gradients. Returns the pair's loss term.
double verification_pair_backward(const std::vector<double>& v_i, const std::vector<double>& v_j,
                                  int label, VerificationHead& head, std::vector<double>& grad_vi,
                                  std::vector<double>& grad_vj, double scale);

// cls + lambda * verif; refuses non-finite inputs.
double total_loss(double cls, double verif, const LossWeights& weights);

}  // namespace craid

#endif  // CRAID_LOSSES_HPP_
