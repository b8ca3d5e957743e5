#include "craid/losses.hpp"

#include <algorithm>
#include <cmath>

namespace craid {

PrototypeClassifier PrototypeClassifier::build(const EmbeddingLayout& layout, int identities,
                                               Rng& rng) {
  layout.validate();
  if (identities < 1) throw DomainError("PrototypeClassifier: need at least one identity");
  PrototypeClassifier cls;
  cls.layout = layout;
  cls.d = layout.total_dim();
  cls.C = identities;
  cls.W.name = "classifier.W";
  cls.W.resize(static_cast<std::size_t>(cls.d) * cls.C);
  gaussian_init(cls.W, 1.0 / std::sqrt(static_cast<double>(cls.d)), rng);
  return cls;
}

VerificationHead VerificationHead::build(int d, Rng& rng) {
  if (d < 1) throw DomainError("VerificationHead: embedding dimension must be positive");
  VerificationHead head;
  head.d = d;
  head.hidden = std::max(1, d / 4);
  head.fc1.configure("verif.fc1", d, head.hidden);
  head.fc2.configure("verif.fc2", head.hidden, 1);
  head.fc1.init(rng);
  head.fc2.init(rng);
  return head;
}

double VerificationHead::logit(const std::vector<double>& diff) const {
  if (static_cast<int>(diff.size()) != d)
    throw ShapeError("VerificationHead: input length mismatch");
  std::vector<double> h = fc1.forward(diff);
  for (double& x : h) x = std::tanh(x);
  return fc2.forward(h)[0];
}

std::vector<double> id_logits(const std::vector<double>& z_padded,
                              const PrototypeClassifier& classifier) {
  if (static_cast<int>(z_padded.size()) != classifier.d)
    throw ShapeError("id_logits: embedding length does not match the classifier");
  std::vector<double> logits(classifier.C, 0.0);
  const double* W = classifier.W.value.data();
  for (int dim = 0; dim < classifier.d; ++dim) {
    double z = z_padded[dim];
    if (z == 0.0) continue;
    const double* row = W + static_cast<std::size_t>(dim) * classifier.C;
    for (int c = 0; c < classifier.C; ++c) logits[c] += z * row[c];
  }
  return logits;
}

namespace {

// Stable softmax probabilities and the cross-entropy value.
double softmax_ce(const std::vector<double>& logits, int label, std::vector<double>& prob) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  prob.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    prob[i] = std::exp(logits[i] - mx);
    sum += prob[i];
  }
  for (double& p : prob) p /= sum;
  return std::log(sum) + mx - logits[label];
}

}  // namespace

double id_loss(const std::vector<double>& logits, int label) {
  if (logits.empty()) throw DomainError("id_loss: empty logits");
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw DomainError("id_loss: label out of range");
  std::vector<double> prob;
  return softmax_ce(logits, label, prob);
}

double id_loss_backward(const std::vector<double>& z_padded, int label,
                        PrototypeClassifier& classifier, int occupied_dim,
                        std::vector<double>& grad_z_padded, double scale) {
  if (label < 0 || label >= classifier.C) throw DomainError("id_loss: label out of range");
  if (occupied_dim < 0 || occupied_dim > classifier.d)
    throw ShapeError("id_loss: occupied prefix out of range");
  std::vector<double> logits = id_logits(z_padded, classifier);
  std::vector<double> prob;
  double loss = softmax_ce(logits, label, prob);

  // dL/dlogit_c = p_c - [c == label]
  prob[label] -= 1.0;
  if (grad_z_padded.size() != static_cast<std::size_t>(classifier.d))
    grad_z_padded.assign(classifier.d, 0.0);
  const double* W = classifier.W.value.data();
  double* gW = classifier.W.grad.data();
  for (int dim = 0; dim < classifier.d; ++dim) {
    double z = z_padded[dim];
    const double* row = W + static_cast<std::size_t>(dim) * classifier.C;
    double* grow = gW + static_cast<std::size_t>(dim) * classifier.C;
    double gz = 0.0;
    for (int c = 0; c < classifier.C; ++c) {
      grow[c] += scale * z * prob[c];
      gz += row[c] * prob[c];
    }
    if (dim < occupied_dim) grad_z_padded[dim] += scale * gz;
  }
  return loss;
}

double verification_probability(const std::vector<double>& v_i, const std::vector<double>& v_j,
                                const VerificationHead& head) {
  if (v_i.size() != v_j.size()) throw ShapeError("verification_probability: length mismatch");
  std::vector<double> diff(v_i.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = v_i[i] - v_j[i];
  return sigmoid(head.logit(diff));
}

VerificationLossValue verification_loss(const std::vector<VerificationPair>& pairs,
                                        const VerificationHead& head) {
  if (pairs.empty()) throw DomainError("verification_loss: empty pair list");
  VerificationLossValue out;
  for (const auto& pr : pairs) {
    if (pr.v_i.size() != pr.v_j.size())
      throw ShapeError("verification_loss: pair length mismatch");
    std::vector<double> diff(pr.v_i.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = pr.v_i[i] - pr.v_j[i];
    double t = head.logit(diff);
    // -y log p - (1-y) log(1-p) computed from the logit for stability.
    out.sum += softplus(t) - (pr.label ? t : 0.0);
  }
  out.pairs = pairs.size();
  out.mean = out.sum / static_cast<double>(out.pairs);
  return out;
}

double verification_pair_backward(const std::vector<double>& v_i, const std::vector<double>& v_j,
                                  int label, VerificationHead& head, std::vector<double>& grad_vi,
                                  std::vector<double>& grad_vj, double scale) {
  if (v_i.size() != v_j.size() || grad_vi.size() != v_i.size() || grad_vj.size() != v_i.size())
    throw ShapeError("verification_pair_backward: length mismatch");
  std::vector<double> diff(v_i.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = v_i[i] - v_j[i];

  std::vector<double> pre = head.fc1.forward(diff);
  std::vector<double> act(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = std::tanh(pre[i]);
  double t = head.fc2.forward(act)[0];
  double loss = softplus(t) - (label ? t : 0.0);

  double gt = sigmoid(t) - static_cast<double>(label);
  std::vector<double> g_act = head.fc2.backward(act, {scale * gt});
  for (std::size_t i = 0; i < g_act.size(); ++i) g_act[i] *= 1.0 - act[i] * act[i];
  std::vector<double> g_diff = head.fc1.backward(diff, g_act);
  for (std::size_t i = 0; i < g_diff.size(); ++i) {
    grad_vi[i] += g_diff[i];
    grad_vj[i] -= g_diff[i];
  }
  return loss;
}

double total_loss(double cls, double verif, const LossWeights& weights) {
  if (weights.lambda < 0.0) throw DomainError("total_loss: lambda must be >= 0");
  if (!std::isfinite(cls) || !std::isfinite(verif))
    throw NumericError("total_loss: non-finite loss input (cls=" + std::to_string(cls) +
                       ", verif=" + std::to_string(verif) + ")");
  return cls + weights.lambda * verif;
}

}  // namespace craid
