#pragma once

// Training objective: symmetric contrastive loss over matched slide/report
// projections with a learned temperature, teacher-forced captioning loss, and
// their weighted sum.

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "slidelm/tensor.hpp"
#include "slidelm/tokenizer.hpp"

namespace slidelm {

// Mean over the batch of the two directional cross-entropies between matched
// pairs, at temperature exp(log_tau). Inputs must be row-normalized.
template <class S>
nn::Tensor<S> contrastive_loss(nn::Tape<S>* tape, const nn::Tensor<S>& v,
                               const nn::Tensor<S>& t, const nn::Tensor<S>& log_tau) {
  if (v.shape() != t.shape() || !v.is_matrix())
    throw std::invalid_argument("contrastive_loss: projection shapes disagree");
  const int64_t N = v.rows(), P = v.cols();
  if (N < 1) throw std::invalid_argument("contrastive_loss: empty batch");
  for (const auto* m : {&v, &t}) {
    for (int64_t i = 0; i < N; ++i) {
      double sq = 0;
      for (int64_t j = 0; j < P; ++j)
        sq += static_cast<double>(m->data()[i * P + j]) *
              static_cast<double>(m->data()[i * P + j]);
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
        throw std::invalid_argument("contrastive_loss: projections not normalized");
    }
  }
  std::vector<int64_t> diag(static_cast<size_t>(N));
  std::iota(diag.begin(), diag.end(), 0);
  auto logits_vt = nn::scale_by_neg_exp(tape, nn::matmul_nt(tape, v, t), log_tau);
  auto logits_tv = nn::scale_by_neg_exp(tape, nn::matmul_nt(tape, t, v), log_tau);
  auto ce_vt = nn::cross_entropy(tape, logits_vt, diag, -1, nn::Reduction::Mean);
  auto ce_tv = nn::cross_entropy(tape, logits_tv, diag, -1, nn::Reduction::Mean);
  return nn::add(tape, ce_vt, ce_tv);
}

// Teacher-forced token NLL; logits row t scores target token t. PAD positions
// are ignored. Sum reduction is the paper form; mean is the desk-scale
// default.
template <class S>
nn::Tensor<S> caption_loss(nn::Tape<S>* tape, const nn::Tensor<S>& logits,
                           const std::vector<int64_t>& targets,
                           nn::Reduction reduction = nn::Reduction::Mean) {
  if (logits.rows() != static_cast<int64_t>(targets.size()))
    throw std::invalid_argument("caption_loss: logits/targets length mismatch");
  return nn::cross_entropy(tape, logits, targets, Vocabulary::kPad, reduction);
}

struct LossWeights {
  double contrastive = 1.0;
  double report = 2.0;
};

template <class S>
nn::Tensor<S> total_loss(nn::Tape<S>* tape, const nn::Tensor<S>& l_con,
                         const nn::Tensor<S>& l_rep, const LossWeights& w) {
  if (w.contrastive < 0 || w.report < 0)
    throw std::invalid_argument("total_loss: negative weight");
  return nn::add_scaled(tape, l_con, static_cast<S>(w.contrastive), l_rep,
                        static_cast<S>(w.report));
}

}  // namespace slidelm
