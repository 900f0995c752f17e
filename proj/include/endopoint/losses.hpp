#pragma once

#include <cstdint>
#include <vector>

#include "endopoint/autodiff.hpp"
#include "endopoint/selfsup.hpp"

namespace endopoint {

struct LossConfig {
  double lambda = 1e-4;     // descriptor loss weight
  double lambda_s = 100.0;  // specularity loss weight
  double epsilon = 1e-10;   // specularity denominator guard
  double margin_pos = 1.0;
  double margin_neg = 0.2;
  double lambda_d = 250.0;  // positive-pair weight inside the descriptor loss
  /// Fraction of negative cell pairs kept by the descriptor loss; 1 is the
  /// dense loss. Kept pairs are chosen by hashing (seed, source, target).
  double negative_ratio = 1.0;
  std::uint64_t negative_seed = 0;

  void validate() const;
};

/// Per-cell target channel: the in-cell index (row-major, 0..63) of the
/// highest-scoring label in the cell, or 64 (dustbin) for empty cells.
/// Equal scores go to the first point in row-major order.
std::vector<int> detection_targets(const PseudoLabel& label,
                                   std::size_t cells_high,
                                   std::size_t cells_wide);

/// Mean 65-way cross-entropy of the detection logits against the label.
Var detection_loss(Var detect, const PseudoLabel& label);
double detection_loss(const Tensor& detect, const PseudoLabel& label);

/// Hinge loss over every pair of cells (p in A, q in B):
///   s * lambda_d * max(0, m_p - a_p.b_q) + (1 - s) * max(0, a_p.b_q - m_n)
/// averaged over the pairs. Descriptors are used as given.
Var descriptor_loss(Var desc_a, Var desc_b, const CorrespondenceTensor& s,
                    const LossConfig& config);
double descriptor_loss(const Tensor& desc_a, const Tensor& desc_b,
                       const CorrespondenceTensor& s, const LossConfig& config);

/// Mean keypoint probability over pixels brighter than 0.7:
///   sum(m(I) * heatmap) / (eps + sum(m(I))).
Var specularity_loss(Var detect, const Tensor& image, double epsilon);
double specularity_loss(const Tensor& detect, const Tensor& image,
                        double epsilon);

struct ViewOutputs {
  Var detect;    // raw detection logits
  Var describe;  // raw (unnormalised) cell descriptors
};

struct LossTerms {
  Var total;
  double detection_a = 0, detection_b = 0;
  double descriptor = 0;
  double specular_a = 0, specular_b = 0;
};

/// Lp(X, Y) + Lp(X', Y') + lambda * Ld(D, D', S), with cell descriptors
/// L2-normalised before the descriptor term.
LossTerms loss_sp(const ViewOutputs& a, const ViewOutputs& b,
                  const PseudoLabel& label_a, const PseudoLabel& label_b,
                  const CorrespondenceTensor& s, const LossConfig& config);

/// loss_sp plus lambda_s * Ls for each view. With lambda_s = 0 the result is
/// loss_sp itself.
LossTerms loss_esp(const Tensor& image_a, const Tensor& image_b,
                   const ViewOutputs& a, const ViewOutputs& b,
                   const PseudoLabel& label_a, const PseudoLabel& label_b,
                   const CorrespondenceTensor& s, const LossConfig& config);

}  // namespace endopoint
