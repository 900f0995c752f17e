#include "endopoint/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "endopoint/ops.hpp"
#include "endopoint/rng.hpp"

namespace endopoint {

void LossConfig::validate() const {
  if (!(lambda_s >= 0.0)) throw std::invalid_argument("lambda_s must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(negative_ratio > 0.0 && negative_ratio <= 1.0)) {
    throw std::invalid_argument("negative_ratio must be in (0, 1]");
  }
}

std::vector<int> detection_targets(const PseudoLabel& label,
                                   std::size_t cells_high,
                                   std::size_t cells_wide) {
  constexpr int kDustbin = static_cast<int>(ops::kCellChannels);
  std::vector<int> target(cells_high * cells_wide, kDustbin);
  std::vector<double> best(target.size(), -1.0);
  std::vector<int> best_pos(target.size(), 0);
  for (const ScoredPoint& p : label.points) {
    const std::size_t i = p.y / ops::kCell, j = p.x / ops::kCell;
    if (i >= cells_high || j >= cells_wide) continue;
    const int in_cell =
        static_cast<int>((p.y % ops::kCell) * ops::kCell + p.x % ops::kCell);
    const std::size_t cell = i * cells_wide + j;
    if (p.score > best[cell] ||
        (p.score == best[cell] && in_cell < best_pos[cell])) {
      best[cell] = p.score;
      best_pos[cell] = in_cell;
      target[cell] = in_cell;
    }
  }
  return target;
}

Var detection_loss(Var detect, const PseudoLabel& label) {
  const Tensor& x = detect.value();
  require_rank(x, 3, "detection_loss");
  if (x.dim(2) != ops::kDetectChannels ||
      label.height != x.dim(0) * ops::kCell ||
      label.width != x.dim(1) * ops::kCell) {
    throw ShapeError("detection_loss: logits " + shape_string(x.shape()) +
                     " do not match label " + std::to_string(label.height) +
                     "x" + std::to_string(label.width));
  }
  const std::vector<int> target = detection_targets(label, x.dim(0), x.dim(1));
  const std::size_t c = ops::kDetectChannels;
  const double cells = static_cast<double>(target.size());
  double total = 0.0;
  for (std::size_t p = 0; p < target.size(); ++p) {
    const double* z = &x[p * c];
    const double peak = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(z[k] - peak);
    total += peak + std::log(se) - z[target[p]];
  }
  Tape& tape = detect.tape();
  return tape.record(
      Tensor::scalar(total / cells), {detect},
      [=, &tape](const Tensor& g, const Tensor&) {
        const Tensor probs = ops::softmd(detect.value());
        Tensor& gx = tape.grad_buffer(detect);
        const double w = g[0] / cells;
        for (std::size_t p = 0; p < target.size(); ++p) {
          for (std::size_t k = 0; k < c; ++k) {
            const double onehot = static_cast<int>(k) == target[p] ? 1.0 : 0.0;
            gx[p * c + k] += w * (probs[p * c + k] - onehot);
          }
        }
      });
}

double detection_loss(const Tensor& detect, const PseudoLabel& label) {
  Tape tape;
  return detection_loss(tape.constant(detect), label).value().item();
}

namespace {

bool keep_negative(const LossConfig& config, std::size_t p, std::size_t q) {
  if (config.negative_ratio >= 1.0) return true;
  return unit_double(counter_hash(config.negative_seed, p, q)) <
         config.negative_ratio;
}

}  // namespace

Var descriptor_loss(Var desc_a, Var desc_b, const CorrespondenceTensor& s,
                    const LossConfig& config) {
  const Tensor& a = desc_a.value();
  const Tensor& b = desc_b.value();
  require_rank(a, 3, "descriptor_loss");
  if (a.shape() != b.shape() || a.dim(0) != s.cells_high() ||
      a.dim(1) != s.cells_wide()) {
    throw ShapeError("descriptor_loss: descriptor grids " +
                     shape_string(a.shape()) + " / " +
                     shape_string(b.shape()) + " do not match correspondences");
  }
  const std::size_t n = s.cell_count(), d = a.dim(2);
  // Per pair: +1 positive hinge active, -1 negative hinge active, 0 inactive.
  std::vector<signed char> active(n * n, 0);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double* ap = &a[p * d];
    const long match = s.target(p);
    for (std::size_t q = 0; q < n; ++q) {
      const bool positive = match == static_cast<long>(q);
      if (!positive && !keep_negative(config, p, q)) continue;
      ++pairs;
      const double* bq = &b[q * d];
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ap[k] * bq[k];
      if (positive) {
        const double h = config.margin_pos - dot;
        if (h > 0.0) {
          total += config.lambda_d * h;
          active[p * n + q] = 1;
        }
      } else {
        const double h = dot - config.margin_neg;
        if (h > 0.0) {
          total += h;
          active[p * n + q] = -1;
        }
      }
    }
  }
  const double count = static_cast<double>(std::max<std::size_t>(pairs, 1));
  Tape& tape = desc_a.tape();
  const double lambda_d = config.lambda_d;
  return tape.record(
      Tensor::scalar(total / count), {desc_a, desc_b},
      [=, &tape](const Tensor& g, const Tensor&) {
        const Tensor& a = desc_a.value();
        const Tensor& b = desc_b.value();
        Tensor ga(a.shape()), gb(b.shape());
        for (std::size_t p = 0; p < n; ++p) {
          for (std::size_t q = 0; q < n; ++q) {
            const signed char act = active[p * n + q];
            if (act == 0) continue;
            // d(dot)/da_p = b_q, d(dot)/db_q = a_p.
            const double w = (act > 0 ? -lambda_d : 1.0) * g[0] / count;
            for (std::size_t k = 0; k < d; ++k) {
              ga[p * d + k] += w * b[q * d + k];
              gb[q * d + k] += w * a[p * d + k];
            }
          }
        }
        if (desc_a.requires_grad()) {
          Tensor& dst = tape.grad_buffer(desc_a);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += ga[i];
        }
        if (desc_b.requires_grad()) {
          Tensor& dst = tape.grad_buffer(desc_b);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gb[i];
        }
      });
}

double descriptor_loss(const Tensor& desc_a, const Tensor& desc_b,
                       const CorrespondenceTensor& s,
                       const LossConfig& config) {
  Tape tape;
  return descriptor_loss(tape.constant(desc_a), tape.constant(desc_b), s,
                         config)
      .value()
      .item();
}

Var specularity_loss(Var detect, const Tensor& image, double epsilon) {
  Var heat = ops::d2s(ops::drop_dustbin(ops::softmd(detect)));
  if (heat.value().shape() != image.shape()) {
    throw ShapeError("specularity_loss: image " + shape_string(image.shape()) +
                     " does not match heatmap " +
                     shape_string(heat.value().shape()));
  }
  const Tensor mask = specularity_mask(image);
  const double denom = epsilon + mask.sum();
  double num = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    num += mask[i] * heat.value()[i];
  }
  Tape& tape = detect.tape();
  return tape.record(Tensor::scalar(num / denom), {heat},
                     [=, &tape](const Tensor& g, const Tensor&) {
                       Tensor& gh = tape.grad_buffer(heat);
                       for (std::size_t i = 0; i < mask.size(); ++i) {
                         gh[i] += g[0] * mask[i] / denom;
                       }
                     });
}

double specularity_loss(const Tensor& detect, const Tensor& image,
                        double epsilon) {
  Tape tape;
  return specularity_loss(tape.constant(detect), image, epsilon).value().item();
}

LossTerms loss_sp(const ViewOutputs& a, const ViewOutputs& b,
                  const PseudoLabel& label_a, const PseudoLabel& label_b,
                  const CorrespondenceTensor& s, const LossConfig& config) {
  LossTerms terms;
  Var la = detection_loss(a.detect, label_a);
  Var lb = detection_loss(b.detect, label_b);
  Var ld = descriptor_loss(ops::l2_normalize(a.describe),
                           ops::l2_normalize(b.describe), s, config);
  terms.detection_a = la.value().item();
  terms.detection_b = lb.value().item();
  terms.descriptor = ld.value().item();
  terms.total = ops::add(ops::add(la, lb), ops::scale(ld, config.lambda));
  return terms;
}

LossTerms loss_esp(const Tensor& image_a, const Tensor& image_b,
                   const ViewOutputs& a, const ViewOutputs& b,
                   const PseudoLabel& label_a, const PseudoLabel& label_b,
                   const CorrespondenceTensor& s, const LossConfig& config) {
  config.validate();
  LossTerms terms = loss_sp(a, b, label_a, label_b, s, config);
  if (config.lambda_s == 0.0) {
    // Reported for monitoring only; the total stays exactly loss_sp.
    terms.specular_a =
        specularity_loss(a.detect.value(), image_a, config.epsilon);
    terms.specular_b =
        specularity_loss(b.detect.value(), image_b, config.epsilon);
    return terms;
  }
  Var sa = specularity_loss(a.detect, image_a, config.epsilon);
  Var sb = specularity_loss(b.detect, image_b, config.epsilon);
  terms.specular_a = sa.value().item();
  terms.specular_b = sb.value().item();
  terms.total =
      ops::add(ops::add(terms.total, ops::scale(sa, config.lambda_s)),
               ops::scale(sb, config.lambda_s));
  return terms;
}

}  // namespace endopoint
