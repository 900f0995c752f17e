#include "endopoint/train.hpp"

#include <cmath>
#include <sstream>

#include "endopoint/file_util.hpp"
#include "endopoint/rng.hpp"

namespace endopoint {

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("learning rate must be >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

namespace {

std::vector<const Tensor*> param_tensors(const NetworkParams& p) {
  std::vector<const Tensor*> out;
  for (const ConvLayer& l : p.layers) {
    out.push_back(&l.kernel);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Tensor*> param_tensors(NetworkParams& p) {
  std::vector<Tensor*> out;
  for (ConvLayer& l : p.layers) {
    out.push_back(&l.kernel);
    out.push_back(&l.bias);
  }
  return out;
}

struct SampleEval {
  LossTerms terms;
  ParamVars vars;
};

SampleEval evaluate_sample(Tape& tape, const NetworkParams& params,
                           const TrainingSample& sample, const Homography& h,
                           const LossConfig& loss) {
  const Tensor& image = sample.image;
  const std::size_t rows = image.dim(0), cols = image.dim(1);
  const Tensor warped = warp_image(image, h);
  const PseudoLabel warped_label = warp_label(sample.label, h);
  const CorrespondenceTensor s = correspondence_tensor(h, rows, cols);

  SampleEval eval;
  eval.vars = bind_params(tape, params);
  const HeadVars a = forward(params, eval.vars,
                             tape.constant(image.reshaped({rows, cols, 1})));
  const HeadVars b = forward(params, eval.vars,
                             tape.constant(warped.reshaped({rows, cols, 1})));
  eval.terms = loss_esp(image, warped, {a.detect, a.describe},
                        {b.detect, b.describe}, sample.label, warped_label, s,
                        loss);
  return eval;
}

void accumulate(LossRecord& rec, const LossTerms& t, double weight) {
  rec.total += weight * t.total.value().item();
  rec.detection += weight * (t.detection_a + t.detection_b);
  rec.descriptor += weight * t.descriptor;
  rec.specularity += weight * (t.specular_a + t.specular_b);
}

}  // namespace

BatchGradient batch_gradient(const NetworkParams& params,
                             std::span<const TrainingSample> batch,
                             std::span<const Homography> warps,
                             const LossConfig& loss) {
  BatchGradient out;
  for (const Tensor* t : param_tensors(params)) out.grads.emplace_back(t->shape());
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape tape;
    SampleEval eval = evaluate_sample(tape, params, batch[b], warps[b], loss);
    accumulate(out.loss, eval.terms, weight);
    tape.backward(eval.terms.total);
    for (std::size_t l = 0; l < eval.vars.kernels.size(); ++l) {
      const Tensor& gk = eval.vars.kernels[l].grad();
      const Tensor& gb = eval.vars.biases[l].grad();
      Tensor& dk = out.grads[2 * l];
      Tensor& db = out.grads[2 * l + 1];
      for (std::size_t i = 0; i < gk.size(); ++i) dk[i] += weight * gk[i];
      for (std::size_t i = 0; i < gb.size(); ++i) db[i] += weight * gb[i];
    }
  }
  return out;
}

double batch_loss(const NetworkParams& params,
                  std::span<const TrainingSample> batch,
                  std::span<const Homography> warps, const LossConfig& loss) {
  LossRecord rec;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape tape;
    accumulate(rec, evaluate_sample(tape, params, batch[b], warps[b], loss).terms,
               weight);
  }
  return rec.total;
}

TrainResult finetune(NetworkParams initial,
                     std::span<const TrainingSample> dataset,
                     const TrainConfig& config, const LossConfig& loss,
                     const CheckpointFn& on_checkpoint) {
  config.validate();
  loss.validate();
  if (dataset.empty()) throw std::invalid_argument("finetune: empty dataset");
  initial.validate();

  TrainResult result;
  result.params = std::move(initial);
  for (const Tensor* t : param_tensors(result.params)) {
    result.optimizer.first.emplace_back(t->shape());
    result.optimizer.second.emplace_back(t->shape());
  }

  Rng rng(config.seed);
  std::vector<TrainingSample> batch(config.batch_size);
  std::vector<Homography> warps(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const TrainingSample& s = dataset[rng.below(dataset.size())];
      batch[b] = s;
      warps[b] = to_pixel_frame(sample_homography(rng.next(), config.homography),
                                s.image.dim(0), s.image.dim(1));
    }
    BatchGradient grad = batch_gradient(result.params, batch, warps, loss);
    grad.loss.iteration = it;
    if (!std::isfinite(grad.loss.total)) {
      throw TrainingError(it, "non-finite loss at iteration " +
                                  std::to_string(it));
    }
    result.history.push_back(grad.loss);

    AdamState& adam = result.optimizer;
    ++adam.step;
    const double t = static_cast<double>(adam.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    auto params = param_tensors(result.params);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& w = *params[p];
      Tensor& m = adam.first[p];
      Tensor& v = adam.second[p];
      const Tensor& g = grad.grads[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double step = config.learning_rate * (m[i] / c1) /
                            (std::sqrt(v[i] / c2) + config.adam_epsilon);
        w[i] = static_cast<float>(w[i] - step);
      }
    }

    const std::size_t done = it + 1;
    const bool last = done == config.iterations;
    if (on_checkpoint &&
        (last || (config.checkpoint_every && done % config.checkpoint_every == 0))) {
      on_checkpoint(done, result.params, result.optimizer);
    }
  }
  return result;
}

void write_optimizer_state(const std::filesystem::path& path,
                           const AdamState& state, std::size_t iteration) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration " << iteration << '\n';
  os << "adam_step " << state.step << '\n';
  os << "tensors " << state.first.size() << '\n';
  for (const auto* moments : {&state.first, &state.second}) {
    for (const Tensor& t : *moments) {
      os << t.size();
      for (double v : t.data()) os << ' ' << v;
      os << '\n';
    }
  }
  write_file_atomic(path, os.str());
}

AdamState read_optimizer_state(const std::filesystem::path& path,
                               const NetworkParams& like,
                               std::size_t* iteration) {
  std::istringstream in(read_file(path));
  auto expect = [&](const char* key) {
    std::string k;
    std::size_t v = 0;
    if (!(in >> k >> v) || k != key) {
      throw std::runtime_error(path.string() + ": expected '" + key + "'");
    }
    return v;
  };
  const std::size_t it = expect("iteration");
  AdamState state;
  state.step = expect("adam_step");
  const std::size_t count = expect("tensors");
  const auto shapes = param_tensors(like);
  if (count != shapes.size()) {
    throw std::runtime_error(path.string() + ": tensor count mismatch");
  }
  for (auto* moments : {&state.first, &state.second}) {
    for (const Tensor* ref : shapes) {
      std::size_t n = 0;
      if (!(in >> n) || n != ref->size()) {
        throw std::runtime_error(path.string() + ": moment size mismatch");
      }
      Tensor t(ref->shape());
      for (double& v : t.storage()) {
        if (!(in >> v)) throw std::runtime_error(path.string() + ": truncated");
      }
      moments->push_back(std::move(t));
    }
  }
  if (iteration) *iteration = it;
  return state;
}

}  // namespace endopoint
