#include "pnet/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace pnet {

template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<Mask>& targets) {
  const Shape4 s = logits.shape();
  if (Index(targets.size()) != s.n)
    throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " masks for logits " + s.str());
  for (const auto& t : targets) {
    if (t.rows() != s.h || t.cols() != s.w) throw ShapeError("cross entropy: mask extent differs from logits " + s.str());
    if (t.size() > 0 && (t.minCoeff() < 0 || t.maxCoeff() >= s.c))
      throw DomainError("cross entropy: class id outside [0, " + std::to_string(s.c) + ")");
  }
  const auto& x = logits.value();
  const Index plane = s.plane();
  const double count = double(s.n * plane);
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<Tensor<Scalar>>(s);
  double total = 0.0;
  for (Index n = 0; n < s.n; ++n) {
    const Scalar* in = x.data() + x.offset(n, 0, 0, 0);
    Scalar* pr = probs->data() + probs->offset(n, 0, 0, 0);
    const std::int32_t* t = targets[std::size_t(n)].data();
    for (Index i = 0; i < plane; ++i) {
      Scalar m = in[i];
      for (Index c = 1; c < s.c; ++c) m = std::max(m, in[c * plane + i]);
      Scalar z = 0;
      for (Index c = 0; c < s.c; ++c) {
        const Scalar e = std::exp(in[c * plane + i] - m);
        pr[c * plane + i] = e;
        z += e;
      }
      for (Index c = 0; c < s.c; ++c) pr[c * plane + i] /= z;
      total += double(m + std::log(z) - in[t[i] * plane + i]);
    }
  }
  auto& g = logits.graph();
  return g.record(Tensor<Scalar>::scalar(Scalar(total / count)), {logits},
                  [logits, probs, targets, count, plane](Graph<Scalar>& g, const Tensor<Scalar>& og) {
                    if (!g.requires_grad(logits.id())) return;
                    auto& gx = g.grad(logits.id());
                    const Scalar k = og[0] / Scalar(count);
                    const Index channels = gx.shape().c;
                    for (Index n = 0; n < gx.shape().n; ++n) {
                      const Scalar* pr = probs->data() + probs->offset(n, 0, 0, 0);
                      Scalar* out = gx.data() + gx.offset(n, 0, 0, 0);
                      const std::int32_t* t = targets[std::size_t(n)].data();
                      for (Index c = 0; c < channels; ++c)
                        for (Index i = 0; i < plane; ++i)
                          out[c * plane + i] += k * (pr[c * plane + i] - Scalar(t[i] == c ? 1 : 0));
                    }
                  });
}

template <typename Scalar>
Adam<Scalar>::Adam(ParameterStore<Scalar>& store, const AdamConfig& config) : store_(&store), config_(config) {
  if (!(config.lr >= 0.0)) throw std::invalid_argument("Adam learning rate must be >= 0");
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store[i].value.shape());
    v_.emplace_back(store[i].value.shape());
  }
}

template <typename Scalar>
void Adam<Scalar>::step() {
  ++t_;
  const Scalar b1 = Scalar(config_.beta1), b2 = Scalar(config_.beta2);
  const Scalar bc1 = Scalar(1.0 - std::pow(config_.beta1, double(t_)));
  const Scalar bc2 = Scalar(1.0 - std::pow(config_.beta2, double(t_)));
  const Scalar lr = Scalar(config_.lr), eps = Scalar(config_.eps);
  for (std::size_t i = 0; i < store_->size(); ++i) {
    auto& p = (*store_)[i];
    if (!p.trainable) continue;
    const auto& g = p.grad.array();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.value.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(adam.lr >= 0.0)) throw std::invalid_argument("train.lr must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
}

TrainingDiverged::TrainingDiverged(int e, int b, double loss)
    : std::runtime_error("non-finite training loss (" + std::to_string(loss) + ") at epoch " + std::to_string(e) +
                         ", batch " + std::to_string(b)),
      epoch(e),
      batch(b) {}

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<SegSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const Shape4 first = samples.at(indices[0]).image.shape();
  Tensor<Scalar> out({Index(indices.size()), first.c, first.h, first.w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& img = samples.at(indices[k]).image;
    if (img.shape() != first) throw ShapeError("batch mixes image shapes " + first.str() + " and " + img.shape().str());
    out.array().segment(Index(k) * first.size(), first.size()) = img.array().template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
std::vector<Mask> argmax_masks(const Tensor<Scalar>& logits) {
  const Shape4 s = logits.shape();
  std::vector<Mask> out;
  for (Index n = 0; n < s.n; ++n) {
    Mask m(s.h, s.w);
    const Scalar* in = logits.data() + logits.offset(n, 0, 0, 0);
    for (Index i = 0; i < s.plane(); ++i) {
      int best = 0;
      for (Index c = 1; c < s.c; ++c)
        if (in[c * s.plane() + i] > in[best * s.plane() + i]) best = int(c);
      m.data()[i] = best;
    }
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

template <typename Scalar, typename Fn>
void for_each_batch(const SegModel<Scalar>& model, const std::vector<SegSample>& samples, int batch_size, Fn&& fn) {
  if (samples.empty()) throw std::invalid_argument("evaluation needs a non-empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + std::size_t(batch_size)); ++i) idx.push_back(i);
    Graph<Scalar> g(false);
    auto out = model.forward(g, g.constant(stack_images<Scalar>(samples, idx)), false);
    fn(idx, out.logits);
  }
}

}  // namespace

template <typename Scalar>
std::vector<Mask> predict_masks(const SegModel<Scalar>& model, const std::vector<SegSample>& samples, int batch_size) {
  std::vector<Mask> out;
  for_each_batch(model, samples, batch_size, [&](const std::vector<std::size_t>&, Var<Scalar> logits) {
    for (auto& m : argmax_masks(logits.value())) out.push_back(std::move(m));
  });
  return out;
}

template <typename Scalar>
EvalResult evaluate(const SegModel<Scalar>& model, const std::vector<SegSample>& samples, int batch_size) {
  EvalResult r;
  r.confusion = ConfusionMatrix(model.config().n_classes);
  double loss_sum = 0.0;
  for_each_batch(model, samples, batch_size, [&](const std::vector<std::size_t>& idx, Var<Scalar> logits) {
    std::vector<Mask> truth;
    for (auto i : idx) truth.push_back(samples[i].mask);
    loss_sum += double(cross_entropy(logits, truth).value()[0]) * double(idx.size());
    const auto pred = argmax_masks(logits.value());
    for (std::size_t k = 0; k < idx.size(); ++k) r.confusion.update(pred[k], truth[k]);
  });
  r.loss = loss_sum / double(samples.size());
  r.pixel_acc = pixel_accuracy(r.confusion);
  r.miou = mean_iou(r.confusion);
  r.class_iou = class_iou(r.confusion);
  return r;
}

template <typename Scalar>
TrainHistory train(SegModel<Scalar>& model, const DataSplit& data, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("training set is empty");
  const int n_classes = model.config().n_classes;
  for (const auto& s : data.train) s.validate(n_classes);
  for (const auto& s : data.val) s.validate(n_classes);

  Adam<Scalar> adam(model.parameters(), config.adam);
  std::mt19937_64 shuffle_rng(config.seed);
  std::vector<std::size_t> order(data.train.size());
  TrainHistory history;
  double best = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size), ++batch_no) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<SegSample> batch;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        if (config.augment) {
          // Per-sample stream keyed by (seed, epoch, sample index).
          std::seed_seq seq{std::uint32_t(config.seed), std::uint32_t(config.seed >> 32), std::uint32_t(epoch),
                            std::uint32_t(i)};
          std::mt19937_64 rng(seq);
          batch.push_back(augment(data.train[i], rng));
        } else {
          batch.push_back(data.train[i]);
        }
      }
      std::vector<std::size_t> idx(batch.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::vector<Mask> masks;
      for (const auto& s : batch) masks.push_back(s.mask);

      Graph<Scalar> g;
      auto out = model.forward(g, g.constant(stack_images<Scalar>(batch, idx)), true);
      auto loss = cross_entropy(out.logits, masks);
      const double lv = double(loss.value()[0]);
      if (!std::isfinite(lv)) throw TrainingDiverged(epoch, batch_no, lv);
      model.parameters().zero_grad();
      g.backward(loss);
      adam.step();
      loss_sum += lv * double(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(order.size());
    if (!data.val.empty() && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      const auto r = evaluate(model, data.val, config.batch_size);
      rec.evaluated = true;
      rec.val_loss = r.loss;
      rec.val_pixel_acc = r.pixel_acc;
      rec.val_miou = r.miou;
      if (r.miou > best) {
        best = r.miou;
        history.best_epoch = epoch;
        history.best_miou = r.miou;
        if (config.checkpoint) save_checkpoint(model, *config.checkpoint);
      }
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

template <typename Scalar>
std::uint64_t parameter_checksum(const ParameterStore<Scalar>& store) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store[i].value;
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t k = 0; k < std::size_t(v.size()) * sizeof(Scalar); ++k) {
      h ^= bytes[k];
      h *= 1099511628211ull;
    }
  }
  return h;
}

#define PNET_INSTANTIATE_TRAINING(S)                                                                         \
  template Var<S> cross_entropy(Var<S>, const std::vector<Mask>&);                                           \
  template class Adam<S>;                                                                                    \
  template Tensor<S> stack_images<S>(const std::vector<SegSample>&, std::span<const std::size_t>);           \
  template std::vector<Mask> argmax_masks(const Tensor<S>&);                                                 \
  template std::vector<Mask> predict_masks(const SegModel<S>&, const std::vector<SegSample>&, int);          \
  template EvalResult evaluate(const SegModel<S>&, const std::vector<SegSample>&, int);                      \
  template TrainHistory train(SegModel<S>&, const DataSplit&, const TrainConfig&, const EpochCallback&);     \
  template std::uint64_t parameter_checksum(const ParameterStore<S>&);

PNET_INSTANTIATE_TRAINING(float)
PNET_INSTANTIATE_TRAINING(double)

}  // namespace pnet
