#include "bcnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace bcnn {

RealTensor Dataset::gather(std::span<const std::size_t> idx) const {
  const Shape s = images.shape();
  const std::size_t per = s.c * s.h * s.w;
  RealTensor out({idx.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw Error(ErrorCode::DataExhausted, "sample index " + std::to_string(idx[i]));
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::uint32_t> Dataset::gather_labels(std::span<const std::size_t> idx) const {
  std::vector<std::uint32_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > size()) throw Error(ErrorCode::DataExhausted, "subset out of range");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), first);
  return Dataset{gather(idx), gather_labels(idx), num_classes};
}

Dataset make_synthetic_blobs(std::size_t samples_per_class, std::size_t num_classes, const Shape& image,
                             double separation, double noise, std::uint64_t seed) {
  if (samples_per_class == 0 || num_classes < 2) throw Error(ErrorCode::InvalidConfig, "empty synthetic dataset");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t per = image.c * image.h * image.w;
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(per));
  for (auto& m : means)
    for (double& v : m) v = separation * normal(rng);

  const std::size_t n = samples_per_class * num_classes;
  Dataset d{RealTensor({n, image.c, image.h, image.w}), {}, num_classes};
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % num_classes;
    d.labels.push_back(static_cast<std::uint32_t>(k));
    for (std::size_t j = 0; j < per; ++j) d.images[i * per + j] = static_cast<float>(means[k][j] + noise * normal(rng));
  }
  return d;
}

Dataset load_cifar10_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw Error(ErrorCode::CorruptRecord, file.string() + ": length " + std::to_string(bytes.size()) +
                                              " is not a positive multiple of " + std::to_string(kCifarRecordBytes));
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset d{RealTensor({n, 3, 32, 32}), {}, 10};
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= 10) throw Error(ErrorCode::CorruptRecord, file.string() + ": label " + std::to_string(rec[0]));
    d.labels.push_back(rec[0]);
    for (std::size_t j = 0; j < kCifarRecordBytes - 1; ++j)
      d.images[i * (kCifarRecordBytes - 1) + j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  return d;
}

namespace {

Dataset concat(const std::vector<Dataset>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  const Shape s = parts.front().images.shape();
  Dataset out{RealTensor({n, s.c, s.h, s.w}), {}, parts.front().num_classes};
  auto dst = out.images.data().begin();
  for (const auto& p : parts) {
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) train.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  return {concat(train), load_cifar10_file(dir / "test_batch.bin")};
}

// ---------------------------------------------------------------------------

double softmax_cross_entropy(const RealTensor& logits, std::span<const std::uint32_t> labels, RealTensor* grad) {
  const Shape s = logits.shape();
  const std::size_t k = s.c * s.h * s.w;
  if (labels.size() != s.n) throw Error(ErrorCode::ShapeMismatch, "label count differs from batch size");
  if (grad) *grad = RealTensor(s);
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] >= k) throw Error(ErrorCode::ShapeMismatch, "label exceeds logit count");
    const float* z = logits.data().data() + n * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    total += std::log(sum) - (z[labels[n]] - zmax);
    if (grad) {
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(z[j] - zmax) / sum;
        (*grad)[n * k + j] = static_cast<float>((p - (j == labels[n] ? 1.0 : 0.0)) / static_cast<double>(s.n));
      }
    }
  }
  return total / static_cast<double>(s.n);
}

std::pair<RealTensor, RealTensor> ste_backward(const RealTensor& grad_r, const RealTensor& grad_i,
                                               const RealTensor& w_r, const RealTensor& w_i, float clip) {
  if (!(grad_r.shape() == w_r.shape()) || !(grad_i.shape() == w_i.shape()) || !(w_r.shape() == w_i.shape()))
    throw Error(ErrorCode::ShapeMismatch, "ste_backward operands differ in shape");
  RealTensor gr = grad_r, gi = grad_i;
  for (std::size_t j = 0; j < gr.size(); ++j) {
    if (!(std::fabs(w_r[j]) < clip)) gr[j] = 0.0f;
    if (!(std::fabs(w_i[j]) < clip)) gi[j] = 0.0f;
  }
  return {std::move(gr), std::move(gi)};
}

void sgd_step(std::span<float> weights, std::span<const float> grads, float lr) {
  if (weights.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "sgd_step operand sizes differ");
  for (std::size_t j = 0; j < weights.size(); ++j) weights[j] -= lr * grads[j];
}

void ste_gate(std::vector<ParamRef>& params, float clip) {
  for (auto& p : params) {
    if (!p.binarized) continue;
    for (std::size_t j = 0; j < p.grad.size(); ++j)
      if (!(std::fabs(p.value[j]) < clip)) p.grad[j] = 0.0f;
  }
}

namespace {

void validate(const TrainConfig& cfg, const Dataset& data) {
  if (!(cfg.lr >= 0.0f) || !std::isfinite(cfg.lr)) throw Error(ErrorCode::InvalidConfig, "lr must be >= 0");
  if (!(cfg.clip > 0.0f)) throw Error(ErrorCode::InvalidConfig, "clip must be > 0");
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  if (data.size() == 0) throw Error(ErrorCode::DataExhausted, "empty dataset");
}

std::size_t count_correct(const RealTensor& logits, std::span<const std::uint32_t> labels) {
  const std::size_t k = logits.size() / labels.size();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const float* z = logits.data().data() + n * k;
    if (static_cast<std::size_t>(std::max_element(z, z + k) - z) == labels[n]) ++correct;
  }
  return correct;
}

void rezero_pruned(ModelGraph& model) {
  for (auto* b : model.binary_convs())
    if (b->active_count() != b->geometry().out_channels) b->set_active_channels(b->active_channels());
}

}  // namespace

EpochStats train_epoch(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng,
                       const GradHook& hook) {
  validate(cfg, data);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<ParamRef> params = model.params();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t count = std::min(cfg.batch_size, order.size() - start);
    std::span<const std::size_t> idx(order.data() + start, count);
    const RealTensor x = data.gather(idx);
    const auto labels = data.gather_labels(idx);

    const RealTensor logits = as_real(model.forward_train(x), "model output");
    RealTensor grad;
    const double loss = softmax_cross_entropy(logits, labels, &grad);
    if (!std::isfinite(loss)) throw Error(ErrorCode::DivergedLoss, "non-finite training loss");
    loss_sum += loss * static_cast<double>(count);
    correct += count_correct(logits, labels);

    model.backward(grad);
    ste_gate(params, cfg.clip);
    if (hook) hook(params);
    for (auto& p : params) sgd_step(p.value, p.grad, cfg.lr);
    rezero_pruned(model);
  }
  const double n = static_cast<double>(data.size());
  return {0, loss_sum / n, static_cast<double>(correct) / n};
}

std::vector<EpochStats> train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<EpochStats> curve;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochStats s = train_epoch(model, data, cfg, rng);
    s.epoch = e;
    curve.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return curve;
}

EpochStats evaluate(const ModelGraph& model, const Dataset& data, std::size_t batch_size, const InferOptions& opt) {
  if (data.size() == 0) throw Error(ErrorCode::DataExhausted, "empty dataset");
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const RealTensor logits = forward(model, data.gather(idx), opt);
    const auto labels = data.gather_labels(idx);
    loss_sum += softmax_cross_entropy(logits, labels) * static_cast<double>(count);
    correct += count_correct(logits, labels);
  }
  const double n = static_cast<double>(data.size());
  return {0, loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace bcnn
