#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "bcnn/model.hpp"
#include "bcnn/tensor.hpp"

namespace bcnn {

struct Dataset {
  RealTensor images;  // (n, c, h, w)
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// Copies the listed samples into a new batch.
  RealTensor gather(std::span<const std::size_t> idx) const;
  std::vector<std::uint32_t> gather_labels(std::span<const std::size_t> idx) const;
  Dataset subset(std::size_t first, std::size_t count) const;
};

/// Gaussian blobs: class k has a random mean image drawn with the given
/// separation, samples add unit-variance noise scaled by `noise`.
Dataset make_synthetic_blobs(std::size_t samples_per_class, std::size_t num_classes, const Shape& image,
                             double separation, double noise, std::uint64_t seed);

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// One CIFAR-10 binary batch file: records of 1 label byte + 3072 pixel bytes.
Dataset load_cifar10_file(const std::filesystem::path& file);
/// data_batch_1..5.bin as the training split, test_batch.bin as the test split.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

struct TrainConfig {
  float lr = 0.01f;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  float clip = 1.0f;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean softmax cross-entropy over the batch. When grad is given it receives
/// d(mean loss)/d(logits).
double softmax_cross_entropy(const RealTensor& logits, std::span<const std::uint32_t> labels,
                             RealTensor* grad = nullptr);

/// Straight-through gate for binarized complex weights: each plane passes
/// its gradient where |w| < clip and is zeroed elsewhere, independently.
std::pair<RealTensor, RealTensor> ste_backward(const RealTensor& grad_r, const RealTensor& grad_i,
                                               const RealTensor& w_r, const RealTensor& w_i, float clip);

/// w <- w - lr * g.
void sgd_step(std::span<float> weights, std::span<const float> grads, float lr);

/// Applies the straight-through gate to the gradients of binarized parameters.
void ste_gate(std::vector<ParamRef>& params, float clip);

/// Called after the STE gate, before the update; may add to ParamRef::grad.
using GradHook = std::function<void(std::vector<ParamRef>&)>;

/// One pass over the data in a seeded random order. Pruned channels of
/// binarized layers stay zero.
EpochStats train_epoch(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng,
                       const GradHook& hook = {});

/// Runs cfg.epochs epochs; `on_epoch` sees each epoch's statistics.
std::vector<EpochStats> train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

/// Eval-mode loss and accuracy.
EpochStats evaluate(const ModelGraph& model, const Dataset& data, std::size_t batch_size = 64,
                    const InferOptions& opt = {});

}  // namespace bcnn
