#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "bcnn/model.hpp"
#include "bcnn/tensor.hpp"
#include "bcnn/training.hpp"

namespace bcnn {

/// Surrogate Lagrangian relaxation for structured channel pruning.
///
///   L = f(W) + sum_i h_i(Z_i) + sum_i tr(Lambda_i^T (W_i - Z_i)) + rho/2 sum_i |W_i - Z_i|_F^2
///
/// where h_i is 0 when Z_i keeps at most budget_i output channels, +inf otherwise.
struct SlrConfig {
  double rho = 0.1;
  double M = 300.0;
  double r = 0.1;
  double s0 = 0.01;
  std::vector<std::size_t> budgets;  // retained complex output channels per layer
  std::size_t max_iters = 10;

  void validate(std::size_t layers) const;
};

struct SlrState {
  std::vector<ComplexTensor> W, Z, Lambda;
  double s = 0.01;
  std::size_t k = 1;
};

/// Number of output channels whose real or imaginary kernel has a nonzero entry.
std::size_t nonzero_channels(const ComplexTensor& w);
bool meets_budgets(const std::vector<ComplexTensor>& t, const std::vector<std::size_t>& budgets);

/// Per complex output channel Frobenius norms (both planes together).
std::vector<double> channel_norms(const ComplexTensor& w);

/// Keeps the `budget` output channels with the largest Frobenius norm
/// (ties keep the lower index) and zeroes the rest.
ComplexTensor project_channels(const ComplexTensor& w, std::size_t budget);

double alpha(std::size_t k, double M, double r);

/// Returns +infinity when some Z_i violates its budget.
double augmented_lagrangian(const SlrState& state, double loss_value, const SlrConfig& cfg);
/// The same value without the indicator terms.
double augmented_lagrangian_finite(const SlrState& state, double loss_value, double rho);

/// sqrt(sum_i |A_i - B_i|_F^2), accumulated in double.
double frobenius_distance(const std::vector<ComplexTensor>& a, const std::vector<ComplexTensor>& b);

/// Whatever owns the prunable weights and the loss.
class SlrProblem {
 public:
  virtual ~SlrProblem() = default;

  virtual std::vector<ComplexTensor> weights() const = 0;
  virtual void set_weights(const std::vector<ComplexTensor>& w) = 0;
  virtual std::size_t batch_count() const = 0;
  /// f(W) on the given batch at the current weights.
  virtual double loss(std::size_t batch) = 0;

  /// Adds the penalty gradient for layer i to `grad` given that layer's W.
  using PenaltyGrad = std::function<void(std::size_t layer, const ComplexTensor& w, std::span<float> grad_re,
                                         std::span<float> grad_im)>;
  /// Step 1: one epoch of SGD on f(W) plus the penalty gradient.
  virtual void minimize(const PenaltyGrad& penalty) = 0;

  /// Sets W to `z` and permanently disables the zero channels.
  virtual void hard_prune(const std::vector<ComplexTensor>& z) { set_weights(z); }
};

struct SlrRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  double violation = 0.0;  // |W^k - Z^k|_F
  double stepsize = 0.0;
  bool feasible = false;   // W^k itself meets the budgets
  bool condition1 = false, condition2 = false;
  double s_mid = 0.0;      // stepsize after the first surrogate check
};

/// Writes one record as a whitespace-separated line:
/// iteration loss violation stepsize feasible
void write_history_line(std::ostream& os, const SlrRecord& r);

SlrState init_slr_state(const SlrProblem& problem, const SlrConfig& cfg);

/// One SLR iteration on `problem`, evaluating the surrogate conditions on `batch`.
SlrRecord slr_step(SlrState& state, SlrProblem& problem, std::size_t batch, const SlrConfig& cfg);

struct SlrResult {
  SlrState state;
  std::vector<SlrRecord> history;
};

/// Runs max_iters iterations cycling through the batches, then hard-prunes W <- Z.
SlrResult slr_prune(SlrProblem& problem, const SlrConfig& cfg,
                    const std::function<void(const SlrRecord&)>& on_iter = {});

// ---------------------------------------------------------------------------

/// f(W) = |W - W*|_F^2 for one layer, minimized with plain gradient steps.
class QuadraticProblem final : public SlrProblem {
 public:
  QuadraticProblem(ComplexTensor target, ComplexTensor start, float lr, std::size_t inner_steps = 1);

  std::vector<ComplexTensor> weights() const override { return {w_}; }
  void set_weights(const std::vector<ComplexTensor>& w) override { w_ = w.at(0); }
  std::size_t batch_count() const override { return 1; }
  double loss(std::size_t) override;
  void minimize(const PenaltyGrad& penalty) override;

 private:
  ComplexTensor target_, w_;
  float lr_;
  std::size_t inner_steps_;
};

/// Prunes the binarized convolutions of a model. f is the eval-mode
/// cross-entropy on a fixed partition of `data` into batches.
class ModelSlrProblem final : public SlrProblem {
 public:
  ModelSlrProblem(ModelGraph& model, const Dataset& data, const TrainConfig& train, std::uint64_t seed);

  std::vector<ComplexTensor> weights() const override;
  void set_weights(const std::vector<ComplexTensor>& w) override;
  std::size_t batch_count() const override;
  double loss(std::size_t batch) override;
  void minimize(const PenaltyGrad& penalty) override;
  void hard_prune(const std::vector<ComplexTensor>& z) override;

  std::vector<std::size_t> channel_counts() const;

 private:
  ModelGraph& model_;
  const Dataset& data_;
  TrainConfig train_;
  std::mt19937_64 rng_;
  std::vector<BinaryComplexConvLayer*> layers_;
};

/// Budgets keeping round(ratio * channels), at least 1, per layer.
std::vector<std::size_t> budgets_from_ratio(const std::vector<std::size_t>& channels, double ratio);

}  // namespace bcnn
