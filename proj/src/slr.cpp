#include "bcnn/slr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bcnn {

void SlrConfig::validate(std::size_t layers) const {
  if (!(rho > 0.0)) throw Error(ErrorCode::InvalidConfig, "rho must be > 0");
  if (!(M > 1.0)) throw Error(ErrorCode::InvalidConfig, "M must be > 1");
  if (!(r > 0.0 && r < 1.0)) throw Error(ErrorCode::InvalidConfig, "r must be in (0,1)");
  if (!(s0 > 0.0)) throw Error(ErrorCode::InvalidConfig, "s0 must be > 0");
  if (budgets.size() != layers)
    throw Error(ErrorCode::InvalidConfig,
                std::to_string(budgets.size()) + " budgets for " + std::to_string(layers) + " prunable layers");
  for (std::size_t b : budgets)
    if (b == 0) throw Error(ErrorCode::InvalidConfig, "every layer must keep at least one channel");
}

std::vector<double> channel_norms(const ComplexTensor& w) {
  const Shape s = w.shape();
  const std::size_t per = s.c * s.h * s.w;
  std::vector<double> out(s.n, 0.0);
  for (std::size_t o = 0; o < s.n; ++o) {
    double acc = 0.0;
    for (std::size_t j = o * per; j < (o + 1) * per; ++j)
      acc += double(w.re[j]) * w.re[j] + double(w.im[j]) * w.im[j];
    out[o] = std::sqrt(acc);
  }
  return out;
}

std::size_t nonzero_channels(const ComplexTensor& w) {
  const Shape s = w.shape();
  const std::size_t per = s.c * s.h * s.w;
  std::size_t count = 0;
  for (std::size_t o = 0; o < s.n; ++o) {
    for (std::size_t j = o * per; j < (o + 1) * per; ++j) {
      if (w.re[j] != 0.0f || w.im[j] != 0.0f) {
        ++count;
        break;
      }
    }
  }
  return count;
}

bool meets_budgets(const std::vector<ComplexTensor>& t, const std::vector<std::size_t>& budgets) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (nonzero_channels(t[i]) > budgets.at(i)) return false;
  return true;
}

ComplexTensor project_channels(const ComplexTensor& w, std::size_t budget) {
  const Shape s = w.shape();
  if (budget > s.n)
    throw Error(ErrorCode::BudgetTooLarge,
                "budget " + std::to_string(budget) + " exceeds " + std::to_string(s.n) + " channels");
  const std::vector<double> norms = channel_norms(w);
  std::vector<std::size_t> order(s.n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  ComplexTensor z(s);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t o = order[i];
    std::copy_n(w.re.data().begin() + o * per, per, z.re.data().begin() + o * per);
    std::copy_n(w.im.data().begin() + o * per, per, z.im.data().begin() + o * per);
  }
  return z;
}

double alpha(std::size_t k, double M, double r) {
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "alpha needs k >= 1");
  const double kd = static_cast<double>(k);
  return 1.0 - 1.0 / (M * std::pow(kd, 1.0 - 1.0 / std::pow(kd, r)));
}

double frobenius_distance(const std::vector<ComplexTensor>& a, const std::vector<ComplexTensor>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "layer counts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].shape() == b[i].shape())) throw Error(ErrorCode::ShapeMismatch, "layer shapes differ");
    for (std::size_t j = 0; j < a[i].re.size(); ++j) {
      const double dr = double(a[i].re[j]) - b[i].re[j];
      const double di = double(a[i].im[j]) - b[i].im[j];
      acc += dr * dr + di * di;
    }
  }
  return std::sqrt(acc);
}

namespace {

/// tr(L^T (W - Z)) + rho/2 |W - Z|^2 over all layers.
double penalty_terms(const std::vector<ComplexTensor>& W, const std::vector<ComplexTensor>& Z,
                     const std::vector<ComplexTensor>& L, double rho) {
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) {
    for (std::size_t j = 0; j < W[i].re.size(); ++j) {
      const double dr = double(W[i].re[j]) - Z[i].re[j];
      const double di = double(W[i].im[j]) - Z[i].im[j];
      lin += L[i].re[j] * dr + L[i].im[j] * di;
      quad += dr * dr + di * di;
    }
  }
  return lin + 0.5 * rho * quad;
}

void multiplier_update(std::vector<ComplexTensor>& L, double s, const std::vector<ComplexTensor>& W,
                       const std::vector<ComplexTensor>& Z) {
  const float sf = static_cast<float>(s);
  for (std::size_t i = 0; i < L.size(); ++i) {
    for (std::size_t j = 0; j < L[i].re.size(); ++j) {
      L[i].re[j] = L[i].re[j] + sf * (W[i].re[j] - Z[i].re[j]);
      L[i].im[j] = L[i].im[j] + sf * (W[i].im[j] - Z[i].im[j]);
    }
  }
}

std::vector<ComplexTensor> project_all(const std::vector<ComplexTensor>& W, const std::vector<std::size_t>& budgets) {
  std::vector<ComplexTensor> Z;
  Z.reserve(W.size());
  for (std::size_t i = 0; i < W.size(); ++i) Z.push_back(project_channels(W[i], budgets[i]));
  return Z;
}

}  // namespace

double augmented_lagrangian_finite(const SlrState& state, double loss_value, double rho) {
  return loss_value + penalty_terms(state.W, state.Z, state.Lambda, rho);
}

double augmented_lagrangian(const SlrState& state, double loss_value, const SlrConfig& cfg) {
  if (!meets_budgets(state.Z, cfg.budgets)) return std::numeric_limits<double>::infinity();
  return augmented_lagrangian_finite(state, loss_value, cfg.rho);
}

void write_history_line(std::ostream& os, const SlrRecord& r) {
  os << r.iteration << ' ' << r.loss << ' ' << r.violation << ' ' << r.stepsize << ' ' << (r.feasible ? 1 : 0)
     << '\n';
}

SlrState init_slr_state(const SlrProblem& problem, const SlrConfig& cfg) {
  SlrState st;
  st.W = problem.weights();
  cfg.validate(st.W.size());
  st.Z = project_all(st.W, cfg.budgets);
  for (const auto& w : st.W) st.Lambda.emplace_back(w.shape());
  st.s = cfg.s0;
  st.k = 1;
  return st;
}

SlrRecord slr_step(SlrState& st, SlrProblem& problem, std::size_t batch, const SlrConfig& cfg) {
  const std::vector<ComplexTensor> W_prev = st.W;
  const std::vector<ComplexTensor> Z_prev = st.Z;

  // Step 1: W^k from SGD on L(W, Z^{k-1}, Lambda^k).
  problem.set_weights(W_prev);
  problem.minimize([&](std::size_t i, const ComplexTensor& w, std::span<float> gr, std::span<float> gi) {
    const ComplexTensor& z = st.Z[i];
    const ComplexTensor& l = st.Lambda[i];
    const float rho = static_cast<float>(cfg.rho);
    for (std::size_t j = 0; j < gr.size(); ++j) {
      gr[j] += l.re[j] + rho * (w.re[j] - z.re[j]);
      gi[j] += l.im[j] + rho * (w.im[j] - z.im[j]);
    }
  });
  st.W = problem.weights();
  const double f_new = problem.loss(batch);
  if (!std::isfinite(f_new)) throw Error(ErrorCode::DivergedLoss, "non-finite loss in SLR step");
  problem.set_weights(W_prev);
  const double f_old = problem.loss(batch);
  problem.set_weights(st.W);

  const double a = alpha(st.k, cfg.M, cfg.r);
  const double prev_gap = frobenius_distance(W_prev, Z_prev);

  SlrRecord rec;
  rec.iteration = st.k;

  // Surrogate condition for the W update, same batch on both sides.
  const double lhs1 = f_new + penalty_terms(st.W, Z_prev, st.Lambda, cfg.rho);
  const double rhs1 = f_old + penalty_terms(W_prev, Z_prev, st.Lambda, cfg.rho);
  double s_mid = st.s;
  if (lhs1 < rhs1) {
    rec.condition1 = true;
    const double gap = frobenius_distance(st.W, Z_prev);
    if (gap > 0.0 && prev_gap > 0.0) s_mid = a * st.s * prev_gap / gap;
    multiplier_update(st.Lambda, s_mid, st.W, Z_prev);
  }
  rec.s_mid = s_mid;

  // Step 2: Z^k is the exact projection of W^k.
  st.Z = project_all(st.W, cfg.budgets);

  const double lhs2 = penalty_terms(st.W, st.Z, st.Lambda, cfg.rho);
  const double rhs2 = penalty_terms(st.W, Z_prev, st.Lambda, cfg.rho);
  double s_new = s_mid;
  if (lhs2 < rhs2) {
    rec.condition2 = true;
    const double gap = frobenius_distance(st.W, st.Z);
    if (gap > 0.0 && prev_gap > 0.0) s_new = a * s_mid * prev_gap / gap;
    multiplier_update(st.Lambda, s_new, st.W, st.Z);
  }
  st.s = s_new;

  rec.loss = f_new;
  rec.violation = frobenius_distance(st.W, st.Z);
  rec.stepsize = st.s;
  rec.feasible = meets_budgets(st.W, cfg.budgets);
  ++st.k;
  return rec;
}

SlrResult slr_prune(SlrProblem& problem, const SlrConfig& cfg, const std::function<void(const SlrRecord&)>& on_iter) {
  SlrResult res;
  res.state = init_slr_state(problem, cfg);
  const std::size_t batches = problem.batch_count();
  if (batches == 0) throw Error(ErrorCode::DataExhausted, "no batches to evaluate");
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    res.history.push_back(slr_step(res.state, problem, it % batches, cfg));
    if (on_iter) on_iter(res.history.back());
  }
  problem.hard_prune(res.state.Z);
  res.state.W = problem.weights();
  return res;
}

// ---------------------------------------------------------------------------

QuadraticProblem::QuadraticProblem(ComplexTensor target, ComplexTensor start, float lr, std::size_t inner_steps)
    : target_(std::move(target)), w_(std::move(start)), lr_(lr), inner_steps_(inner_steps) {
  if (!(target_.shape() == w_.shape())) throw Error(ErrorCode::ShapeMismatch, "target and start differ in shape");
}

double QuadraticProblem::loss(std::size_t) {
  return std::pow(frobenius_distance({w_}, {target_}), 2);
}

void QuadraticProblem::minimize(const PenaltyGrad& penalty) {
  for (std::size_t step = 0; step < inner_steps_; ++step) {
    ComplexTensor g(w_.shape());
    for (std::size_t j = 0; j < g.re.size(); ++j) {
      g.re[j] = 2.0f * (w_.re[j] - target_.re[j]);
      g.im[j] = 2.0f * (w_.im[j] - target_.im[j]);
    }
    penalty(0, w_, g.re.data(), g.im.data());
    sgd_step(w_.re.data(), g.re.data(), lr_);
    sgd_step(w_.im.data(), g.im.data(), lr_);
  }
}

// ---------------------------------------------------------------------------

ModelSlrProblem::ModelSlrProblem(ModelGraph& model, const Dataset& data, const TrainConfig& train,
                                 std::uint64_t seed)
    : model_(model), data_(data), train_(train), rng_(seed), layers_(model.binary_convs()) {
  if (layers_.empty()) throw Error(ErrorCode::InvalidConfig, "model has no binarized layers to prune");
  if (data.size() == 0) throw Error(ErrorCode::DataExhausted, "empty dataset");
}

std::vector<ComplexTensor> ModelSlrProblem::weights() const {
  std::vector<ComplexTensor> out;
  for (const auto* l : layers_) out.push_back(l->latent);
  return out;
}

void ModelSlrProblem::set_weights(const std::vector<ComplexTensor>& w) {
  if (w.size() != layers_.size()) throw Error(ErrorCode::ShapeMismatch, "layer count");
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i].shape() == layers_[i]->latent.shape())) throw Error(ErrorCode::ShapeMismatch, "layer shape");
    layers_[i]->latent = w[i];
  }
}

std::size_t ModelSlrProblem::batch_count() const {
  return (data_.size() + train_.batch_size - 1) / train_.batch_size;
}

double ModelSlrProblem::loss(std::size_t batch) {
  const std::size_t first = batch * train_.batch_size;
  const std::size_t count = std::min(train_.batch_size, data_.size() - first);
  return evaluate(model_, data_.subset(first, count), train_.batch_size).loss;
}

void ModelSlrProblem::minimize(const PenaltyGrad& penalty) {
  train_epoch(model_, data_, train_, rng_, [&](std::vector<ParamRef>& params) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto* layer = layers_[i];
      std::span<float> gr, gi;
      for (auto& p : params) {
        if (p.value.data() == layer->latent.re.data().data()) gr = p.grad;
        if (p.value.data() == layer->latent.im.data().data()) gi = p.grad;
      }
      penalty(i, layer->latent, gr, gi);
    }
  });
}

void ModelSlrProblem::hard_prune(const std::vector<ComplexTensor>& z) {
  set_weights(z);
  for (auto* l : layers_) {
    const std::vector<double> norms = channel_norms(l->latent);
    std::vector<std::uint8_t> active(norms.size());
    for (std::size_t o = 0; o < norms.size(); ++o) active[o] = (norms[o] > 0.0 && l->active_channels()[o]) ? 1 : 0;
    l->set_active_channels(std::move(active));
  }
}

std::vector<std::size_t> ModelSlrProblem::channel_counts() const {
  std::vector<std::size_t> out;
  for (const auto* l : layers_) out.push_back(l->geometry().out_channels);
  return out;
}

std::vector<std::size_t> budgets_from_ratio(const std::vector<std::size_t>& channels, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorCode::InvalidConfig, "budget ratio must be in (0,1]");
  std::vector<std::size_t> out;
  for (std::size_t c : channels)
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(c)))));
  return out;
}

}  // namespace bcnn
