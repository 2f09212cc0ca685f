#include "protlang/optim.hpp"

#include <cmath>

#include "protlang/errors.hpp"

namespace protlang {

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double peak_lr, double min_lr,
                 std::uint64_t warmup_steps) {
  if (peak_lr < min_lr) throw ContractError("cosine_lr: peak_lr below min_lr");
  if (warmup_steps > total_steps) throw ContractError("cosine_lr: warmup exceeds total steps");
  if (step < warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return min_lr;
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double frac = static_cast<double>(step - warmup_steps) / span;
  return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

template <class S>
AdamW<S>::AdamW(std::vector<NamedTensor<S>> params, AdamWConfig cfg) : cfg_(cfg) {
  for (auto& p : params) {
    if (!p.tensor.defined()) throw ContractError("AdamW: undefined parameter " + p.name);
    Slot s;
    s.name = p.name;
    s.param = p.tensor;
    s.m.assign(p.tensor.numel(), S(0));
    s.v.assign(p.tensor.numel(), S(0));
    slots_.push_back(std::move(s));
  }
}

template <class S>
void AdamW<S>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    if (!s.param.requires_grad()) continue;
    auto theta = s.param.raw();
    auto g = s.param.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      double mi = cfg_.beta1 * static_cast<double>(s.m[i]) + (1.0 - cfg_.beta1) * gi;
      double vi = cfg_.beta2 * static_cast<double>(s.v[i]) + (1.0 - cfg_.beta2) * gi * gi;
      s.m[i] = static_cast<S>(mi);
      s.v[i] = static_cast<S>(vi);
      double upd = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      double th = static_cast<double>(theta[i]);
      th -= lr * cfg_.weight_decay * th;
      th -= lr * upd;
      if (!std::isfinite(th))
        throw NumericError("AdamW produced a non-finite value in " + s.name);
      theta[i] = static_cast<S>(th);
    }
  }
}

template <class S>
void AdamW<S>::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

template <class S>
std::vector<NamedTensor<S>> AdamW<S>::state() const {
  std::vector<NamedTensor<S>> out;
  for (const auto& s : slots_) {
    out.push_back({"opt." + s.name + ".m",
                   Tensor<S>::from_data({s.m.size()}, s.m)});
    out.push_back({"opt." + s.name + ".v",
                   Tensor<S>::from_data({s.v.size()}, s.v)});
  }
  return out;
}

template <class S>
void AdamW<S>::load_state(const std::vector<NamedTensor<S>>& entries) {
  for (auto& s : slots_) {
    bool got_m = false, got_v = false;
    for (const auto& e : entries) {
      std::vector<S>* dst = nullptr;
      if (e.name == "opt." + s.name + ".m") {
        dst = &s.m;
        got_m = true;
      } else if (e.name == "opt." + s.name + ".v") {
        dst = &s.v;
        got_v = true;
      } else {
        continue;
      }
      if (e.tensor.numel() != dst->size())
        throw ContractError("AdamW state size mismatch for " + e.name);
      dst->assign(e.tensor.data().begin(), e.tensor.data().end());
    }
    if (!got_m || !got_v)
      throw NotFoundError("AdamW state missing moments for " + s.name);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace protlang
