#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "surgqa/decoding.hpp"

namespace surgqa::decoding {

void VCDConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument(fmt::format("alpha must be >= 0, got {}", alpha));
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument(fmt::format("beta must be in [0, 1], got {}", beta));
  }
  if (!(sigma >= 0.0)) throw std::invalid_argument(fmt::format("sigma must be >= 0, got {}", sigma));
}

TokenTensor distort(const TokenTensor& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  TokenTensor out = x;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  // Column-major walk keeps the draw order tied to Eigen's storage.
  for (Eigen::Index c = 0; c < out.data.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.data.rows(); ++r) out.data(r, c) += sigma * n01(rng);
  }
  return out;
}

ProbVector softmax(const Logits& logits) {
  if (logits.size() == 0) throw DimensionError("softmax of an empty vector");
  const double mx = logits.maxCoeff();
  if (!std::isfinite(mx)) throw DimensionError("softmax needs at least one finite logit");
  ProbVector p(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) p(i) = std::exp(logits(i) - mx);
  return p / p.sum();
}

ProbVector contrastive_distribution(const Logits& l_orig, const Logits& l_dist, double alpha) {
  if (l_orig.size() != l_dist.size()) {
    throw DimensionError(fmt::format("logit lengths differ: {} vs {}", l_orig.size(), l_dist.size()));
  }
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  return softmax(l_orig + alpha * (l_orig - l_dist));
}

std::vector<Eigen::Index> plausible_set(const ProbVector& p_orig, double beta) {
  const double cutoff = beta * p_orig.maxCoeff();
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < p_orig.size(); ++i) {
    if (p_orig(i) >= cutoff) out.push_back(i);
  }
  return out;
}

ProbVector vcd_step(const Logits& l_orig, const Logits& l_dist, const ProbVector& p_orig,
                    const VCDConfig& config) {
  if (l_orig.size() != l_dist.size() || l_orig.size() != p_orig.size()) {
    throw DimensionError("vcd_step inputs differ in length");
  }
  config.validate();
  Logits masked = Logits::Constant(l_orig.size(), -std::numeric_limits<double>::infinity());
  const Logits contrast = l_orig + config.alpha * (l_orig - l_dist);
  for (auto t : plausible_set(p_orig, config.beta)) masked(t) = contrast(t);
  return softmax(masked);
}

Eigen::Index argmax(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw DimensionError("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

namespace {

template <typename Step>
DecodeResult run_greedy(const LogitProvider& provider, std::size_t max_len,
                        std::optional<Eigen::Index> end_token, Step&& step) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  DecodeResult out;
  while (out.tokens.size() < max_len) {
    StepTrace trace;
    try {
      trace = step(out.tokens);
    } catch (const ProviderError& e) {
      out.error = fmt::format("step {}: {}", out.tokens.size(), e.what());
      break;
    }
    if (trace.p_orig.size() != provider.vocab_size()) {
      out.error = fmt::format("step {}: provider returned {} logits for a vocabulary of {}",
                              out.tokens.size(), trace.p_orig.size(), provider.vocab_size());
      break;
    }
    out.tokens.push_back(trace.token);
    out.steps.push_back(std::move(trace));
    if (end_token && out.tokens.back() == *end_token) break;
  }
  return out;
}

}  // namespace

DecodeResult greedy_decode(const LogitProvider& provider, const TokenTensor& x,
                           const TokenTensor& x_distorted, const VCDConfig& config,
                           std::size_t max_len, std::optional<Eigen::Index> end_token) {
  config.validate();
  return run_greedy(provider, max_len, end_token, [&](const std::vector<Eigen::Index>& ctx) {
    Logits lo = provider.logits(ctx, x);
    Logits ld = provider.logits(ctx, x_distorted);
    if (lo.size() != ld.size()) throw ProviderError("branches returned different vocabulary sizes");
    StepTrace t;
    t.p_orig = softmax(lo);
    t.plausible = plausible_set(t.p_orig, config.beta);
    t.p_final = vcd_step(lo, ld, t.p_orig, config);
    t.token = argmax(t.p_final);
    return t;
  });
}

DecodeResult plain_greedy(const LogitProvider& provider, const TokenTensor& x, std::size_t max_len,
                          std::optional<Eigen::Index> end_token) {
  return run_greedy(provider, max_len, end_token, [&](const std::vector<Eigen::Index>& ctx) {
    StepTrace t;
    t.p_orig = softmax(provider.logits(ctx, x));
    t.p_final = t.p_orig;
    t.token = argmax(t.p_orig);
    for (Eigen::Index i = 0; i < t.p_orig.size(); ++i) t.plausible.push_back(i);
    return t;
  });
}

}  // namespace surgqa::decoding
