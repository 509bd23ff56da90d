#include <cmath>
#include <random>

#include <fmt/format.h>

#include "surgqa/decoding.hpp"

namespace surgqa::decoding {

std::string_view to_string(Pathway p) noexcept {
  switch (p) {
    case Pathway::kOriginal: return "o";
    case Pathway::kDownsampled: return "d";
    case Pathway::kFused: return "fused";
  }
  return "o";
}

void TokenTensor::check() const {
  if (data.rows() < 1 || data.cols() < 1) {
    throw DimensionError(fmt::format("token tensor must be non-empty, got {}x{}", data.rows(), data.cols()));
  }
  if (!data.allFinite()) throw DimensionError("token tensor has non-finite entries");
}

Eigen::MatrixXd Affine::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != weight.rows()) {
    throw DimensionError(fmt::format("affine map expects {} input channels, got {}", weight.rows(), x.cols()));
  }
  if (bias.size() != weight.cols()) throw DimensionError("affine bias length differs from output width");
  return (x * weight).rowwise() + bias;
}

namespace {

Affine random_affine(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(double(in));
  Affine a;
  a.weight.resize(in, out);
  a.bias.resize(out);
  for (Eigen::Index i = 0; i < in; ++i) {
    for (Eigen::Index j = 0; j < out; ++j) a.weight(i, j) = scale * n01(rng);
  }
  for (Eigen::Index j = 0; j < out; ++j) a.bias(j) = 0.1 * n01(rng);
  return a;
}

}  // namespace

MVTEParams random_mvte_params(Eigen::Index d, Eigen::Index hidden, Eigen::Index m,
                              Eigen::Index fused_in, Eigen::Index d_out, std::uint64_t seed) {
  if (d < 1 || hidden < 1 || m < 1 || fused_in < 1 || d_out < 1) {
    throw DimensionError("MVTE dimensions must all be at least 1");
  }
  std::mt19937_64 rng(seed);
  MVTEParams p;
  p.mlp_in = random_affine(d, hidden, rng);
  p.mlp_out = random_affine(hidden, m, rng);
  p.proj = random_affine(fused_in, d_out, rng);
  return p;
}

Eigen::MatrixXd mvte_attention(const TokenTensor& x, const MVTEParams& params) {
  x.check();
  if (params.m() < 1) throw DimensionError("MVTE needs at least one generated token");
  Eigen::MatrixXd hidden = params.mlp_in.apply(x.data).cwiseMax(0.0);
  Eigen::MatrixXd scores = params.mlp_out.apply(hidden);  // L x m
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const double mx = scores.col(c).maxCoeff();
    scores.col(c) = (scores.col(c).array() - mx).exp().matrix();
    scores.col(c) /= scores.col(c).sum();
  }
  return scores;
}

TokenTensor mvte_generate(const TokenTensor& x, const MVTEParams& params) {
  Eigen::MatrixXd a = mvte_attention(x, params);
  TokenTensor out;
  out.pathway = x.pathway;
  out.data.resize(x.tokens() + a.cols(), x.channels());
  out.data.topRows(x.tokens()) = x.data;
  out.data.bottomRows(a.cols()) = a.transpose() * x.data;
  return out;
}

TokenTensor mvte_fuse(const TokenTensor& xo, const TokenTensor& xd, const MVTEParams& params) {
  xo.check();
  xd.check();
  if (xo.tokens() != xd.tokens()) {
    throw DimensionError(fmt::format("pathways differ in token count: {} vs {}", xo.tokens(), xd.tokens()));
  }
  Eigen::MatrixXd cat(xo.tokens(), xo.channels() + xd.channels());
  cat << xo.data, xd.data;
  TokenTensor out;
  out.pathway = Pathway::kFused;
  out.data = params.proj.apply(cat);
  return out;
}

TokenTensor synthetic_tokens(Eigen::Index tokens, Eigen::Index channels, std::uint64_t seed,
                             Pathway pathway) {
  if (tokens < 1 || channels < 1) throw DimensionError("synthetic tensor needs L >= 1 and D >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  TokenTensor t;
  t.pathway = pathway;
  t.data.resize(tokens, channels);
  for (Eigen::Index i = 0; i < tokens; ++i) {
    for (Eigen::Index j = 0; j < channels; ++j) t.data(i, j) = n01(rng);
  }
  return t;
}

}  // namespace surgqa::decoding
