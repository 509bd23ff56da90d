#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace surgqa::decoding {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Pathway { kOriginal, kDownsampled, kFused };
std::string_view to_string(Pathway p) noexcept;

/// L tokens by D channels, one token per row.
struct TokenTensor {
  Eigen::MatrixXd data;
  Pathway pathway = Pathway::kOriginal;

  Eigen::Index tokens() const { return data.rows(); }
  Eigen::Index channels() const { return data.cols(); }
  /// Throws DimensionError for an empty tensor or a non-finite entry.
  void check() const;
};

/// Affine map applied to each row: y = x W + b.
struct Affine {
  Eigen::MatrixXd weight;  // in x out
  Eigen::RowVectorXd bias;  // out

  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct MVTEParams {
  Affine mlp_in;   // D -> H
  Affine mlp_out;  // H -> m
  Affine proj;     // D_o + D_d -> D_out, used by mvte_fuse

  Eigen::Index m() const { return mlp_out.out(); }
};

/// Seeded Gaussian parameters with 1/sqrt(fan_in) scale.
MVTEParams random_mvte_params(Eigen::Index d, Eigen::Index hidden, Eigen::Index m,
                              Eigen::Index fused_in, Eigen::Index d_out, std::uint64_t seed);

/// L x m attention map: softmax over the token axis of Linear-ReLU-Linear(X).
Eigen::MatrixXd mvte_attention(const TokenTensor& x, const MVTEParams& params);

/// [X ; A^T X], shape (L + m) x D.
TokenTensor mvte_generate(const TokenTensor& x, const MVTEParams& params);

/// Channel concatenation of two (L + m)-token tensors followed by params.proj.
TokenTensor mvte_fuse(const TokenTensor& xo, const TokenTensor& xd, const MVTEParams& params);

/// Seeded standard-normal tokens standing in for one encoder pathway.
TokenTensor synthetic_tokens(Eigen::Index tokens, Eigen::Index channels, std::uint64_t seed,
                             Pathway pathway = Pathway::kOriginal);

struct VCDConfig {
  double alpha = 1.0;
  double beta = 0.1;
  double sigma = 0.3;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless alpha >= 0, beta in [0, 1], sigma >= 0.
  void validate() const;
};

using Logits = Eigen::VectorXd;
using ProbVector = Eigen::VectorXd;

/// x + sigma * N(0, 1), deterministic in (x, sigma, seed).
TokenTensor distort(const TokenTensor& x, double sigma, std::uint64_t seed);

/// Max-shifted softmax; -infinity entries receive zero mass.
ProbVector softmax(const Logits& logits);

/// softmax(l_orig + alpha (l_orig - l_dist)), which equals
/// softmax((1 + alpha) l_orig - alpha l_dist) and is exact when the inputs agree.
ProbVector contrastive_distribution(const Logits& l_orig, const Logits& l_dist, double alpha);

/// Indices t with p[t] >= beta * max(p), ascending.
std::vector<Eigen::Index> plausible_set(const ProbVector& p_orig, double beta);

/// Contrastive logits masked to the plausible set, then renormalized.
ProbVector vcd_step(const Logits& l_orig, const Logits& l_dist, const ProbVector& p_orig,
                    const VCDConfig& config);

/// Lowest index among the maxima.
Eigen::Index argmax(const Eigen::VectorXd& v);

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Next-token logits given the tokens emitted so far and a conditioning input.
/// Implementations must allow concurrent calls.
class LogitProvider {
 public:
  virtual ~LogitProvider() = default;
  virtual Eigen::Index vocab_size() const = 0;
  virtual Logits logits(const std::vector<Eigen::Index>& context, const TokenTensor& input) const = 0;
};

/// Replays fixed logits: step t returns the original-branch row when `input`
/// equals the registered original input exactly, the distorted row otherwise.
class ScriptedProvider final : public LogitProvider {
 public:
  ScriptedProvider(std::vector<Logits> original, std::vector<Logits> distorted, TokenTensor reference);
  /// Each non-empty line holds 2V numbers: V original logits then V distorted.
  static ScriptedProvider from_file(const std::filesystem::path& path, Eigen::Index vocab_size,
                                    TokenTensor reference);

  Eigen::Index vocab_size() const override { return vocab_; }
  Logits logits(const std::vector<Eigen::Index>& context, const TokenTensor& input) const override;

 private:
  std::vector<Logits> original_;
  std::vector<Logits> distorted_;
  TokenTensor reference_;
  Eigen::Index vocab_ = 0;
};

/// l(v) = B[prev][v] + mean over tokens of input[:, v mod D]. Row 0 of the
/// table is the start row; row 1 + u follows token u.
class BigramProvider final : public LogitProvider {
 public:
  explicit BigramProvider(Eigen::MatrixXd table);
  /// Whitespace-separated (V + 1) x V matrix, one row per line.
  static BigramProvider from_file(const std::filesystem::path& path);

  Eigen::Index vocab_size() const override { return table_.cols(); }
  Logits logits(const std::vector<Eigen::Index>& context, const TokenTensor& input) const override;

 private:
  Eigen::MatrixXd table_;
};

struct StepTrace {
  Eigen::Index token = 0;
  ProbVector p_orig;
  ProbVector p_final;  // p_orig for plain greedy, the vcd_step output otherwise
  std::vector<Eigen::Index> plausible;
};

struct DecodeResult {
  std::vector<Eigen::Index> tokens;
  std::vector<StepTrace> steps;
  std::optional<std::string> error;  // set when the provider failed mid-sequence
};

/// Greedy decoding over vcd_step. Stops after emitting `end_token` or max_len tokens.
DecodeResult greedy_decode(const LogitProvider& provider, const TokenTensor& x,
                           const TokenTensor& x_distorted, const VCDConfig& config,
                           std::size_t max_len, std::optional<Eigen::Index> end_token = std::nullopt);

/// Greedy decoding on the original branch alone.
DecodeResult plain_greedy(const LogitProvider& provider, const TokenTensor& x, std::size_t max_len,
                          std::optional<Eigen::Index> end_token = std::nullopt);

/// One token per non-empty line.
std::vector<std::string> read_vocab(const std::filesystem::path& path);

}  // namespace surgqa::decoding
