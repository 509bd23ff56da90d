#include <charconv>

#include <fmt/format.h>

#include "surgqa/decoding.hpp"
#include "surgqa/util.hpp"

namespace surgqa::decoding {

namespace {

std::vector<double> parse_numbers(std::string_view line, const std::string& where) {
  std::vector<double> out;
  for (const auto& tok : split_whitespace(line)) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ValidationError(fmt::format("{}: '{}' is not a number", where, tok));
    }
    out.push_back(v);
  }
  return out;
}

Logits to_logits(const std::vector<double>& v, std::size_t from, std::size_t n) {
  Logits l(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) l(static_cast<Eigen::Index>(i)) = v[from + i];
  return l;
}

}  // namespace

ScriptedProvider::ScriptedProvider(std::vector<Logits> original, std::vector<Logits> distorted,
                                   TokenTensor reference)
    : original_(std::move(original)), distorted_(std::move(distorted)), reference_(std::move(reference)) {
  if (original_.empty() || original_.size() != distorted_.size()) {
    throw ValidationError("scripted provider needs matching, non-empty original and distorted steps");
  }
  vocab_ = original_.front().size();
  for (std::size_t i = 0; i < original_.size(); ++i) {
    if (original_[i].size() != vocab_ || distorted_[i].size() != vocab_) {
      throw ValidationError(fmt::format("scripted step {} has the wrong vocabulary size", i));
    }
  }
}

ScriptedProvider ScriptedProvider::from_file(const std::filesystem::path& path, Eigen::Index vocab_size,
                                             TokenTensor reference) {
  std::vector<Logits> orig, dist;
  std::size_t line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto where = fmt::format("{}:{}", path.string(), line_no);
    auto nums = parse_numbers(line, where);
    const auto v = static_cast<std::size_t>(vocab_size);
    if (nums.size() != 2 * v) {
      throw ValidationError(fmt::format("{}: expected {} logits (original then distorted), got {}",
                                        where, 2 * v, nums.size()));
    }
    orig.push_back(to_logits(nums, 0, v));
    dist.push_back(to_logits(nums, v, v));
  }
  if (orig.empty()) throw ValidationError(path.string() + ": no scripted steps");
  return ScriptedProvider(std::move(orig), std::move(dist), std::move(reference));
}

Logits ScriptedProvider::logits(const std::vector<Eigen::Index>& context, const TokenTensor& input) const {
  const std::size_t step = context.size();
  if (step >= original_.size()) {
    throw ProviderError(fmt::format("script has no step {}", step));
  }
  const bool is_original = input.data.rows() == reference_.data.rows() &&
                           input.data.cols() == reference_.data.cols() &&
                           input.data == reference_.data;
  return is_original ? original_[step] : distorted_[step];
}

BigramProvider::BigramProvider(Eigen::MatrixXd table) : table_(std::move(table)) {
  if (table_.cols() < 1 || table_.rows() != table_.cols() + 1) {
    throw ValidationError(fmt::format("bigram table must be (V + 1) x V, got {}x{}", table_.rows(), table_.cols()));
  }
  if (!table_.allFinite()) throw ValidationError("bigram table has non-finite entries");
}

BigramProvider BigramProvider::from_file(const std::filesystem::path& path) {
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_numbers(line, fmt::format("{}:{}", path.string(), line_no)));
    if (rows.back().size() != rows.front().size()) {
      throw ValidationError(fmt::format("{}:{}: ragged bigram row", path.string(), line_no));
    }
  }
  if (rows.empty()) throw ValidationError(path.string() + ": empty bigram table");
  Eigen::MatrixXd t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return BigramProvider(std::move(t));
}

Logits BigramProvider::logits(const std::vector<Eigen::Index>& context, const TokenTensor& input) const {
  input.check();
  const Eigen::Index v = table_.cols();
  const Eigen::Index row = context.empty() ? 0 : context.back() + 1;
  if (row < 0 || row >= table_.rows()) throw ProviderError(fmt::format("token {} outside the vocabulary", row - 1));
  Eigen::RowVectorXd means = input.data.colwise().mean();
  Logits out(v);
  for (Eigen::Index t = 0; t < v; ++t) out(t) = table_(row, t) + means(t % means.size());
  return out;
}

std::vector<std::string> read_vocab(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& raw : read_lines(path)) {
    auto tok = trim(raw);
    if (!tok.empty()) out.push_back(tok);
  }
  if (out.empty()) throw ValidationError(path.string() + ": empty vocabulary");
  return out;
}

}  // namespace surgqa::decoding
