#include "rumil/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <system_error>

namespace rumil {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::usage: return "Usage";
    case ErrorCode::io: return "IoError";
    case ErrorCode::fixpoint_not_reached: return "FixpointNotReached";
    case ErrorCode::bad_rule: return "BadRule";
    case ErrorCode::empty_vocabulary: return "EmptyVocabulary";
    case ErrorCode::bad_label: return "BadLabel";
    case ErrorCode::bad_row: return "BadRow";
    case ErrorCode::degenerate_split: return "DegenerateSplit";
    case ErrorCode::empty_corpus: return "EmptyCorpus";
    case ErrorCode::empty_cooc: return "EmptyCooc";
    case ErrorCode::zero_query: return "ZeroQuery";
    case ErrorCode::bad_header: return "BadHeader";
    case ErrorCode::dim_mismatch: return "DimMismatch";
    case ErrorCode::missing_class: return "MissingClass";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::all_pad_sequence: return "AllPadSequence";
    case ErrorCode::empty_split: return "EmptySplit";
    case ErrorCode::checkpoint_mismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) noexcept {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string format_double(double value, int significant_digits) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general,
                                 significant_digits);
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw Error(ErrorCode::bad_row, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace rumil
