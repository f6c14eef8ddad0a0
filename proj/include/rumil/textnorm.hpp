#pragma once

#include <filesystem>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace rumil::textnorm {

/// Whole-token rewrite: if `pattern` matches the entire token, the token is
/// replaced by `replacement`.
struct RewriteRule {
  std::size_t rule_id = 0;
  std::string pattern_text;
  std::string replacement;
  std::regex pattern;
};

/// Ordered, immutable list of rewrite rules.
class RuleSet {
 public:
  RuleSet() = default;

  /// Parses `pattern<TAB>replacement` lines. Blank lines and lines starting
  /// with '#' are skipped; rule ids count retained rules from 0.
  static RuleSet parse(std::string_view text);
  static RuleSet load(const std::filesystem::path& path);

  const std::vector<RewriteRule>& rules() const noexcept { return rules_; }
  bool empty() const noexcept { return rules_.empty(); }
  std::size_t size() const noexcept { return rules_.size(); }

  /// Canonical text form, parseable by `parse`.
  std::string to_text() const;

 private:
  std::vector<RewriteRule> rules_;
};

inline constexpr int kMaxRulePasses = 10;

/// Splits on whitespace and on any character outside [A-Za-z0-9], then
/// lowercases. Bytes >= 0x80 act as separators.
std::vector<std::string> tokenize(std::string_view text);

/// Shortens every run of a repeated letter longer than two to exactly two.
std::string collapse_stress(std::string_view token);

/// Applies `rules` in order, pass after pass, until a pass leaves the token
/// unchanged. Throws FixpointNotReached if the tenth pass still rewrites.
std::string apply_rules(std::string_view token, const RuleSet& rules);

std::vector<std::string> normalize_document(std::string_view text, const RuleSet& rules);

/// Space-joined normalized tokens.
std::string normalize_line(std::string_view text, const RuleSet& rules);

/// The bundled Roman Urdu rule file (data/rules/roman_urdu.tsv).
std::string_view builtin_rules_text() noexcept;
RuleSet builtin_rules();

}  // namespace rumil::textnorm
