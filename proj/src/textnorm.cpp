#include "rumil/textnorm.hpp"

#include <fstream>
#include <sstream>

#include "rumil/common.hpp"

namespace rumil::textnorm {
namespace {

bool is_token_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_canonical(std::string_view s) {
  if (s.empty()) return false;
  for (unsigned char c : s) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

RuleSet RuleSet::parse(std::string_view text) {
  RuleSet set;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) {
      throw Error(ErrorCode::bad_rule,
                  "line " + std::to_string(line_no) + ": expected pattern<TAB>replacement");
    }
    RewriteRule rule;
    rule.rule_id = set.rules_.size();
    rule.pattern_text = std::string(fields[0]);
    rule.replacement = std::string(fields[1]);
    if (!is_canonical(rule.replacement) || collapse_stress(rule.replacement) != rule.replacement) {
      throw Error(ErrorCode::bad_rule, "line " + std::to_string(line_no) +
                                           ": replacement must match [a-z0-9]+ without a 3-letter run");
    }
    try {
      rule.pattern = std::regex(rule.pattern_text, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCode::bad_rule, "line " + std::to_string(line_no) + ": " + e.what());
    }
    set.rules_.push_back(std::move(rule));
  }
  return set;
}

RuleSet RuleSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open rule file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RuleSet::to_text() const {
  std::string out;
  for (const auto& r : rules_) {
    out += r.pattern_text;
    out += '\t';
    out += r.replacement;
    out += '\n';
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (is_token_char(c)) {
      current.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string collapse_stress(std::string_view token) {
  std::string out;
  out.reserve(token.size());
  std::size_t run = 0;
  for (std::size_t i = 0; i < token.size(); ++i) {
    const char c = token[i];
    run = (i > 0 && token[i - 1] == c) ? run + 1 : 1;
    const bool letter = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (!letter || run <= 2) out.push_back(c);
  }
  return out;
}

std::string apply_rules(std::string_view token, const RuleSet& rules) {
  std::string current(token);
  std::vector<std::size_t> fired;
  for (int pass = 0; pass < kMaxRulePasses; ++pass) {
    fired.clear();
    for (const auto& rule : rules.rules()) {
      if (current != rule.replacement && std::regex_match(current, rule.pattern)) {
        current = rule.replacement;
        fired.push_back(rule.rule_id);
      }
    }
    if (fired.empty()) return current;
  }
  std::string ids;
  for (auto id : fired) ids += (ids.empty() ? "" : ",") + std::to_string(id);
  throw Error(ErrorCode::fixpoint_not_reached,
              "token '" + std::string(token) + "' still rewritten after " +
                  std::to_string(kMaxRulePasses) + " passes (rules " + ids + ")");
}

std::vector<std::string> normalize_document(std::string_view text, const RuleSet& rules) {
  auto tokens = tokenize(text);
  for (auto& t : tokens) t = apply_rules(collapse_stress(t), rules);
  return tokens;
}

std::string normalize_line(std::string_view text, const RuleSet& rules) {
  std::string out;
  for (const auto& t : normalize_document(text, rules)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace rumil::textnorm
