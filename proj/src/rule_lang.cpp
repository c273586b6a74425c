#include "adams/rule_lang.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

namespace adams::rules {

namespace {

struct OpInfo {
  char symbol;
  Opcode opcode;
  int arity;
  // Operand kinds, 'p' position, 'c' char.
  char operands[2];
};

constexpr std::array<OpInfo, 27> kOps = {{
    {':', Opcode::Passthrough, 0, {0, 0}},
    {'l', Opcode::Lowercase, 0, {0, 0}},
    {'u', Opcode::Uppercase, 0, {0, 0}},
    {'c', Opcode::Capitalize, 0, {0, 0}},
    {'C', Opcode::InvertCapitalize, 0, {0, 0}},
    {'t', Opcode::ToggleAll, 0, {0, 0}},
    {'T', Opcode::ToggleAt, 1, {'p', 0}},
    {'r', Opcode::Reverse, 0, {0, 0}},
    {'d', Opcode::Duplicate, 0, {0, 0}},
    {'p', Opcode::DuplicateN, 1, {'p', 0}},
    {'f', Opcode::Reflect, 0, {0, 0}},
    {'{', Opcode::RotateLeft, 0, {0, 0}},
    {'}', Opcode::RotateRight, 0, {0, 0}},
    {'$', Opcode::Append, 1, {'c', 0}},
    {'^', Opcode::Prepend, 1, {'c', 0}},
    {'[', Opcode::DropFirst, 0, {0, 0}},
    {']', Opcode::DropLast, 0, {0, 0}},
    {'D', Opcode::DeleteAt, 1, {'p', 0}},
    {'x', Opcode::ExtractRange, 2, {'p', 'p'}},
    {'i', Opcode::InsertAt, 2, {'p', 'c'}},
    {'o', Opcode::OverwriteAt, 2, {'p', 'c'}},
    {'\'', Opcode::Truncate, 1, {'p', 0}},
    {'s', Opcode::ReplaceAll, 2, {'c', 'c'}},
    {'@', Opcode::Purge, 1, {'c', 0}},
    {'z', Opcode::DupFirst, 1, {'p', 0}},
    {'Z', Opcode::DupLast, 1, {'p', 0}},
    {'q', Opcode::DupEveryChar, 0, {0, 0}},
}};

const OpInfo* op_by_symbol(char c) {
  for (const auto& op : kOps)
    if (op.symbol == c) return &op;
  return nullptr;
}

const OpInfo& op_by_code(Opcode code) {
  for (const auto& op : kOps)
    if (op.opcode == code) return op;
  return kOps[0];  // unreachable for valid tokens
}

bool is_rule_space(char c) { return c == ' ' || c == '\t'; }

char toggle_char(char c) {
  if (c >= 'a' && c <= 'z') return static_cast<char>(c - 'a' + 'A');
  if (c >= 'A' && c <= 'Z') return static_cast<char>(c - 'A' + 'a');
  return c;
}

char lower_char(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

char upper_char(char c) {
  return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
}

}  // namespace

std::optional<int> position_decode(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'Z') return c - 'A' + 10;
  return std::nullopt;
}

char position_encode(int pos) {
  return pos < 10 ? static_cast<char>('0' + pos)
                  : static_cast<char>('A' + pos - 10);
}

std::string ParseError::message() const {
  switch (kind) {
    case Kind::EmptyRule:
      return "empty rule";
    case Kind::UnknownOpcode:
      return "unknown opcode at offset " + std::to_string(position);
    case Kind::TruncatedOperand:
      return "truncated operand at offset " + std::to_string(position);
    case Kind::InvalidPosition:
      return "invalid position character at offset " + std::to_string(position);
  }
  return "parse error";
}

ParseResult parse_rule(std::string_view line) {
  std::vector<RuleToken> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    if (is_rule_space(line[i])) {
      ++i;
      continue;
    }
    const OpInfo* op = op_by_symbol(line[i]);
    if (!op) return ParseError{ParseError::Kind::UnknownOpcode, i};
    RuleToken tok;
    tok.opcode = op->opcode;
    tok.arity = op->arity;
    std::size_t operand_at = i + 1;
    for (int a = 0; a < op->arity; ++a, ++operand_at) {
      if (operand_at >= line.size())
        return ParseError{ParseError::Kind::TruncatedOperand, operand_at};
      char c = line[operand_at];
      if (op->operands[a] == 'p') {
        auto pos = position_decode(c);
        if (!pos) return ParseError{ParseError::Kind::InvalidPosition, operand_at};
        tok.args[a] = Operand{Operand::Kind::Position, 0, *pos};
      } else {
        tok.args[a] = Operand{Operand::Kind::Char, c, 0};
      }
    }
    tokens.push_back(tok);
    i = operand_at;
  }
  if (tokens.empty()) return ParseError{ParseError::Kind::EmptyRule, 0};
  Rule rule;
  rule.tokens = std::move(tokens);
  rule.source = std::string(line);
  return rule;
}

std::string Rule::canonical() const {
  std::string out;
  for (const auto& tok : tokens) {
    if (!out.empty()) out.push_back(' ');
    const OpInfo& op = op_by_code(tok.opcode);
    out.push_back(op.symbol);
    for (int a = 0; a < tok.arity; ++a) {
      const Operand& arg = tok.args[a];
      out.push_back(arg.kind == Operand::Kind::Position ? position_encode(arg.pos)
                                                        : arg.ch);
    }
  }
  return out;
}

bool Rule::is_identity() const {
  return tokens.size() == 1 && tokens[0].opcode == Opcode::Passthrough;
}

RuleSetParse parse_ruleset(std::string_view text, bool drop_identity,
                           std::string name) {
  RuleSetParse result;
  result.set.name = std::move(name);
  result.set.identity_removed = drop_identity;
  std::unordered_set<std::string> seen;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    start = end + 1;
    if (start > text.size() && line.empty()) break;

    // Comments and blank lines are not diagnostics.
    std::size_t first = 0;
    while (first < line.size() && is_rule_space(line[first])) ++first;
    if (first == line.size() || line[first] == '#') continue;

    ParseResult parsed = parse_rule(line);
    if (auto* err = std::get_if<ParseError>(&parsed)) {
      result.skipped.push_back({line_no, std::string(line), *err});
      continue;
    }
    Rule rule = std::get<Rule>(std::move(parsed));
    if (drop_identity && rule.is_identity()) continue;
    std::string canon = rule.canonical();
    if (!seen.insert(canon).second) continue;
    result.set.rules.push_back(std::move(rule));
  }
  return result;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t RuleSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& rule : rules) {
    h = fnv1a64(rule.canonical(), h);
    h = fnv1a64("\n", h);
  }
  return h;
}

namespace {

// Single-token step on `s`. Returns false on rejection. `s` may grow past
// kMaxWordLen here; the caller enforces the length ceiling after each token.
bool apply_token(const RuleToken& tok, std::string& s) {
  const std::size_t len = s.size();
  switch (tok.opcode) {
    case Opcode::Passthrough:
      return true;
    case Opcode::Lowercase:
      for (auto& c : s) c = lower_char(c);
      return true;
    case Opcode::Uppercase:
      for (auto& c : s) c = upper_char(c);
      return true;
    case Opcode::Capitalize:
      for (auto& c : s) c = lower_char(c);
      if (!s.empty()) s[0] = upper_char(s[0]);
      return true;
    case Opcode::InvertCapitalize:
      for (auto& c : s) c = upper_char(c);
      if (!s.empty()) s[0] = lower_char(s[0]);
      return true;
    case Opcode::ToggleAll:
      for (auto& c : s) c = toggle_char(c);
      return true;
    case Opcode::ToggleAt: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      if (n >= len) return false;
      s[n] = toggle_char(s[n]);
      return true;
    }
    case Opcode::Reverse:
      std::reverse(s.begin(), s.end());
      return true;
    case Opcode::Duplicate:
      s += s;
      return true;
    case Opcode::DuplicateN: {
      const int n = tok.args[0].pos;
      const std::string base = s;
      for (int i = 0; i < n; ++i) s += base;
      return true;
    }
    case Opcode::Reflect: {
      const std::string rev(s.rbegin(), s.rend());
      s += rev;
      return true;
    }
    case Opcode::RotateLeft:
      if (len > 1) std::rotate(s.begin(), s.begin() + 1, s.end());
      return true;
    case Opcode::RotateRight:
      if (len > 1) std::rotate(s.begin(), s.end() - 1, s.end());
      return true;
    case Opcode::Append:
      s.push_back(tok.args[0].ch);
      return true;
    case Opcode::Prepend:
      s.insert(s.begin(), tok.args[0].ch);
      return true;
    case Opcode::DropFirst:
      if (!s.empty()) s.erase(s.begin());
      return true;
    case Opcode::DropLast:
      if (!s.empty()) s.pop_back();
      return true;
    case Opcode::DeleteAt: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      if (n >= len) return false;
      s.erase(s.begin() + static_cast<std::ptrdiff_t>(n));
      return true;
    }
    case Opcode::ExtractRange: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      const std::size_t m = static_cast<std::size_t>(tok.args[1].pos);
      if (n + m > len) return false;
      s = s.substr(n, m);
      return true;
    }
    case Opcode::InsertAt: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      if (n > len) return false;
      s.insert(s.begin() + static_cast<std::ptrdiff_t>(n), tok.args[1].ch);
      return true;
    }
    case Opcode::OverwriteAt: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      if (n >= len) return false;
      s[n] = tok.args[1].ch;
      return true;
    }
    case Opcode::Truncate: {
      const std::size_t n = static_cast<std::size_t>(tok.args[0].pos);
      if (n > len) return false;
      s.resize(n);
      return true;
    }
    case Opcode::ReplaceAll: {
      const char from = tok.args[0].ch, to = tok.args[1].ch;
      for (auto& c : s)
        if (c == from) c = to;
      return true;
    }
    case Opcode::Purge: {
      const char target = tok.args[0].ch;
      s.erase(std::remove(s.begin(), s.end(), target), s.end());
      return true;
    }
    case Opcode::DupFirst: {
      const int n = tok.args[0].pos;
      if (n == 0) return true;
      if (s.empty()) return false;
      s.insert(0, static_cast<std::size_t>(n), s[0]);
      return true;
    }
    case Opcode::DupLast: {
      const int n = tok.args[0].pos;
      if (n == 0) return true;
      if (s.empty()) return false;
      s.append(static_cast<std::size_t>(n), s.back());
      return true;
    }
    case Opcode::DupEveryChar: {
      std::string out;
      out.reserve(s.size() * 2);
      for (char c : s) {
        out.push_back(c);
        out.push_back(c);
      }
      s = std::move(out);
      return true;
    }
  }
  return false;
}

}  // namespace

bool apply_into(const Rule& rule, std::string_view word, std::string& out) {
  out.assign(word);
  for (const auto& tok : rule.tokens) {
    if (!apply_token(tok, out)) return false;
    if (out.size() > kMaxWordLen) return false;
  }
  return true;
}

std::optional<std::string> apply(const Rule& rule, std::string_view word) {
  std::string out;
  if (!apply_into(rule, word, out)) return std::nullopt;
  return out;
}

}  // namespace adams::rules
