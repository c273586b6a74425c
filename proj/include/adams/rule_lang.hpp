#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace adams::rules {

// Word and guess length ceiling. Enforced after every token application;
// a running string longer than this rejects the (rule, word) pair.
inline constexpr std::size_t kMaxWordLen = 32;

// Position operands encode 0..35 as '0'-'9' then 'A'-'Z'.
inline constexpr int kMaxPosition = 35;

/// The supported primitive transformations.
///
/// Semantics follow Hashcat's word-major rule engine. Per-token behavior,
/// with `s` the running string and `n`, `m` decoded positions:
///
///   `:`    passthrough                `l`    lowercase all
///   `u`    uppercase all              `c`    lowercase all, uppercase s[0]
///   `C`    lowercase s[0], uppercase rest
///   `t`    toggle case of every character
///   `Tn`   toggle case at n           (n >= len rejects)
///   `r`    reverse                    `d`    append a copy of s
///   `pn`   append n copies of s       `f`    append reversed s
///   `{`    rotate left                `}`    rotate right
///   `$X`   append character X         `^X`   prepend character X
///   `[`    drop first character       `]`    drop last character
///   `Dn`   delete character at n      (n >= len rejects)
///   `xnm`  keep substring [n, n+m)    (n+m > len rejects)
///   `inX`  insert X at n              (n > len rejects)
///   `onX`  overwrite s[n] with X      (n >= len rejects)
///   `'n`   truncate to first n chars  (n > len rejects)
///   `sXY`  replace every X with Y     `@X`   purge every X
///   `zn`   prepend s[0] n times       (empty s with n > 0 rejects)
///   `Zn`   append s[len-1] n times    (empty s with n > 0 rejects)
///   `q`    duplicate every character
///
/// `[`, `]`, `{`, `}` are no-ops on the empty string. Case operations touch
/// ASCII letters only.
enum class Opcode : std::uint8_t {
  Passthrough,
  Lowercase,
  Uppercase,
  Capitalize,
  InvertCapitalize,
  ToggleAll,
  ToggleAt,
  Reverse,
  Duplicate,
  DuplicateN,
  Reflect,
  RotateLeft,
  RotateRight,
  Append,
  Prepend,
  DropFirst,
  DropLast,
  DeleteAt,
  ExtractRange,
  InsertAt,
  OverwriteAt,
  Truncate,
  ReplaceAll,
  Purge,
  DupFirst,
  DupLast,
  DupEveryChar,
};

/// Operand of a rule token: either a literal character or a position index.
struct Operand {
  enum class Kind : std::uint8_t { Char, Position } kind;
  char ch = 0;   // valid when kind == Char
  int pos = 0;   // valid when kind == Position, in 0..35
};

struct RuleToken {
  Opcode opcode;
  Operand args[2];
  int arity = 0;
};

struct Rule {
  std::vector<RuleToken> tokens;
  std::string source;

  /// Canonical text: tokens re-serialized, single space between tokens.
  /// Parsing the canonical form yields an identical token sequence.
  std::string canonical() const;

  bool is_identity() const;  // bare `:`
};

struct ParseError {
  enum class Kind : std::uint8_t {
    EmptyRule,
    UnknownOpcode,
    TruncatedOperand,
    InvalidPosition,
  };
  Kind kind;
  std::size_t position = 0;  // byte offset in the input line
  std::string message() const;
};

using ParseResult = std::variant<Rule, ParseError>;

struct SkippedLine {
  std::size_t line_number;  // 1-based
  std::string text;
  ParseError error;
};

struct RuleSet {
  std::vector<Rule> rules;
  std::string name;
  bool identity_removed = false;

  std::size_t size() const { return rules.size(); }
  /// FNV-1a 64 over the newline-joined canonical forms. Stable across
  /// source-text whitespace differences.
  std::uint64_t fingerprint() const;
};

struct RuleSetParse {
  RuleSet set;
  std::vector<SkippedLine> skipped;
};

/// Decode a position character: '0'-'9' -> 0-9, 'A'-'Z' -> 10-35.
std::optional<int> position_decode(char c);
char position_encode(int pos);

/// Parse a single non-comment line. Whitespace between tokens is ignored;
/// each token is read greedily as opcode plus its fixed arity of operand
/// characters (so `$ ` appends a space).
ParseResult parse_rule(std::string_view line);

/// Parse a whole rule file. `#` comments and blank lines are skipped
/// silently; unparsable lines are collected, not fatal. Duplicate rules
/// (by canonical form) keep the first occurrence. With drop_identity the
/// bare `:` rule is removed and identity_removed is set.
RuleSetParse parse_ruleset(std::string_view text, bool drop_identity,
                           std::string name = "");

/// Apply a rule to a word, token by token. Returns std::nullopt when the
/// pair is rejected: an out-of-range position operand, or a running string
/// longer than kMaxWordLen. Pure function.
std::optional<std::string> apply(const Rule& rule, std::string_view word);

/// Allocation-light variant for hot loops: writes the result into `out`
/// (overwritten). Returns false on rejection.
bool apply_into(const Rule& rule, std::string_view word, std::string& out);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace adams::rules
