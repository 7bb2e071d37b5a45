#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>

#include "miniwfl/value.hpp"

namespace miniwfl {

namespace expr {
struct Node;
}

// A parsed "$(...)" expression. The grammar is deliberately small:
//   or      := and ('||' and)*
//   and     := cmp ('&&' cmp)*
//   cmp     := unary (('=='|'!='|'<'|'<='|'>'|'>=') unary)*
//   unary   := '!' unary | primary
//   primary := literal | reference | '(' or ')'
//   reference := 'inputs' '.' id ('.' ('basename'|'size'|'path'))?
//              | 'runtime' '.' ('cores'|'ram'|'outdir'|'tmpdir')
// Literals: integers, floats, single- or double-quoted strings, true, false, null.
class Expression {
 public:
  Expression() = default;
  Expression(std::string source, std::shared_ptr<const expr::Node> root);

  const std::string& source() const { return source_; }
  const expr::Node& root() const { return *root_; }

  /// Input ids referenced through `inputs.<id>`.
  std::set<std::string> referenced_inputs() const;

 private:
  std::string source_;
  std::shared_ptr<const expr::Node> root_;
};

struct RuntimeContext {
  long long cores = 1;
  long long ram = 256;  // MiB
  std::string outdir;
  std::string tmpdir;
};

struct EvalContext {
  std::map<std::string, Json> inputs;
  RuntimeContext runtime;
};

/// `source` must be exactly "$(" expr ")". Throws ExprSyntaxError.
Expression parse_expr(std::string_view source);

/// Throws Error(UnknownReference) or Error(TypeError).
Json eval_expr(const Expression& expression, const EvalContext& ctx);

/// True when `text` contains an unescaped "$(".
bool has_expression(std::string_view text);

/// Expands every "$(...)" in `text`. A string that is exactly one expression
/// yields the expression's value unchanged; otherwise results are stringified
/// and spliced (null renders as the empty string, File as its path).
/// "\$(" is a literal "$(".
Json interpolate(std::string_view text, const EvalContext& ctx);

/// Parses every embedded expression without evaluating; throws on the first
/// syntax error. Returns the union of referenced input ids.
std::set<std::string> check_interpolation(std::string_view text);

/// String form used when splicing values into text.
std::string stringify(const Json& value);

}  // namespace miniwfl
