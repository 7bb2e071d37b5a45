#include "miniwfl/expression.hpp"

#include <cctype>
#include <variant>
#include <vector>

#include "miniwfl/error.hpp"

namespace miniwfl {

namespace expr {

enum class BinaryOp { Or, And, Eq, Ne, Lt, Le, Gt, Ge };

struct Literal {
  Json value;
};

struct Reference {
  std::vector<std::string> path;  // {"inputs", id[, attr]} or {"runtime", field}
  std::size_t column = 0;
};

struct Not {
  std::shared_ptr<const Node> operand;
  std::size_t column = 0;
};

struct Binary {
  BinaryOp op;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
  std::size_t column = 0;
};

struct Node {
  std::variant<Literal, Reference, Not, Binary> kind;
};

}  // namespace expr

namespace {

using expr::Binary;
using expr::BinaryOp;
using expr::Literal;
using expr::Node;
using expr::Not;
using expr::Reference;
using NodePtr = std::shared_ptr<const Node>;

enum class Tok { Ident, Int, Float, String, Dot, LParen, RParen, Not, And, Or, Eq, Ne, Lt, Le, Gt, Ge, End };

struct Token {
  Tok kind;
  std::string text;
  Json value;
  std::size_t column;
};

// Tokenizes the body between "$(" and the final ")". Columns are offsets into
// the full source string.
std::vector<Token> tokenize(std::string_view body, std::size_t offset) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto col = [&](std::size_t at) { return offset + at; };
  while (i < body.size()) {
    const char c = body[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < body.size() && (std::isalnum(static_cast<unsigned char>(body[i])) || body[i] == '_')) ++i;
      out.push_back({Tok::Ident, std::string(body.substr(start, i - start)), {}, col(start)});
      continue;
    }
    // a leading minus belongs to the literal; there is no subtraction
    const bool negative =
        c == '-' && i + 1 < body.size() && std::isdigit(static_cast<unsigned char>(body[i + 1]));
    if (negative || std::isdigit(static_cast<unsigned char>(c))) {
      if (negative) ++i;
      while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
      bool is_float = false;
      if (i + 1 < body.size() && body[i] == '.' && std::isdigit(static_cast<unsigned char>(body[i + 1]))) {
        is_float = true;
        ++i;
        while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
      }
      if (i < body.size() && (body[i] == 'e' || body[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < body.size() && (body[j] == '+' || body[j] == '-')) ++j;
        if (j < body.size() && std::isdigit(static_cast<unsigned char>(body[j]))) {
          is_float = true;
          i = j;
          while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
        }
      }
      std::string text(body.substr(start, i - start));
      Token tok{is_float ? Tok::Float : Tok::Int, text, {}, col(start)};
      try {
        tok.value = is_float ? Json(std::stod(text)) : Json(std::stoll(text));
      } catch (const std::out_of_range&) {
        throw ExprSyntaxError(col(start), "numeric literal out of range");
      }
      out.push_back(std::move(tok));
      continue;
    }
    if (c == '"' || c == '\'') {
      std::string value;
      ++i;
      bool closed = false;
      while (i < body.size()) {
        if (body[i] == '\\' && i + 1 < body.size()) {
          const char e = body[i + 1];
          value.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
          i += 2;
          continue;
        }
        if (body[i] == c) {
          closed = true;
          ++i;
          break;
        }
        value.push_back(body[i++]);
      }
      if (!closed) throw ExprSyntaxError(col(start), "unterminated string literal");
      out.push_back({Tok::String, std::string(body.substr(start, i - start)), value, col(start)});
      continue;
    }
    auto two = body.substr(i, 2);
    auto push = [&](Tok kind, std::size_t len) {
      out.push_back({kind, std::string(body.substr(i, len)), {}, col(i)});
      i += len;
    };
    if (two == "&&") { push(Tok::And, 2); continue; }
    if (two == "||") { push(Tok::Or, 2); continue; }
    if (two == "==") { push(Tok::Eq, 2); continue; }
    if (two == "!=") { push(Tok::Ne, 2); continue; }
    if (two == "<=") { push(Tok::Le, 2); continue; }
    if (two == ">=") { push(Tok::Ge, 2); continue; }
    switch (c) {
      case '.': push(Tok::Dot, 1); continue;
      case '(': push(Tok::LParen, 1); continue;
      case ')': push(Tok::RParen, 1); continue;
      case '!': push(Tok::Not, 1); continue;
      case '<': push(Tok::Lt, 1); continue;
      case '>': push(Tok::Gt, 1); continue;
      default:
        throw ExprSyntaxError(col(i), std::string("unexpected character '") + c + "'");
    }
  }
  out.push_back({Tok::End, "", {}, offset + body.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  NodePtr parse() {
    NodePtr root = parse_or();
    if (peek().kind != Tok::End) {
      throw ExprSyntaxError(peek().column, "unexpected '" + peek().text + "'");
    }
    return root;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  static NodePtr make(auto kind) { return std::make_shared<const Node>(Node{std::move(kind)}); }

  NodePtr parse_or() {
    NodePtr lhs = parse_and();
    while (peek().kind == Tok::Or) {
      std::size_t column = next().column;
      lhs = make(Binary{BinaryOp::Or, lhs, parse_and(), column});
    }
    return lhs;
  }

  NodePtr parse_and() {
    NodePtr lhs = parse_cmp();
    while (peek().kind == Tok::And) {
      std::size_t column = next().column;
      lhs = make(Binary{BinaryOp::And, lhs, parse_cmp(), column});
    }
    return lhs;
  }

  NodePtr parse_cmp() {
    NodePtr lhs = parse_unary();
    for (;;) {
      BinaryOp op;
      switch (peek().kind) {
        case Tok::Eq: op = BinaryOp::Eq; break;
        case Tok::Ne: op = BinaryOp::Ne; break;
        case Tok::Lt: op = BinaryOp::Lt; break;
        case Tok::Le: op = BinaryOp::Le; break;
        case Tok::Gt: op = BinaryOp::Gt; break;
        case Tok::Ge: op = BinaryOp::Ge; break;
        default: return lhs;
      }
      std::size_t column = next().column;
      lhs = make(Binary{op, lhs, parse_unary(), column});
    }
  }

  NodePtr parse_unary() {
    if (peek().kind == Tok::Not) {
      std::size_t column = next().column;
      return make(Not{parse_unary(), column});
    }
    return parse_primary();
  }

  NodePtr parse_primary() {
    const Token& tok = next();
    switch (tok.kind) {
      case Tok::Int:
      case Tok::Float:
      case Tok::String:
        return make(Literal{tok.value});
      case Tok::LParen: {
        NodePtr inner = parse_or();
        if (peek().kind != Tok::RParen) throw ExprSyntaxError(peek().column, "expected ')'");
        next();
        return inner;
      }
      case Tok::Ident:
        if (tok.text == "true") return make(Literal{true});
        if (tok.text == "false") return make(Literal{false});
        if (tok.text == "null") return make(Literal{nullptr});
        if (tok.text == "inputs" || tok.text == "runtime") return parse_reference(tok);
        throw ExprSyntaxError(tok.column, "unknown name '" + tok.text + "'");
      default:
        throw ExprSyntaxError(tok.column, tok.kind == Tok::End ? "unexpected end of expression"
                                                               : "unexpected '" + tok.text + "'");
    }
  }

  std::string expect_field() {
    if (peek().kind != Tok::Dot) throw ExprSyntaxError(peek().column, "expected '.'");
    next();
    if (peek().kind != Tok::Ident) throw ExprSyntaxError(peek().column, "expected a field name");
    return next().text;
  }

  NodePtr parse_reference(const Token& head) {
    Reference ref{{head.text}, head.column};
    if (head.text == "runtime") {
      const std::size_t column = peek().column + 1;  // the name after the dot
      std::string field = expect_field();
      if (field != "cores" && field != "ram" && field != "outdir" && field != "tmpdir") {
        throw ExprSyntaxError(column, "unknown runtime field '" + field + "'");
      }
      ref.path.push_back(field);
    } else {
      ref.path.push_back(expect_field());
      if (peek().kind == Tok::Dot) {
        const std::size_t column = peek().column + 1;
        std::string attr = expect_field();
        if (attr != "basename" && attr != "size" && attr != "path") {
          throw ExprSyntaxError(column, "unsupported attribute '" + attr + "'");
        }
        ref.path.push_back(attr);
      }
    }
    if (peek().kind == Tok::Dot || peek().kind == Tok::LParen) {
      throw ExprSyntaxError(peek().column, "unexpected '" + peek().text + "' after reference");
    }
    return make(std::move(ref));
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------

const char* type_name(const Json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "int";
  if (v.is_number()) return "float";
  if (v.is_string()) return "string";
  if (is_file_value(v)) return "File";
  if (v.is_array()) return "array";
  return "object";
}

[[noreturn]] void type_error(const std::string& what) {
  throw Error(ErrorCode::TypeError, what);
}

Json eval_reference(const Reference& ref, const EvalContext& ctx) {
  if (ref.path[0] == "runtime") {
    const std::string& f = ref.path[1];
    if (f == "cores") return ctx.runtime.cores;
    if (f == "ram") return ctx.runtime.ram;
    if (f == "outdir") return ctx.runtime.outdir;
    return ctx.runtime.tmpdir;
  }
  auto it = ctx.inputs.find(ref.path[1]);
  if (it == ctx.inputs.end()) {
    throw Error(ErrorCode::UnknownReference, "unknown reference 'inputs." + ref.path[1] + "'");
  }
  if (ref.path.size() == 2) return it->second;
  const Json& value = it->second;
  const std::string& attr = ref.path[2];
  if (!is_file_value(value) && !is_directory_value(value)) {
    type_error("attribute '" + attr + "' of inputs." + ref.path[1] + " which is " + type_name(value));
  }
  if (attr == "path") return value.value("path", "");
  if (attr == "basename") {
    if (value.contains("basename")) return value["basename"];
    return std::filesystem::path(value.value("path", "")).filename().string();
  }
  if (!value.contains("size")) type_error("inputs." + ref.path[1] + " has no size");
  return value["size"];
}

bool require_bool(const Json& v, const char* op) {
  if (!v.is_boolean()) type_error(std::string("operand of '") + op + "' is " + type_name(v) + ", not boolean");
  return v.get<bool>();
}

bool values_equal(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
  return a == b;
}

Json eval_node(const Node& node, const EvalContext& ctx);

Json eval_binary(const Binary& bin, const EvalContext& ctx) {
  if (bin.op == BinaryOp::And) {
    if (!require_bool(eval_node(*bin.lhs, ctx), "&&")) return false;
    return require_bool(eval_node(*bin.rhs, ctx), "&&");
  }
  if (bin.op == BinaryOp::Or) {
    if (require_bool(eval_node(*bin.lhs, ctx), "||")) return true;
    return require_bool(eval_node(*bin.rhs, ctx), "||");
  }
  Json lhs = eval_node(*bin.lhs, ctx);
  Json rhs = eval_node(*bin.rhs, ctx);
  if (bin.op == BinaryOp::Eq) return values_equal(lhs, rhs);
  if (bin.op == BinaryOp::Ne) return !values_equal(lhs, rhs);

  int cmp = 0;
  if (lhs.is_number() && rhs.is_number()) {
    if (lhs.is_number_integer() && rhs.is_number_integer()) {
      auto a = lhs.get<long long>(), b = rhs.get<long long>();
      cmp = a < b ? -1 : a > b ? 1 : 0;
    } else {
      double a = lhs.get<double>(), b = rhs.get<double>();
      cmp = a < b ? -1 : a > b ? 1 : 0;
    }
  } else if (lhs.is_string() && rhs.is_string()) {
    int c = lhs.get_ref<const std::string&>().compare(rhs.get_ref<const std::string&>());
    cmp = c < 0 ? -1 : c > 0 ? 1 : 0;
  } else {
    type_error(std::string("cannot order ") + type_name(lhs) + " and " + type_name(rhs));
  }
  switch (bin.op) {
    case BinaryOp::Lt: return cmp < 0;
    case BinaryOp::Le: return cmp <= 0;
    case BinaryOp::Gt: return cmp > 0;
    case BinaryOp::Ge: return cmp >= 0;
    default: return false;
  }
}

Json eval_node(const Node& node, const EvalContext& ctx) {
  return std::visit(
      [&](const auto& n) -> Json {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Literal>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, Reference>) {
          return eval_reference(n, ctx);
        } else if constexpr (std::is_same_v<T, Not>) {
          return !require_bool(eval_node(*n.operand, ctx), "!");
        } else {
          return eval_binary(n, ctx);
        }
      },
      node.kind);
}

void collect_inputs(const Node& node, std::set<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Reference>) {
          if (n.path[0] == "inputs") out.insert(n.path[1]);
        } else if constexpr (std::is_same_v<T, Not>) {
          collect_inputs(*n.operand, out);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_inputs(*n.lhs, out);
          collect_inputs(*n.rhs, out);
        }
      },
      node.kind);
}

// Finds the ')' closing the "$(" that starts at `open`, honouring nested
// parentheses and quoted strings. Returns npos when unterminated.
std::size_t find_close(std::string_view text, std::size_t open) {
  int depth = 0;
  char quote = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '(') {
      ++depth;
    } else if (c == ')') {
      if (--depth == 0) return i;
    }
  }
  return std::string_view::npos;
}

struct Segment {
  bool is_expr;
  std::string text;  // literal text, or full "$(...)" source
  std::size_t offset;
};

std::vector<Segment> split_segments(std::string_view text) {
  std::vector<Segment> out;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '\\' && text.substr(i + 1, 2) == "$(") {
      literal += "$(";
      i += 3;
      continue;
    }
    if (text.substr(i, 2) == "$(") {
      std::size_t close = find_close(text, i + 1);
      if (close == std::string_view::npos) {
        throw ExprSyntaxError(i, "unterminated expression");
      }
      if (!literal.empty()) {
        out.push_back({false, literal, 0});
        literal.clear();
      }
      out.push_back({true, std::string(text.substr(i, close - i + 1)), i});
      i = close + 1;
      continue;
    }
    literal.push_back(text[i++]);
  }
  if (!literal.empty()) out.push_back({false, literal, 0});
  return out;
}

}  // namespace

Expression::Expression(std::string source, std::shared_ptr<const expr::Node> root)
    : source_(std::move(source)), root_(std::move(root)) {}

std::set<std::string> Expression::referenced_inputs() const {
  std::set<std::string> out;
  if (root_) collect_inputs(*root_, out);
  return out;
}

Expression parse_expr(std::string_view source) {
  if (source.size() < 3 || source.substr(0, 2) != "$(" || source.back() != ')') {
    throw ExprSyntaxError(0, "expression must have the form $(...)");
  }
  std::string_view body = source.substr(2, source.size() - 3);
  Parser parser(tokenize(body, 2));
  return Expression(std::string(source), parser.parse());
}

Json eval_expr(const Expression& expression, const EvalContext& ctx) {
  return eval_node(expression.root(), ctx);
}

bool has_expression(std::string_view text) {
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] == '\\' && text.substr(i + 1, 2) == "$(") {
      i += 2;
      continue;
    }
    if (text[i] == '$' && text[i + 1] == '(') return true;
  }
  return false;
}

std::string stringify(const Json& value) {
  if (value.is_null()) return "";
  if (value.is_string()) return value.get<std::string>();
  if (is_file_value(value) || is_directory_value(value)) return value.value("path", "");
  return value.dump();
}

Json interpolate(std::string_view text, const EvalContext& ctx) {
  auto segments = split_segments(text);
  if (segments.size() == 1 && segments[0].is_expr) {
    return eval_expr(parse_expr(segments[0].text), ctx);
  }
  std::string out;
  for (const auto& seg : segments) {
    if (!seg.is_expr) {
      out += seg.text;
      continue;
    }
    try {
      out += stringify(eval_expr(parse_expr(seg.text), ctx));
    } catch (const ExprSyntaxError& e) {
      throw ExprSyntaxError(seg.offset + e.column(), "invalid expression '" + seg.text + "'");
    }
  }
  return out;
}

std::set<std::string> check_interpolation(std::string_view text) {
  std::set<std::string> refs;
  for (const auto& seg : split_segments(text)) {
    if (!seg.is_expr) continue;
    try {
      auto ids = parse_expr(seg.text).referenced_inputs();
      refs.insert(ids.begin(), ids.end());
    } catch (const ExprSyntaxError& e) {
      throw ExprSyntaxError(seg.offset + e.column(), "invalid expression '" + seg.text + "'");
    }
  }
  return refs;
}

}  // namespace miniwfl
