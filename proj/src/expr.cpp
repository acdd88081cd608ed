#include "diffpos/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

namespace diffpos::expr {

enum class Op { kConst, kVar, kAdd, kSub, kMul, kDiv, kPow, kNeg, kSin, kCos, kExp, kTanh };

struct Node {
  Op op = Op::kConst;
  double value = 0.0;
  int index = 0;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
};

namespace {

using NodePtr = std::shared_ptr<const Node>;

NodePtr make_leaf(Op op, double value, int index) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = value;
  n->index = index;
  return n;
}

NodePtr make_node(Op op, NodePtr lhs, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

double eval(const Node& n, std::span<const double> x) {
  switch (n.op) {
    case Op::kConst: return n.value;
    case Op::kVar: return x[static_cast<std::size_t>(n.index)];
    case Op::kAdd: return eval(*n.lhs, x) + eval(*n.rhs, x);
    case Op::kSub: return eval(*n.lhs, x) - eval(*n.rhs, x);
    case Op::kMul: return eval(*n.lhs, x) * eval(*n.rhs, x);
    case Op::kDiv: return eval(*n.lhs, x) / eval(*n.rhs, x);
    case Op::kPow: {
      const double base = eval(*n.lhs, x);
      const double e = eval(*n.rhs, x);
      // Small integer exponents are common (x1^3); repeated multiplication keeps
      // them exact for negative bases.
      if (e == std::round(e) && std::abs(e) <= 16.0) {
        const int k = static_cast<int>(e);
        double r = 1.0;
        for (int i = 0; i < std::abs(k); ++i) r *= base;
        return k < 0 ? 1.0 / r : r;
      }
      return std::pow(base, e);
    }
    case Op::kNeg: return -eval(*n.lhs, x);
    case Op::kSin: return std::sin(eval(*n.lhs, x));
    case Op::kCos: return std::cos(eval(*n.lhs, x));
    case Op::kExp: return std::exp(eval(*n.lhs, x));
    case Op::kTanh: return std::tanh(eval(*n.lhs, x));
  }
  return 0.0;
}

class Parser {
 public:
  Parser(std::string_view text, int dim) : text_(text), dim_(dim) {}

  NodePtr parse_all() {
    NodePtr e = parse_expr();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what, std::string code = "dynsys.syntax") const {
    throw ParseError(std::move(code), "syntax error: " + what, pos_ + 1);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = make_node(Op::kAdd, lhs, parse_term());
      } else if (accept('-')) {
        lhs = make_node(Op::kSub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = make_node(Op::kMul, lhs, parse_unary());
      } else if (accept('/')) {
        lhs = make_node(Op::kDiv, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return make_node(Op::kNeg, parse_unary());
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    if (accept('^')) return make_node(Op::kPow, base, parse_unary());
    return base;
  }

  NodePtr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = parse_expr();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c))) return parse_identifier();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
      ++pos_;
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string literal(text_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(literal.c_str(), &end);
    if (end != literal.c_str() + literal.size()) {
      pos_ = start;
      fail("malformed number '" + literal + "'");
    }
    return make_leaf(Op::kConst, v, 0);
  }

  NodePtr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);

    static constexpr std::pair<std::string_view, Op> kFunctions[] = {
        {"sin", Op::kSin}, {"cos", Op::kCos}, {"exp", Op::kExp}, {"tanh", Op::kTanh}};
    for (const auto& [fname, op] : kFunctions) {
      if (name == fname) {
        if (!accept('(')) fail("expected '(' after " + std::string(fname));
        NodePtr arg = parse_expr();
        if (!accept(')')) fail("expected ')'");
        return make_node(op, arg);
      }
    }

    if (name.size() >= 2 && name[0] == 'x') {
      int index = 0;
      const auto* first = name.data() + 1;
      const auto* last = name.data() + name.size();
      auto [ptr, ec] = std::from_chars(first, last, index);
      if (ec == std::errc() && ptr == last && name[1] != '0' && index >= 1 && index <= dim_) {
        return make_leaf(Op::kVar, 0.0, index - 1);
      }
    }
    pos_ = start;
    fail("unknown identifier '" + std::string(name) + "'", "dynsys.unknown_identifier");
  }

  std::string_view text_;
  int dim_;
  std::size_t pos_ = 0;
};

}  // namespace

double Expression::evaluate(std::span<const double> x) const { return eval(*root_, x); }

Expression parse(std::string_view text, int dim) {
  Parser parser(text, dim);
  Expression e;
  e.root_ = parser.parse_all();
  e.source_ = std::string(text);
  return e;
}

}  // namespace diffpos::expr
