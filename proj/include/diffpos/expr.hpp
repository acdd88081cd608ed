#pragma once

// Small expression language for vector fields.
//
// Grammar (whitespace ignored):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?
//   primary := number | ident | func '(' expr ')' | '(' expr ')'
//   func    := sin | cos | exp | tanh
//   ident   := x1 .. x<dim>
//
// '^' binds tighter than unary minus on its left ("-x1^2" is -(x1^2)) and is
// right-associative. Positions in error messages are 1-based; a position one
// past the last character means "unexpected end of input".

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffpos/common.hpp"

namespace diffpos::expr {

class ParseError : public Error {
 public:
  ParseError(std::string code, const std::string& message, std::size_t position)
      : Error(std::move(code), message + " at position " + std::to_string(position)),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

struct Node;

// Immutable compiled expression. Cheap to copy (shared tree).
class Expression {
 public:
  Expression() = default;

  double evaluate(std::span<const double> x) const;
  const std::string& source() const noexcept { return source_; }

 private:
  friend Expression parse(std::string_view text, int dim);
  std::shared_ptr<const Node> root_;
  std::string source_;
};

// Parses one expression over the variables x1..x<dim>. Throws ParseError with
// code "dynsys.syntax" or "dynsys.unknown_identifier".
Expression parse(std::string_view text, int dim);

}  // namespace diffpos::expr
