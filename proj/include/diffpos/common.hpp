#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace diffpos {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Every failure carries a module-qualified code such as "dynsys.step_underflow"
// so the CLI can map it to an exit status without string matching on messages.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

  // Module prefix of the code ("dynsys", "cones", ...).
  std::string module() const { return code_.substr(0, code_.find('.')); }

 private:
  std::string code_;
};

}  // namespace diffpos
