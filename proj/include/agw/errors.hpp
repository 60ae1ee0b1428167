#pragma once

#include <stdexcept>
#include <string>

namespace agw {

// Bad caller input: shape mismatches, non-stochastic rows, malformed files.
// The command line tool maps this to exit code 3.
class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Computation left the supported numeric range: covariance not PSD beyond
// tolerance, singular matrix where a density is required, iteration blow-up.
// The command line tool maps this to exit code 4.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace agw
