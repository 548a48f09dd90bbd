#pragma once

#include <stdexcept>
#include <string>

namespace p2net {

// Exit-code classes used by the CLI: usage/config = 1, data = 2, numeric/runtime = 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace p2net
