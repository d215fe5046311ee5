#pragma once

#include <stdexcept>
#include <string>

namespace mdae {

// Dimension disagreements between tensors or between a tensor and an op's
// requirements. The message names both sides.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse: consumed caches, uninitialized running stats, empty sets.
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed files (bad magic, version, truncation).
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses and other mid-training failures.
class training_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string dims_str(int n, int c, int h, int w) {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

}  // namespace mdae
