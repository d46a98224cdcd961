#pragma once

#include <cstdint>

namespace volformer {

/// Per-thread tally of arithmetic work done by primitive kernels:
/// multiply-accumulates for contractions, one per element otherwise.
std::uint64_t op_count();
void add_op_count(std::uint64_t ops);

class ScopedOpCount {
 public:
  ScopedOpCount() : start_(op_count()) {}
  std::uint64_t elapsed() const { return op_count() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace volformer
