#pragma once

#include <string>

namespace acceptance {

struct GradientOutcome {
  double worst_relative_error = 0;
  std::string worst_parameter;
  std::size_t coordinates = 0;
  double seconds = 0;
};

// Full tokenizer objective in double precision, every coordinate of every
// trainable parameter against central differences at the given step.
GradientOutcome check_tokenizer_gradients(double eps);

}  // namespace acceptance
