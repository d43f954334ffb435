#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cteinv {

/// Output of either attack for one CTE sequence.
struct ReconstructionResult {
  std::vector<std::int32_t> predicted_ids;
  std::string text;
  std::optional<std::vector<bool>> match_flags;
  bool hit_length_cap = false;  // generation stopped at max_output_len without EOS
};

/// A batch-level optimisation step summary.
struct StepResult {
  double loss_sum = 0;
  std::size_t correct = 0;
  std::size_t tokens = 0;
};

}  // namespace cteinv
