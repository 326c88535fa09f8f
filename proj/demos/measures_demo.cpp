// Apache License, Version 2.0, refer to LICENSE.txt

// The measures are plain functions over topic distributions, usable without
// training anything. A word whose mass moves from one topic to an even split
// shows up as a change-point in its bimodality sequence.

#include <cstdio>
#include <vector>

#include "diachron/measures.hpp"

int main() {
  using namespace diachron;
  const std::vector<std::vector<double>> phi = {
      {0.95, 0.03, 0.02}, {0.93, 0.05, 0.02}, {0.90, 0.08, 0.02},
      {0.52, 0.46, 0.02}, {0.50, 0.48, 0.02}, {0.49, 0.49, 0.02},
  };
  std::vector<double> scores;
  for (const auto& p : phi) scores.push_back(bimodality(p));
  for (std::size_t t = 0; t < scores.size(); ++t) std::printf("window %zu  bimodality %.3f\n", t, scores[t]);

  const auto cp = single_change_point(scores);
  std::printf("change-point at window %zu, delta %.3f\n", cp.cp_index, cp.delta);

  const std::vector<double> p = {0.7, 0.2, 0.1};
  const std::vector<double> q = {0.1, 0.2, 0.7};
  std::printf("jsd %.4f nats, %.4f bits\n", jsd(p, q), jsd(p, q, LogBase::two));
  return 0;
}
