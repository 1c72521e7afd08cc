// SPDX-License-Identifier: Apache-2.0
//
// Builds the alignment-corrected target for one position, trains a tiny
// student against it for a few steps and scores a decoded string.
#include <cmath>
#include <iomanip>
#include <iostream>
#include <vector>

#include "deltakd/delta_target.hpp"
#include "deltakd/losses.hpp"
#include "deltakd/rouge.hpp"

int main() {
  using namespace deltakd;
  // Two-token vocabulary: log-probabilities of the four models.
  const auto lp = [](double p) { return std::vector<double>{std::log(p), std::log(1.0 - p)}; };
  const auto student_raw = lp(0.6), teacher_raw = lp(0.4), teacher_ft = lp(0.5);
  std::vector<double> student = lp(0.5);

  std::cout << std::fixed << std::setprecision(6);
  for (double a : {0.0, 0.5, 1.0}) {
    const RoleQuad quad{student_raw, teacher_raw, teacher_ft, student};
    const auto target = synth_target(quad, Alpha{a});
    std::cout << "alpha=" << a << " target=[" << std::exp(target[0]) << ", " << std::exp(target[1]) << "]\n";
  }

  // Gradient descent on the student's logits towards the alpha=1 target.
  std::vector<double> logits{0.0, 0.0};
  for (int step = 0; step < 200; ++step) {
    student = log_softmax(logits);
    const auto pos = delta_kd_position({student_raw, teacher_raw, teacher_ft, student}, Alpha{1.0});
    const auto dz = logits_grad(pos.grad, student, Temperature{});
    for (std::size_t j = 0; j < logits.size(); ++j) logits[j] -= 1.0 * dz[j];
    if (step % 50 == 0) std::cout << "step=" << step << " kd_loss=" << std::scientific << pos.value << std::fixed << '\n';
  }
  std::cout << "student p(token0)=" << std::exp(log_softmax(logits)[0]) << '\n';

  const auto s = rouge_all("the cat sat", "the cat ran");
  std::cout << "rouge1_f=" << s.rouge1.f << " rouge2_f=" << s.rouge2.f << " rougeL_f=" << s.rougeL.f << '\n';
}
