#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "topoformer/rng.hpp"
#include "topoformer/tape.hpp"
#include "topoformer/tensor.hpp"

namespace topoformer {

struct GradCheckEntry {
  std::size_t input_index;
  std::size_t element;
  double autodiff;
  double finite_diff;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> failures;  // entries exceeding the tolerance
  std::size_t checked = 0;

  bool ok() const { return failures.empty(); }
};

/// Compares reverse-mode gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h for the elements of every input. `f` must
/// rebuild its graph on the tape it is given and return a scalar loss.
/// Relative error uses a floored denominator so noise on near-zero
/// gradients does not register as failure. With `max_per_input` > 0, at
/// most that many elements per tensor are probed (seeded choice); large
/// models stay checkable in seconds without touching the math.
inline GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                                  std::vector<Tensor> inputs, double step, double tolerance,
                                  std::size_t max_per_input = 0,
                                  std::uint64_t sample_seed = 17) {
  if (step <= 0.0) throw ContractError("grad_check: step must be positive");
  GradCheckReport report;

  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);

  auto eval = [&f]() {
    Tape t;
    t.set_recording(false);
    return f(t).value();
  };

  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    Tensor& in = inputs[ii];
    const std::vector<double>& g = in.grad();
    std::vector<std::size_t> elements;
    if (max_per_input == 0 || in.size() <= max_per_input) {
      elements.resize(in.size());
      for (std::size_t e = 0; e < in.size(); ++e) elements[e] = e;
    } else {
      Rng rng(sample_seed + ii);
      std::vector<std::size_t> all(in.size());
      for (std::size_t e = 0; e < in.size(); ++e) all[e] = e;
      for (std::size_t k = 0; k < max_per_input; ++k) {
        const std::size_t j = k + rng.index(all.size() - k);
        std::swap(all[k], all[j]);
        elements.push_back(all[k]);
      }
    }
    for (std::size_t e : elements) {
      const double saved = in.data()[e];
      in.data()[e] = saved + step;
      const double up = eval();
      in.data()[e] = saved - step;
      const double down = eval();
      in.data()[e] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double ad = g[e];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-4});
      const double rel = std::fabs(ad - fd) / denom;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
      if (rel > tolerance) report.failures.push_back({ii, e, ad, fd, rel});
    }
  }
  return report;
}

}  // namespace topoformer
