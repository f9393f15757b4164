#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "san/attention.hpp"
#include "san/blocks.hpp"

namespace san {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so gradients that are zero up
  // to rounding compare absolutely.
  double floor = 1e-4;
  std::uint64_t seed = 0;
};

struct CheckResult {
  std::string name;
  std::string shape;
  double max_error = 0;  // relative for gradchecks, absolute for oracles
  double tolerance = 0;
  Index compared = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

using GradFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares the tape gradient of sum(r * f(inputs)), r a fixed random
// projection, against central differences for every element of every input
// marked requires_grad.
CheckResult gradcheck(const std::string& name, const GradFunction& f, std::vector<Tensor<double>> inputs,
                      const GradCheckOptions& opt = {});

struct VerifyCase {
  std::string kind;      // primitive, pairwise, patchwise, scalar, conv, block, fixture
  std::string relation;  // relation / variant label, may be empty
  std::string name;
  std::function<CheckResult(std::uint64_t seed)> run;
};

// Every operator, relation, position mode and block at N=1, C=16, 5x5, k=3.
std::vector<VerifyCase> gradcheck_cases();
// An operator whose backward has the wrong sign; gradcheck must fail it.
VerifyCase faulty_gradient_case();
// Vectorized operator vs naive loops, `count` random configurations per kind.
std::vector<VerifyCase> oracle_cases(int count = 20);
// Permutation invariance, patchwise reproducing convolution, scalar vs
// pairwise dot, residual identity.
std::vector<VerifyCase> property_cases();

std::vector<VerifyCase> filter_cases(std::vector<VerifyCase> cases, const std::string& kind,
                                     const std::string& relation);

namespace reference {

// Direct per-pixel, per-slot loops in double precision. Out-of-map slots see
// zero transformed features, exactly like the vectorized operators.
Tensor<double> linear(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>& bias);
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& kernel, int stride, int pad);
Tensor<double> attention(const Tensor<double>& x, const AttentionParams<double>& p, const FootprintSpec& fp);

}  // namespace reference

// Fills every parameter of p with uniform values in [-scale, scale].
void randomize(AttentionParams<double>& p, std::uint64_t seed, double scale = 0.5);
Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0);

}  // namespace san
