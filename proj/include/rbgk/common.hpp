#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace rbgk {

inline constexpr double kPi = 3.14159265358979323846;

// Bad dimensions, malformed config files, invalid preset values.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Floating-point trouble at runtime: non-finite values, division by zero,
// log of a nonpositive argument.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A state whose macroscopic moments are unphysical. Carries the offending
// values so training blow-ups surface with context.
struct degenerate_state_error : numeric_error {
  double rho;
  double temperature;
  degenerate_state_error(const std::string& msg, double rho_, double temperature_)
      : numeric_error(msg + " (rho=" + std::to_string(rho_) +
                      ", T=" + std::to_string(temperature_) + ")"),
        rho(rho_),
        temperature(temperature_) {}
};

// API misuse: calling ic_loss in steady mode, re-seeding an active trace, ...
struct usage_error : std::logic_error {
  using std::logic_error::logic_error;
};

inline double square(double x) { return x * x; }

// Scalar-type bridge for kernels templated on double / TracedScalar.
inline double value_of(double x) { return x; }

}  // namespace rbgk
