/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <stdexcept>
#include <string>

namespace nexume {

enum class ErrorCode {
  invalid_argument,
  parse_error,
  empty_trace,
  non_monotonic_time,
  unknown_kernel_kind,
  invalid_bit_width,
  non_positive_scale,
  shape_mismatch,
  channel_count_mismatch,
  kernel_longer_than_input,
  accumulator_overflow,
  infeasible_budget,
  version_mismatch,
  corrupt_snapshot,
  starvation,
  non_finite_loss,
  non_finite_gradient,
  non_finite_hessian,
  too_many_neurons_for_exact,
  zero_iterations,
  empty_space,
  no_feasible_candidate,
  io_error,
  config_error,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

// One exception class per code keeps catch sites readable; all funnel
// through Error for the C boundary.
#define NEXUME_DEFINE_ERROR(Name, code_value)                      \
  class Name : public Error {                                      \
  public:                                                          \
    explicit Name(const std::string& what)                         \
        : Error(ErrorCode::code_value, what) {}                    \
  }

NEXUME_DEFINE_ERROR(InvalidArgument, invalid_argument);
NEXUME_DEFINE_ERROR(ParseError, parse_error);
NEXUME_DEFINE_ERROR(EmptyTrace, empty_trace);
NEXUME_DEFINE_ERROR(NonMonotonicTime, non_monotonic_time);
NEXUME_DEFINE_ERROR(UnknownKernelKind, unknown_kernel_kind);
NEXUME_DEFINE_ERROR(InvalidBitWidth, invalid_bit_width);
NEXUME_DEFINE_ERROR(NonPositiveScale, non_positive_scale);
NEXUME_DEFINE_ERROR(ShapeMismatch, shape_mismatch);
NEXUME_DEFINE_ERROR(ChannelCountMismatch, channel_count_mismatch);
NEXUME_DEFINE_ERROR(KernelLongerThanInput, kernel_longer_than_input);
NEXUME_DEFINE_ERROR(AccumulatorOverflow, accumulator_overflow);
NEXUME_DEFINE_ERROR(InfeasibleBudget, infeasible_budget);
NEXUME_DEFINE_ERROR(VersionMismatch, version_mismatch);
NEXUME_DEFINE_ERROR(CorruptSnapshot, corrupt_snapshot);
NEXUME_DEFINE_ERROR(Starvation, starvation);
NEXUME_DEFINE_ERROR(NonFiniteLoss, non_finite_loss);
NEXUME_DEFINE_ERROR(NonFiniteGradient, non_finite_gradient);
NEXUME_DEFINE_ERROR(NonFiniteHessian, non_finite_hessian);
NEXUME_DEFINE_ERROR(TooManyNeuronsForExact, too_many_neurons_for_exact);
NEXUME_DEFINE_ERROR(ZeroIterations, zero_iterations);
NEXUME_DEFINE_ERROR(EmptySpace, empty_space);
NEXUME_DEFINE_ERROR(NoFeasibleCandidate, no_feasible_candidate);
NEXUME_DEFINE_ERROR(IoError, io_error);
NEXUME_DEFINE_ERROR(ConfigError, config_error);

#undef NEXUME_DEFINE_ERROR

}  // namespace nexume
