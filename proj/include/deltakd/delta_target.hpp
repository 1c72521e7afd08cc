// SPDX-License-Identifier: Apache-2.0
//
// Shift operator, synthetic target distribution and the parallel-variant
// table.
//
// The synthetic target at one position is
//
//   log pi*(y) = log pi_t^ft(y) + alpha * (log pi_s^raw(y) - log pi_t^raw(y)) - log Z
//
// with log Z the log-sum-exp of the unnormalized vector. A parallel variant
// replaces (pi_t^ft; pi_s^raw, pi_t^raw) by an arbitrary assignment of the four
// model roles to (target base; shift minuend, shift subtrahend) and names a
// fourth role as the distribution the target is compared against.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/numerics.hpp"

namespace deltakd {

/// Alignment intensity, in [0, 1].
class Alpha {
 public:
  explicit Alpha(double a = 1.0) : a_(a) {
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("alpha must lie in [0, 1], got " + std::to_string(a));
  }
  double value() const noexcept { return a_; }

 private:
  double a_;
};

enum class Role : std::uint8_t { SmallRaw, SmallTrainable, LargeRaw, LargeFt };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::SmallRaw: return "small-raw";
    case Role::SmallTrainable: return "small-trainable";
    case Role::LargeRaw: return "large-raw";
    case Role::LargeFt: return "large-ft";
  }
  return "?";
}

/// Log-probability rows of the four models at one position. Non-owning.
struct RoleQuad {
  std::span<const double> student_raw;
  std::span<const double> teacher_raw;
  std::span<const double> teacher_ft;
  std::span<const double> student_trainable;

  std::span<const double> row(Role r) const {
    switch (r) {
      case Role::SmallRaw: return student_raw;
      case Role::SmallTrainable: return student_trainable;
      case Role::LargeRaw: return teacher_raw;
      case Role::LargeFt: return teacher_ft;
    }
    return {};
  }

  void validate() const {
    const auto v = teacher_ft.size();
    if (v < 2 || student_raw.size() != v || teacher_raw.size() != v || student_trainable.size() != v) {
      throw DomainError("role quad rows must share one vocabulary of size >= 2");
    }
  }
};

/// Elementwise log(p1 / p2) of two log-probability rows.
inline std::vector<double> delta_shift(std::span<const double> numerator, std::span<const double> denominator) {
  if (numerator.size() != denominator.size()) throw DomainError("delta_shift length mismatch");
  std::vector<double> out(numerator.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = numerator[i] - denominator[i];
  return out;
}

/// Normalizes base + alpha * (minuend - subtrahend) in log space. When
/// `log_z` is given it receives the log partition function.
inline std::vector<double> shifted_target(std::span<const double> base, std::span<const double> minuend,
                                          std::span<const double> subtrahend, double alpha,
                                          double* log_z = nullptr) {
  if (base.size() != minuend.size() || base.size() != subtrahend.size()) {
    throw DomainError("shifted_target length mismatch");
  }
  std::vector<double> u(base.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = base[i] + alpha * (minuend[i] - subtrahend[i]);
  const double lz = log_sum_exp(u);
  for (double& v : u) v -= lz;
  if (log_z) *log_z = lz;
  return u;
}

/// log pi_s* for one position. The result is a frozen target.
inline std::vector<double> synth_target(const RoleQuad& quad, Alpha alpha, double* log_z = nullptr) {
  quad.validate();
  return shifted_target(quad.teacher_ft, quad.student_raw, quad.teacher_raw, alpha.value(), log_z);
}

enum class VariantId : std::uint8_t { V1 = 1, V2, V3, V4, V5, V6, V7, V8 };

struct VariantSpec {
  VariantId id;
  Role kl_student;
  Role target_base;
  Role shift_minuend;
  Role shift_subtrahend;
  bool tunable;

  bool uses_trainable_in_shift() const {
    return shift_minuend == Role::SmallTrainable || shift_subtrahend == Role::SmallTrainable;
  }
};

/// True iff the trainable role sits outside the shift term.
inline bool classify_tunability(Role kl_student, Role target_base, Role shift_minuend, Role shift_subtrahend) {
  const bool outside = kl_student == Role::SmallTrainable || target_base == Role::SmallTrainable;
  const bool inside = shift_minuend == Role::SmallTrainable || shift_subtrahend == Role::SmallTrainable;
  return outside && !inside;
}

inline bool classify_tunability(const VariantSpec& s) {
  return classify_tunability(s.kl_student, s.target_base, s.shift_minuend, s.shift_subtrahend);
}

inline constexpr std::array<VariantSpec, 8> kVariantTable{{
    {VariantId::V1, Role::SmallTrainable, Role::SmallRaw, Role::LargeFt, Role::LargeRaw, true},
    {VariantId::V2, Role::SmallTrainable, Role::LargeFt, Role::SmallRaw, Role::LargeRaw, true},
    {VariantId::V3, Role::LargeFt, Role::LargeRaw, Role::SmallTrainable, Role::SmallRaw, false},
    {VariantId::V4, Role::LargeFt, Role::SmallTrainable, Role::LargeRaw, Role::SmallRaw, true},
    {VariantId::V5, Role::SmallRaw, Role::LargeRaw, Role::SmallTrainable, Role::LargeFt, false},
    {VariantId::V6, Role::SmallRaw, Role::SmallTrainable, Role::LargeRaw, Role::LargeFt, true},
    {VariantId::V7, Role::LargeRaw, Role::LargeFt, Role::SmallRaw, Role::SmallTrainable, false},
    {VariantId::V8, Role::LargeRaw, Role::SmallRaw, Role::LargeFt, Role::SmallTrainable, false},
}};

inline const VariantSpec& variant_spec(VariantId id) {
  return kVariantTable[static_cast<std::size_t>(id) - 1];
}

inline std::string variant_name(VariantId id) { return "V" + std::to_string(static_cast<int>(id)); }

inline std::optional<VariantId> parse_variant(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'v' || s[0] == 'V') && s[1] >= '1' && s[1] <= '8') {
    return static_cast<VariantId>(s[1] - '0');
  }
  return std::nullopt;
}

/// One line per variant, `key=value` fields.
inline std::string variant_manifest() {
  std::ostringstream os;
  for (const auto& v : kVariantTable) {
    os << "id=" << variant_name(v.id) << " kl_student=" << role_name(v.kl_student)
       << " target_base=" << role_name(v.target_base) << " shift_minuend=" << role_name(v.shift_minuend)
       << " shift_subtrahend=" << role_name(v.shift_subtrahend) << " tunable=" << (v.tunable ? 1 : 0) << '\n';
  }
  return os.str();
}

inline void check_strict(const VariantSpec& spec, bool allow_nontunable) {
  if (!allow_nontunable && !classify_tunability(spec)) {
    throw DomainError("non-tunable variant " + variant_name(spec.id) +
                      " (trainable role inside the shift term); pass --allow-nontunable to run it anyway");
  }
}

struct ParallelTarget {
  std::vector<double> target;          ///< log-normalized target
  std::span<const double> kl_student;  ///< row the target is compared against
  double log_z = 0.0;
};

inline ParallelTarget parallel_target(const VariantSpec& spec, const RoleQuad& quad, Alpha alpha,
                                      bool allow_nontunable = false) {
  check_strict(spec, allow_nontunable);
  quad.validate();
  ParallelTarget out;
  out.target = shifted_target(quad.row(spec.target_base), quad.row(spec.shift_minuend),
                              quad.row(spec.shift_subtrahend), alpha.value(), &out.log_z);
  out.kl_student = quad.row(spec.kl_student);
  return out;
}

}  // namespace deltakd
