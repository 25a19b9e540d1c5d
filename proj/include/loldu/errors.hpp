#pragma once

#include <stdexcept>
#include <string>

namespace loldu {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inner dimensions (or factor shapes) do not agree.
struct ShapeMismatch : Error {
  using Error::Error;
};

// A pivot fell below tolerance: the matrix is rank deficient beyond
// what the factorization will silently accept.
struct SingularPivot : Error {
  using Error::Error;
};

// Requested rank outside [1, min(m, n)].
struct RankOutOfRange : Error {
  using Error::Error;
};

// A gradient contained NaN/Inf; the optimizer refuses to apply it.
struct NonFiniteGradient : Error {
  using Error::Error;
};

// A training run produced a non-finite loss in a context where that
// cannot be recorded as a per-run flag.
struct Divergence : Error {
  using Error::Error;
};

// --- serialization ---

struct IoFailure : Error {
  using Error::Error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct CrcMismatch : Error {
  using Error::Error;
};
struct VersionUnsupported : Error {
  using Error::Error;
};
// Compact adapter loaded without the base weight matrix it needs.
struct MissingBase : Error {
  using Error::Error;
};
// The supplied base matrix is not the one the compact adapter was built from.
struct BaseMismatch : Error {
  using Error::Error;
};

// --- configuration / input parsing ---

struct ConfigError : Error {
  using Error::Error;
};
struct BadInput : Error {
  using Error::Error;
};

}  // namespace loldu
