#pragma once

#include <stdexcept>
#include <string>

namespace arlab {

/// Base of every error raised by the library. The CLI maps any `Error` to
/// exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ARLAB_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

// token_core
ARLAB_DEFINE_ERROR(DuplicateToken);
ARLAB_DEFINE_ERROR(MissingReserved);
ARLAB_DEFINE_ERROR(LengthOverflow);
ARLAB_DEFINE_ERROR(InvalidToken);

// threshold_circuit
ARLAB_DEFINE_ERROR(ArityError);
ARLAB_DEFINE_ERROR(CycleError);
ARLAB_DEFINE_ERROR(NotSorted);
ARLAB_DEFINE_ERROR(CircuitError);
ARLAB_DEFINE_ERROR(RationalError);

// linear_ar / circuit_compiler
ARLAB_DEFINE_ERROR(EmptyEvaluation);
ARLAB_DEFINE_ERROR(VocabError);
ARLAB_DEFINE_ERROR(MarginError);
ARLAB_DEFINE_ERROR(ModelError);

// parity_lab
ARLAB_DEFINE_ERROR(SpecError);

// cot_datagen
ARLAB_DEFINE_ERROR(EmptyRequest);
ARLAB_DEFINE_ERROR(TokenizeError);
ARLAB_DEFINE_ERROR(RangeError);
ARLAB_DEFINE_ERROR(FormatError);

// trainer
ARLAB_DEFINE_ERROR(EmptyLoss);
ARLAB_DEFINE_ERROR(DivergenceError);

// experiment_cli
ARLAB_DEFINE_ERROR(ConfigError);
ARLAB_DEFINE_ERROR(IOError);

#undef ARLAB_DEFINE_ERROR

}  // namespace arlab
