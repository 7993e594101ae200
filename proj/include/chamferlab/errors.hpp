#pragma once

#include <stdexcept>
#include <string>

namespace chamferlab {

// Every failure raised by the library derives from Error so callers can
// catch the family while tests still distinguish the kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CHAMFERLAB_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

CHAMFERLAB_ERROR(DimensionError)
CHAMFERLAB_ERROR(ContractError)
CHAMFERLAB_ERROR(RangeError)
CHAMFERLAB_ERROR(FormatError)
CHAMFERLAB_ERROR(SpecError)
CHAMFERLAB_ERROR(SplitError)
CHAMFERLAB_ERROR(ScheduleError)
CHAMFERLAB_ERROR(TrainingError)
CHAMFERLAB_ERROR(ConfigError)
CHAMFERLAB_ERROR(ProjectorError)
CHAMFERLAB_ERROR(MetricError)
CHAMFERLAB_ERROR(NumericalError)

#undef CHAMFERLAB_ERROR

}  // namespace chamferlab
