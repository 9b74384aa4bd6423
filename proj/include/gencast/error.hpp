#pragma once

#include <stdexcept>
#include <string>

namespace gencast {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or command-line input (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problems with input data files or their contents (CLI exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss (CLI exit code 4).
class DivergenceDetected : public Error {
public:
    using Error::Error;
};

#define GENCAST_DEFINE_ERROR(Name, Base) \
    class Name : public Base {           \
    public:                              \
        using Base::Base;                \
    }

// diffcore
GENCAST_DEFINE_ERROR(ShapeMismatch, Error);
GENCAST_DEFINE_ERROR(NonScalarOutput, Error);
GENCAST_DEFINE_ERROR(DetachedInput, Error);
GENCAST_DEFINE_ERROR(NonFiniteValue, Error);

// region_graph
GENCAST_DEFINE_ERROR(TooFewNodes, DataError);
GENCAST_DEFINE_ERROR(EmptySeries, DataError);
GENCAST_DEFINE_ERROR(InsufficientObserved, DataError);
GENCAST_DEFINE_ERROR(NoObservedNodes, DataError);
GENCAST_DEFINE_ERROR(NoNonPeakSamples, DataError);

// embeddings
GENCAST_DEFINE_ERROR(OutOfRangeCoordinate, DataError);
GENCAST_DEFINE_ERROR(LengthMismatch, DataError);
GENCAST_DEFINE_ERROR(MissingNode, DataError);
GENCAST_DEFINE_ERROR(DimensionMismatch, DataError);

// external_signals
GENCAST_DEFINE_ERROR(NoStations, DataError);

// st_model
GENCAST_DEFINE_ERROR(DivisibilityError, Error);

// losses
GENCAST_DEFINE_ERROR(EmptyMask, Error);
GENCAST_DEFINE_ERROR(BatchTooSmall, Error);
GENCAST_DEFINE_ERROR(GradUnavailable, Error);
GENCAST_DEFINE_ERROR(EmptyResiduals, Error);
GENCAST_DEFINE_ERROR(NonPositiveDelta, Error);
GENCAST_DEFINE_ERROR(NonFiniteTerm, Error);

// pipeline
GENCAST_DEFINE_ERROR(VersionMismatch, DataError);
GENCAST_DEFINE_ERROR(CorruptFile, DataError);
GENCAST_DEFINE_ERROR(MissingEmbedding, DataError);

// lwr_sim
GENCAST_DEFINE_ERROR(DensityOutOfRange, Error);
GENCAST_DEFINE_ERROR(CFLViolation, Error);
GENCAST_DEFINE_ERROR(SensorOutOfCorridor, ConfigError);

// evalcli
GENCAST_DEFINE_ERROR(ZeroVarianceTruth, Error);

#undef GENCAST_DEFINE_ERROR

}  // namespace gencast
