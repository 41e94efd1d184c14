#pragma once

#include <stdexcept>
#include <string>

namespace sparsecot {

// Error taxonomy shared across the library. Each maps to a distinct failure
// class so callers (and the CLI exit-code mapping) can tell config mistakes
// apart from shape bugs and I/O trouble.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct VocabularyError : Error { using Error::Error; };
struct AdmissibilityError : Error { using Error::Error; };
struct NondifferentiableError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace sparsecot
