#pragma once

#include <stdexcept>
#include <string>

namespace metrik {

/// Bad configuration or malformed metadata (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent input data during ingestion.
class IngestError : public std::runtime_error {
public:
    explicit IngestError(const std::string& what) : std::runtime_error(what) {}
};

/// Evaluation could not be computed (e.g. no masked elements).
class EvalError : public std::runtime_error {
public:
    explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss (CLI exit code 4 when fatal).
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, int epoch) : std::runtime_error(what), epoch(epoch) {}
    int epoch;
};

/// Every requested design was infeasible; nothing could be evaluated
/// (CLI exit code 3).
class InfeasibleOnly : public std::runtime_error {
public:
    explicit InfeasibleOnly(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace metrik
