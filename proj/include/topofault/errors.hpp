#pragma once

#include <stdexcept>
#include <string>

namespace topofault {

/// Base for all library errors; `stage()` names the pipeline step that raised it.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, std::string stage = {})
        : std::runtime_error(stage.empty() ? what : stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

class InvalidInput : public Error {
    using Error::Error;
};

class InsufficientData : public Error {
    using Error::Error;
};

class SynthesisInfeasible : public Error {
    using Error::Error;
};

class InferenceIncomplete : public Error {
    using Error::Error;
};

class SingularPotential : public Error {
    using Error::Error;
};

class ReservoirExplosion : public Error {
    using Error::Error;
};

class SchemaMismatch : public Error {
    using Error::Error;
};

}  // namespace topofault
