#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace opeforge {

// Pipeline stage at which a run failed. The failure classifier in patch.hpp
// maps stages onto the reporting taxonomy, so every throw site picks the
// stage that describes *where* the run broke, not how severe it was.
enum class FailStage {
    parse,       // spec/diff text rejected before anything executed
    corruption,  // corruption detector fired on a proposed artifact
    transport,   // network/timeout while talking to an endpoint
    evaluation,  // valid inputs, but the evaluator aborted
};

class Error : public std::runtime_error {
public:
    Error(FailStage stage, std::string message)
        : std::runtime_error(std::move(message)), stage_(stage) {}

    FailStage stage() const noexcept { return stage_; }

private:
    FailStage stage_;
};

// Invalid spec text, invalid configuration, violated preconditions.
// Carries a 1-based line number when the problem is tied to a source line.
class SpecError : public Error {
public:
    explicit SpecError(std::string message, int line = 0)
        : Error(FailStage::parse, line > 0 ? message + " at line " + std::to_string(line)
                                           : std::move(message)),
          line_(line) {}

    int line() const noexcept { return line_; }  // 0 = no line attribution

private:
    int line_;
};

class CorruptionError : public Error {
public:
    explicit CorruptionError(std::string message)
        : Error(FailStage::corruption, std::move(message)) {}
};

class TransportError : public Error {
public:
    explicit TransportError(std::string message)
        : Error(FailStage::transport, std::move(message)) {}
};

class EvalError : public Error {
public:
    explicit EvalError(std::string message)
        : Error(FailStage::evaluation, std::move(message)) {}
};

// What the harness knows about a failed run: where it broke and the
// diagnostic text. This is the input to patch_engine's classifier.
struct RunDiagnostics {
    FailStage stage;
    std::string detail;
};

inline RunDiagnostics diagnose(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e))
        return {err->stage(), err->what()};
    // Anything not raised by the harness itself (filesystem, bad_alloc, ...)
    // is an environment problem, not a property of the candidate artifact.
    return {FailStage::transport, e.what()};
}

}  // namespace opeforge
