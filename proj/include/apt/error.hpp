#pragma once

#include <stdexcept>
#include <string>

namespace apt {

// All recoverable failures are typed exceptions with a stable machine code.
// The CLI prints "<code>: <message>" on one line and exits nonzero.
class AptError : public std::runtime_error {
public:
    AptError(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

    std::string one_line() const { return code_ + ": " + what(); }

private:
    std::string code_;
};

// Operand shapes (or lengths) do not satisfy an operation's contract.
class ShapeError : public AptError {
public:
    explicit ShapeError(const std::string& message) : AptError("E_SHAPE", message) {}
};

// Mixed 32/64-bit operands.
class DtypeError : public AptError {
public:
    explicit DtypeError(const std::string& message) : AptError("E_DTYPE", message) {}
};

// A completed operation produced (or was fed) non-finite values.
class NumericError : public AptError {
public:
    explicit NumericError(const std::string& message) : AptError("E_NUMERIC", message) {}
};

// Token id outside the vocabulary, or tokenizer mismatch between models.
class VocabError : public AptError {
public:
    explicit VocabError(const std::string& message) : AptError("E_VOCAB", message) {}
};

// Invalid configuration file, plan, or checkpoint header.
class ConfigError : public AptError {
public:
    explicit ConfigError(const std::string& message) : AptError("E_CONFIG", message) {}
};

// Invalid runtime input to an operation (bad argument values rather than shapes).
class InvalidInputError : public AptError {
public:
    explicit InvalidInputError(const std::string& message) : AptError("E_INPUT", message) {}
};

// A configured compute budget would be exceeded.
class BudgetError : public AptError {
public:
    explicit BudgetError(const std::string& message) : AptError("E_BUDGET", message) {}
};

class IoError : public AptError {
public:
    explicit IoError(const std::string& message) : AptError("E_IO", message) {}
};

} // namespace apt
