#pragma once

#include <stdexcept>
#include <string>

namespace odx {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual const char* kind() const noexcept { return "runtime"; }
};

/// Bad input or configuration. The CLI maps this to exit status 1.
class ValidationError : public Error {
public:
    using Error::Error;
    [[nodiscard]] const char* kind() const noexcept override { return "validation"; }
};

class IoError : public Error {
public:
    using Error::Error;
    [[nodiscard]] const char* kind() const noexcept override { return "io"; }
};

class TrainingError : public Error {
public:
    using Error::Error;
    [[nodiscard]] const char* kind() const noexcept override { return "training"; }
};

/// A chat endpoint could not be reached, or kept failing after all retries.
class TransportError : public Error {
public:
    TransportError(std::string instance_id, const std::string& what, bool transient = true)
        : Error(what), instance_id_(std::move(instance_id)), transient_(transient) {}

    [[nodiscard]] const std::string& instance_id() const noexcept { return instance_id_; }
    [[nodiscard]] bool transient() const noexcept { return transient_; }
    [[nodiscard]] const char* kind() const noexcept override { return "transport"; }

private:
    std::string instance_id_;
    bool transient_;
};

/// A model answer that does not follow the answer schema.
class ParseError : public Error {
public:
    explicit ParseError(std::string raw_text)
        : Error("unparseable model response: " + raw_text), raw_text_(std::move(raw_text)) {}

    [[nodiscard]] const std::string& raw_text() const noexcept { return raw_text_; }
    [[nodiscard]] const char* kind() const noexcept override { return "parse"; }

private:
    std::string raw_text_;
};

}  // namespace odx
