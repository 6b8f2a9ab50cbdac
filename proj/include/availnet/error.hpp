#pragma once

#include <stdexcept>
#include <string>

namespace availnet {

// Every failure surfaced by the library carries a short machine-readable
// category; the CLI prints it as the first token of its error line.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error("data", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

struct CorruptionError : Error {
    explicit CorruptionError(const std::string& what) : Error("corrupt", what) {}
};

struct UnsupportedVersionError : Error {
    explicit UnsupportedVersionError(const std::string& what) : Error("unsupported-version", what) {}
};

struct ArtifactTypeError : Error {
    explicit ArtifactTypeError(const std::string& what) : Error("artifact-type", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace availnet
