#pragma once

#include <stdexcept>
#include <string>

namespace bbmlab {

/// Budget or capacity exhausted (population cap, rejection budget, all candidates dead).
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A measure or intensity that cannot be normalized.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration; `key` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& msg)
        : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

}  // namespace bbmlab
