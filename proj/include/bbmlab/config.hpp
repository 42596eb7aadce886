#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbmlab/barrier.hpp"
#include "bbmlab/bbm.hpp"
#include "bbmlab/killed_bm.hpp"

namespace bbmlab {

/// Built-in defaults (config/defaults.json, embedded at build time).
const nlohmann::json& default_config();

/// Experiment configuration: the defaults overlaid with a user document.
///
/// Every key of the user document must exist in the defaults with a compatible type; the first
/// offending key is reported as a dotted path through ConfigError. Typed accessors throw
/// ConfigError naming the key when a value is out of range.
class Config {
public:
    Config();  ///< defaults only
    static Config from_json(const nlohmann::json& user);
    static Config load(const std::string& path);

    const nlohmann::json& doc() const { return doc_; }

    double num(const std::string& key) const;
    std::int64_t integer(const std::string& key) const;
    std::uint64_t count(const std::string& key) const;  ///< integer >= 1
    bool flag(const std::string& key) const;
    std::string str(const std::string& key) const;
    std::vector<double> nums(const std::string& key) const;
    std::vector<std::uint64_t> counts(const std::string& key) const;

    /// Replaces a value (used for --seed / --workers overrides); the key must exist.
    void set(const std::string& key, const nlohmann::json& value);

    /// SHA-256 of the canonical (sorted, compact) dump.
    std::string hash() const;

private:
    const nlohmann::json& at(const std::string& key) const;
    nlohmann::json doc_;
};

Barrier barrier_from(const Config& c);
StepPolicy step_policy_from(const Config& c);
REstimateConfig r_estimate_from(const Config& c);
/// engine block; killing "directional" and "radial" take the barrier block.
EngineConfig engine_from(const Config& c);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

}  // namespace bbmlab
