#include "bbmlab/config.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "bbmlab/errors.hpp"
#include "bbmlab/sphere.hpp"
#include "defaults_embedded.hpp"

namespace bbmlab {

using nlohmann::json;

const json& default_config() {
    static const json d = json::parse(kDefaultsJson);
    return d;
}

namespace {

const char* type_name(const json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    if (v.is_object()) return "object";
    return "null";
}

bool compatible(const json& def, const json& v) {
    if (def.is_null()) return true;
    if (def.is_number()) return v.is_number();
    return std::string(type_name(def)) == type_name(v);
}

// Overlays `user` on `base` in place; `path` is the dotted prefix for messages.
void overlay(json& base, const json& user, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError(key, "unknown key");
        json& slot = base[it.key()];
        if (!compatible(slot, it.value()))
            throw ConfigError(key, std::string("expected ") + type_name(slot) + ", got " + type_name(it.value()));
        if (slot.is_object())
            overlay(slot, it.value(), key);
        else
            slot = it.value();
    }
}

}  // namespace

Config::Config() : doc_(default_config()) {}

Config Config::from_json(const json& user) {
    if (!user.is_object()) throw ConfigError("", "config document must be a JSON object");
    Config c;
    overlay(c.doc_, user, "");
    if (c.doc_.at("version") != default_config().at("version"))
        throw ConfigError("version", "unsupported config version");
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot open config file " + path);
    json user;
    try {
        user = json::parse(is, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("", "malformed config " + path + ": " + e.what());
    }
    return from_json(user);
}

const json& Config::at(const std::string& key) const {
    const json* node = &doc_;
    std::size_t pos = 0;
    while (pos <= key.size()) {
        const std::size_t dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!node->is_object() || !node->contains(part)) throw ConfigError(key, "missing key");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return *node;
}

double Config::num(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(key, "must be finite");
    return x;
}

std::int64_t Config::integer(const std::string& key) const {
    const double x = num(key);
    if (x != std::floor(x) || std::abs(x) > 9.0e15) throw ConfigError(key, "expected an integer");
    return std::int64_t(x);
}

std::uint64_t Config::count(const std::string& key) const {
    const std::int64_t v = integer(key);
    if (v < 1) throw ConfigError(key, "must be >= 1");
    return std::uint64_t(v);
}

bool Config::flag(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
    return v.get<bool>();
}

std::string Config::str(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    return v.get<std::string>();
}

std::vector<double> Config::nums(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError(key, "expected an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

std::vector<std::uint64_t> Config::counts(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (double x : nums(key)) {
        if (x < 1 || x != std::floor(x)) throw ConfigError(key, "expected positive integers");
        out.push_back(std::uint64_t(x));
    }
    return out;
}

void Config::set(const std::string& key, const json& value) {
    const json& cur = at(key);
    if (!compatible(cur, value)) throw ConfigError(key, "type mismatch in override");
    json* node = &doc_;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t dot = key.find('.', pos);
        node = &(*node)[key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos)];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    *node = value;
}

std::string Config::hash() const { return sha256_hex(doc_.dump()); }

Barrier barrier_from(const Config& c) {
    const std::string fam = c.str("barrier.family");
    const double A = c.num("barrier.A"), shift = c.num("barrier.shift_t");
    if (shift < 0) throw ConfigError("barrier.shift_t", "must be >= 0");
    Barrier b = Barrier::constant(A);
    if (fam == "constant") {
        b = Barrier::constant(A);
    } else if (fam == "power") {
        const double g = c.num("barrier.gamma"), a = c.num("barrier.a");
        if (!(g > 0.0 && g < 1.0)) throw ConfigError("barrier.gamma", "must lie in (0, 1)");
        if (a < 0) throw ConfigError("barrier.a", "must be >= 0");
        b = Barrier::power(A, a, g);
    } else if (fam == "log-plus" || fam == "log_plus") {
        const double beta = c.num("barrier.beta");
        if (beta < 0) throw ConfigError("barrier.beta", "must be >= 0");
        b = Barrier::log_plus(A, beta);
    } else {
        throw ConfigError("barrier.family", "unknown family '" + fam + "' (constant, power, log-plus)");
    }
    return shift > 0 ? b.shifted(shift) : b;
}

StepPolicy step_policy_from(const Config& c) {
    StepPolicy p;
    p.dt = c.num("estimator.dt");
    p.chord_tol = c.num("estimator.chord_tol");
    p.max_rel = c.num("estimator.max_rel");
    if (!(p.dt > 0)) throw ConfigError("estimator.dt", "must be > 0");
    if (!(p.chord_tol > 0)) throw ConfigError("estimator.chord_tol", "must be > 0");
    if (!(p.max_rel > 0)) throw ConfigError("estimator.max_rel", "must be > 0");
    return p;
}

REstimateConfig r_estimate_from(const Config& c) {
    REstimateConfig r;
    const std::string m = c.str("estimator.method");
    if (m == "novikov")
        r.method = RMethod::novikov;
    else if (m == "survival")
        r.method = RMethod::survival;
    else
        throw ConfigError("estimator.method", "expected novikov or survival");
    r.s_ladder = c.nums("estimator.s_ladder");
    if (r.s_ladder.empty()) throw ConfigError("estimator.s_ladder", "must not be empty");
    for (std::size_t i = 0; i < r.s_ladder.size(); ++i)
        if (!(r.s_ladder[i] > 0) || (i && r.s_ladder[i] <= r.s_ladder[i - 1]))
            throw ConfigError("estimator.s_ladder", "must be positive and increasing");
    r.ladder_tol = c.num("estimator.ladder_tol");
    r.n = c.count("estimator.n");
    r.policy = step_policy_from(c);
    r.horizon = c.num("estimator.novikov_horizon");
    if (!(r.horizon > 0)) throw ConfigError("estimator.novikov_horizon", "must be > 0");
    const std::string tail = c.str("estimator.tail");
    if (tail == "flat")
        r.tail = TailCorrection::flat;
    else if (tail == "bare")
        r.tail = TailCorrection::bare;
    else
        throw ConfigError("estimator.tail", "expected flat or bare");
    r.control_variate = c.flag("estimator.control_variate");
    return r;
}

EngineConfig engine_from(const Config& c) {
    EngineConfig e;
    const std::int64_t d = c.integer("engine.d");
    if (d < 1 || d > 64) throw ConfigError("engine.d", "must lie in [1, 64]");
    e.d = int(d);
    e.horizon = c.num("engine.horizon");
    if (e.horizon < 0) throw ConfigError("engine.horizon", "must be >= 0");
    e.checkpoints = c.nums("engine.checkpoints");
    for (std::size_t i = 0; i < e.checkpoints.size(); ++i)
        if (e.checkpoints[i] < 0 || e.checkpoints[i] > e.horizon || (i && e.checkpoints[i] <= e.checkpoints[i - 1]))
            throw ConfigError("engine.checkpoints", "must be increasing and lie in [0, horizon]");
    e.dt = c.num("engine.dt");
    if (!(e.dt > 0)) throw ConfigError("engine.dt", "must be > 0");
    e.population_cap = std::size_t(c.count("engine.population_cap"));
    const std::string k = c.str("engine.killing");
    if (k == "none") {
        e.killing = KillingMode::none;
    } else if (k == "radial") {
        e.killing = KillingMode::radial;
        e.barrier = barrier_from(c);
        e.radial_C = c.num("engine.radial_C");
    } else if (k == "directional") {
        e.killing = KillingMode::directional;
        e.barrier = barrier_from(c);
    } else {
        throw ConfigError("engine.killing", "expected none, radial or directional");
    }
    e.remove_shaved = c.flag("engine.remove_shaved");
    e.directional_bridge = c.flag("engine.directional_bridge");
    const std::int64_t count = c.integer("grid.count");
    if (count < 0) throw ConfigError("grid.count", "must be >= 0");
    e.grid = std::make_shared<SphereGrid>(
        make_sphere_grid(e.d, int(count), std::uint64_t(c.integer("grid.seed"))));
    return e;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return sha256_hex(ss.str());
}

}  // namespace bbmlab
