#include "maxtbc/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "maxtbc/util.hpp"

namespace maxtbc {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

const std::vector<std::string>& Config::schema() {
    static const std::vector<std::string> keys = {
        "material.epsilon", "material.mu",
        "mesh.builtin", "mesh.divisions", "mesh.extents", "mesh.path",
        "mesh.arm_length", "mesh.thickness", "mesh.divisions_per_unit",
        "time.dt", "time.steps", "time.cfl_safety", "time.unsafe",
        "stabilization.alpha",
        "cq.contour_points", "cq.lambda", "cq.memory_cap_gb", "cq.cache_dir",
        "quadrature.regular_order", "quadrature.sauter_schwab_order",
        "quadrature.near_threshold",
        "source.kind", "source.center", "source.radius", "source.polarization",
        "source.amplitude", "source.frequency", "source.t0", "source.tau",
        "initial.kind", "initial.center", "initial.radius", "initial.polarization",
        "initial.amplitude",
        "boundary.mode",
        "outputs.dir",
        "runtime.threads", "runtime.seed",
    };
    return keys;
}

Config Config::parse(std::istream& is, const std::string& name) {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(name + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        const auto& keys = schema();
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            std::string best = keys.front();
            std::size_t best_d = edit_distance(key, best);
            for (const auto& k : keys) {
                std::size_t d = edit_distance(key, k);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            throw std::invalid_argument(name + ":" + std::to_string(lineno) +
                                        ": unknown config key '" + key + "' (did you mean '" +
                                        best + "'?)");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    return parse(is, path);
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" +
                                    it->second + "'");
    }
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" +
                                    it->second + "'");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" +
                                it->second + "'");
}

Vec3 Config::get_vec3(const std::string& key, const Vec3& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    std::replace(v.begin(), v.end(), ',', ' ');
    std::istringstream ss(v);
    Vec3 out;
    if (!(ss >> out[0] >> out[1] >> out[2]))
        throw std::invalid_argument("config: key '" + key + "' expects 'x,y,z', got '" +
                                    it->second + "'");
    return out;
}

std::string Config::hash() const {
    Fnv1a h;
    for (const auto& [k, v] : values_) {
        h.add(k);
        h.add(std::string("="));
        h.add(v);
        h.add(std::string("\n"));
    }
    return h.hex();
}

}  // namespace maxtbc
