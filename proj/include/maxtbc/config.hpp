#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "maxtbc/mesh.hpp"

namespace maxtbc {

// Flat key-value configuration: one "key = value" per line, dotted section
// keys, '#' comments. Keys are validated against the schema; unknown keys
// report the nearest valid one.
class Config {
  public:
    static Config parse_file(const std::string& path);
    static Config parse(std::istream& is, const std::string& name);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    Vec3 get_vec3(const std::string& key, const Vec3& fallback) const;

    // FNV hash over the sorted normalized entries.
    std::string hash() const;
    const std::map<std::string, std::string>& entries() const { return values_; }

    static const std::vector<std::string>& schema();

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace maxtbc
