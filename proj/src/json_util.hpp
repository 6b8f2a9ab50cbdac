#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "availnet/error.hpp"

namespace availnet::detail {

// Non-finite doubles are written as the strings "inf", "-inf" and "nan".
inline nlohmann::json number_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

// Reads keys of one JSON object into existing values, remembering which keys
// were consumed so that leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, double>) {
                out = to_double(*it, key);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError(path(key) + " must be true or false");
                out = it->template get<bool>();
            } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
                const bool ok = it->is_number_unsigned() || (it->is_number_integer() && it->template get<std::int64_t>() >= 0);
                if (!ok) throw ConfigError(path(key) + " must be a non-negative integer");
                out = it->template get<T>();
            } else {
                out = it->template get<T>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path(key) + ": " + e.what());
        }
    }

    template <class T>
    void require(const std::string& key, T& out) {
        if (!j_.contains(key)) throw ConfigError("missing required key " + path(key));
        read(key, out);
    }

    const nlohmann::json* sub(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown key " + path(key));
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

private:
    double to_double(const nlohmann::json& v, const std::string& key) const {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "inf") return INFINITY;
            if (s == "-inf") return -INFINITY;
            if (s == "nan") return NAN;
        }
        throw ConfigError(path(key) + " must be a number");
    }

    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace availnet::detail
