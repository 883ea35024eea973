#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>

#include "cbfkit/linalg.hpp"

// Field access over nlohmann json that reports a dotted path on every
// failure, so config errors point at the offending entry.
namespace cbfkit::jsonutil {

using nlohmann::json;

inline json parse_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(what + ": " + e.what());
    }
}

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
    throw std::invalid_argument(path + ": " + msg);
}

inline const json& member(const json& j, const char* key, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) fail(path + "." + key, "missing");
    return *it;
}

inline const json* member_opt(const json& j, const char* key, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

inline double as_num(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

inline long as_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<long>();
}

inline bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    return j.get<bool>();
}

inline std::string as_str(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

inline Vec as_vec(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    Vec out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(as_num(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<int> as_int_vec(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of integers");
    std::vector<int> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(static_cast<int>(as_int(j[i], path + "[" + std::to_string(i) + "]")));
    return out;
}

inline double num_or(const json& j, const char* key, double dflt, const std::string& path) {
    const json* m = member_opt(j, key, path);
    return m ? as_num(*m, path + "." + key) : dflt;
}

inline long int_or(const json& j, const char* key, long dflt, const std::string& path) {
    const json* m = member_opt(j, key, path);
    return m ? as_int(*m, path + "." + key) : dflt;
}

inline bool bool_or(const json& j, const char* key, bool dflt, const std::string& path) {
    const json* m = member_opt(j, key, path);
    return m ? as_bool(*m, path + "." + key) : dflt;
}

inline std::string str_or(const json& j, const char* key, const std::string& dflt,
                          const std::string& path) {
    const json* m = member_opt(j, key, path);
    return m ? as_str(*m, path + "." + key) : dflt;
}

}  // namespace cbfkit::jsonutil
