#pragma once

// JSON conversions shared by profiles and session reports. Non-finite
// numbers are written as null and read back as NaN.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "soundcal/drc_model.hpp"
#include "soundcal/error.hpp"
#include "soundcal/signals.hpp"

namespace soundcal::json_io {

using nlohmann::json;

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double to_number(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw InvalidArgument("expected a number, got " + j.dump());
    return j.get<double>();
}

inline json array(std::span<const double> v) {
    json out = json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

inline std::vector<double> to_vector(const json& j) {
    if (!j.is_array()) throw InvalidArgument("expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& x : j) out.push_back(to_number(x));
    return out;
}

inline const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
    return j.at(key);
}

inline json response(const FrequencyResponse& r) {
    return {{"freq_hz", array(r.freq_hz)}, {"gain_db", array(r.gain_db)}, {"phase_rad", array(r.phase_rad)}};
}

inline FrequencyResponse to_response(const json& j) {
    FrequencyResponse r;
    r.freq_hz = to_vector(field(j, "freq_hz"));
    r.gain_db = to_vector(field(j, "gain_db"));
    if (j.contains("phase_rad")) r.phase_rad = to_vector(j.at("phase_rad"));
    r.validate();
    return r;
}

inline json drc(const DrcParams& p) {
    return {{"gain_db", number(p.gain_db)},
            {"T", number(p.threshold_db)},
            {"W", number(p.knee_width_db)},
            {"Q", number(p.compression_slope)},
            {"background_db", p.background_db ? number(*p.background_db) : json(nullptr)}};
}

inline DrcParams to_drc(const json& j) {
    DrcParams p;
    p.gain_db = to_number(field(j, "gain_db"));
    p.threshold_db = to_number(field(j, "T"));
    p.knee_width_db = to_number(field(j, "W"));
    p.compression_slope = to_number(field(j, "Q"));
    if (j.contains("background_db") && !j.at("background_db").is_null())
        p.background_db = to_number(j.at("background_db"));
    return p;
}

}  // namespace soundcal::json_io
