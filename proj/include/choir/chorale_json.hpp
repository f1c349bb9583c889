#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "choir/score.hpp"

namespace choir {

// JSON chorale schema, the canonical annotated on-disk format:
//   {"title": "...", "resolution": 4,
//    "steps": [{"chord": "C:maj", "S": 67, "A": 64, "T": 60, "B": 48}, ...]}
// null voice entries are rests.
inline GridScore score_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw data_error("chorale json: top level must be an object");

    GridScore score;
    if (doc.contains("title")) {
        if (!doc["title"].is_string()) throw data_error("chorale json: 'title' must be a string");
        score.title = doc["title"].get<std::string>();
    }
    if (!doc.contains("resolution") || !doc["resolution"].is_number_integer())
        throw data_error("chorale json: missing integer 'resolution'");
    score.resolution = doc["resolution"].get<int>();
    if (score.resolution != kGridResolution)
        throw data_error("chorale json: resolution must be " + std::to_string(kGridResolution) + ", got " +
                         std::to_string(score.resolution));
    if (!doc.contains("steps") || !doc["steps"].is_array())
        throw data_error("chorale json: missing 'steps' array");

    const auto& steps = doc["steps"];
    if (steps.empty()) throw data_error("chorale json: 'steps' must not be empty");
    score.steps.reserve(steps.size());

    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& js = steps[i];
        auto step_err = [&](const std::string& what) {
            return data_error("chorale json: step " + std::to_string(i) + ": " + what);
        };
        if (!js.is_object()) throw step_err("must be an object");
        if (!js.contains("chord") || !js["chord"].is_string()) throw step_err("missing chord string");

        GridStep step;
        try {
            step.chord = chord_from_string(js["chord"].get<std::string>());
        } catch (const data_error& e) {
            throw step_err(e.what());
        }
        for (int v = 0; v < kVoices; ++v) {
            const char* key = voice_name(v);
            if (!js.contains(key)) throw step_err(std::string("missing voice key '") + key + "'");
            const auto& jp = js[key];
            if (jp.is_null()) {
                step.voice(v) = kRest;
            } else if (jp.is_number_integer()) {
                int pitch = jp.get<int>();
                if (!pitch_in_range(pitch))
                    throw step_err(std::string("voice ") + key + " pitch " + std::to_string(pitch) +
                                   " outside [0,127]");
                step.voice(v) = pitch;
            } else {
                throw step_err(std::string("voice ") + key + " must be an integer or null");
            }
        }
        score.steps.push_back(step);
    }
    return score;
}

inline nlohmann::json score_to_json(const GridScore& score) {
    nlohmann::json doc;
    doc["title"] = score.title;
    doc["resolution"] = score.resolution;
    auto& steps = doc["steps"] = nlohmann::json::array();
    for (const GridStep& step : score.steps) {
        nlohmann::json js;
        js["chord"] = chord_to_string(step.chord);
        for (int v = 0; v < kVoices; ++v) {
            if (step.voice(v)) js[voice_name(v)] = *step.voice(v);
            else js[voice_name(v)] = nullptr;
        }
        steps.push_back(js);
    }
    return doc;
}

inline GridScore load_chorale_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error(std::string("chorale json: ") + e.what());
    }
    return score_from_json(doc);
}

inline std::string to_chorale_json(const GridScore& score) { return score_to_json(score).dump(2) + "\n"; }

}  // namespace choir
