#pragma once

// Bundled experiment configs. The build generates crip_bundled_experiments.inc
// from experiments/*.json; each entry is {name, json text}.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "crip/cli/config.hpp"

namespace crip::cli {

struct BundledExperiment {
    std::string name;
    std::string text;

    ExperimentConfig config() const { return parse_config(text); }
    std::string description() const { return config().description; }
};

/// Bundled experiments in alphabetical order.
inline const std::vector<BundledExperiment>& bundled_experiments() {
    static const std::vector<BundledExperiment> all = [] {
        std::vector<BundledExperiment> v{
#if __has_include("crip_bundled_experiments.inc")
#include "crip_bundled_experiments.inc"
#endif
        };
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
        return v;
    }();
    return all;
}

inline std::optional<BundledExperiment> find_bundled(const std::string& name) {
    for (const auto& e : bundled_experiments())
        if (e.name == name) return e;
    return std::nullopt;
}

}  // namespace crip::cli
