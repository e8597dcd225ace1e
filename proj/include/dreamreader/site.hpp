// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "dreamreader/errors.hpp"

namespace dreamreader {

// Denoising-step subset an intervention or capture is active on. Always kept
// resolved: a non-empty, sorted, duplicate-free list of step indices.
struct TimestepSchedule {
    std::vector<int> selected;

    static TimestepSchedule all(int num_steps) {
        TimestepSchedule s;
        for (int t = 0; t < num_steps; ++t) s.selected.push_back(t);
        s.check();
        return s;
    }

    static TimestepSchedule list(std::vector<int> steps) {
        TimestepSchedule s{std::move(steps)};
        std::sort(s.selected.begin(), s.selected.end());
        s.selected.erase(std::unique(s.selected.begin(), s.selected.end()), s.selected.end());
        s.check();
        return s;
    }

    // Inclusive [first, last].
    static TimestepSchedule range(int first, int last) {
        TimestepSchedule s;
        for (int t = first; t <= last; ++t) s.selected.push_back(t);
        s.check();
        return s;
    }

    bool contains(int t) const {
        return std::binary_search(selected.begin(), selected.end(), t);
    }

    void check() const {
        require(!selected.empty(), Errc::invalid_intervention, "empty timestep schedule");
        require(selected.front() >= 0, Errc::invalid_intervention, "negative timestep index");
    }

    void validate(int num_steps) const {
        check();
        require(selected.back() < num_steps, Errc::invalid_intervention,
                "timestep " + std::to_string(selected.back()) + " >= num_steps " +
                    std::to_string(num_steps));
    }

    bool operator==(const TimestepSchedule&) const = default;
};

enum class TensorRole { output, input };

inline const char* role_name(TensorRole r) { return r == TensorRole::output ? "output" : "input"; }

// Addressable tensor location: dotted module path + tensor role + optional
// attention head + timestep subset.
struct HookSite {
    std::string path;
    TensorRole role = TensorRole::output;
    std::optional<int> head_index;
    TimestepSchedule schedule;

    bool operator==(const HookSite&) const = default;

    std::string display() const {
        std::string s = path;
        if (head_index) s += "#" + std::to_string(*head_index);
        if (role == TensorRole::input) s += "@input";
        return s;
    }
};

// Parses the declarative site form "path[#head][@input|@output]" used in
// configs and reports. The schedule is attached separately.
inline HookSite parse_site_string(const std::string& text, TimestepSchedule schedule) {
    HookSite site;
    site.schedule = std::move(schedule);
    std::string rest = text;
    auto at = rest.find('@');
    if (at != std::string::npos) {
        std::string role = rest.substr(at + 1);
        rest = rest.substr(0, at);
        if (role == "input")
            site.role = TensorRole::input;
        else if (role == "output")
            site.role = TensorRole::output;
        else
            fail(Errc::parse_error, "unknown tensor role '" + role + "' in site '" + text + "'");
    }
    auto hash = rest.find('#');
    if (hash != std::string::npos) {
        std::string idx = rest.substr(hash + 1);
        rest = rest.substr(0, hash);
        try {
            site.head_index = std::stoi(idx);
        } catch (const std::exception&) {
            fail(Errc::parse_error, "bad head index '" + idx + "' in site '" + text + "'");
        }
        require(*site.head_index >= 0, Errc::parse_error, "negative head index in '" + text + "'");
    }
    require(!rest.empty(), Errc::parse_error, "empty module path in site '" + text + "'");
    site.path = rest;
    return site;
}

}  // namespace dreamreader
