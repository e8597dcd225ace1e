// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dreamreader {

// Error conditions raised across the toolkit. Names mirror the failure
// modes of the public operations; tests match on the code, not the message.
enum class Errc {
    unknown_path,
    invalid_intervention,
    shape_mismatch,
    dim_mismatch,
    heterogeneous_records,
    io_failure,
    corrupt_header,
    truncated_body,
    count_mismatch,
    pairing_mismatch,
    missing_donor,
    empty_set,
    zero_direction,
    degenerate_labels,
    zero_gradient,
    rank_too_large,
    no_decrease,
    singular_system,
    index_out_of_range,
    non_psd,
    too_few_images,
    not_implemented,
    parse_error,
    unknown_key,
    type_error_for_key,
    empty_axis_values,
    mixed_workflows,
    job_error,
};

constexpr const char* errc_name(Errc c) {
    switch (c) {
        case Errc::unknown_path: return "UnknownPath";
        case Errc::invalid_intervention: return "InvalidIntervention";
        case Errc::shape_mismatch: return "ShapeMismatch";
        case Errc::dim_mismatch: return "DimMismatch";
        case Errc::heterogeneous_records: return "HeterogeneousRecords";
        case Errc::io_failure: return "IOFailure";
        case Errc::corrupt_header: return "CorruptHeader";
        case Errc::truncated_body: return "TruncatedBody";
        case Errc::count_mismatch: return "CountMismatch";
        case Errc::pairing_mismatch: return "PairingMismatch";
        case Errc::missing_donor: return "MissingDonor";
        case Errc::empty_set: return "EmptySet";
        case Errc::zero_direction: return "ZeroDirection";
        case Errc::degenerate_labels: return "DegenerateLabels";
        case Errc::zero_gradient: return "ZeroGradient";
        case Errc::rank_too_large: return "RankTooLarge";
        case Errc::no_decrease: return "NoDecrease";
        case Errc::singular_system: return "SingularSystem";
        case Errc::index_out_of_range: return "IndexOutOfRange";
        case Errc::non_psd: return "NonPSD";
        case Errc::too_few_images: return "TooFewImages";
        case Errc::not_implemented: return "NotImplemented";
        case Errc::parse_error: return "ParseError";
        case Errc::unknown_key: return "UnknownKey";
        case Errc::type_error_for_key: return "TypeErrorForKey";
        case Errc::empty_axis_values: return "EmptyAxisValues";
        case Errc::mixed_workflows: return "MixedWorkflows";
        case Errc::job_error: return "JobError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

  private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace dreamreader
