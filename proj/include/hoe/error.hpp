#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hoe {

enum class errc {
    invalid_input,
    rank_too_large,
    invalid_distribution,
    not_on_simplex,
    invalid_step,
    empty_registry,
    degenerate_simplex,
    incompatible_models,
    duplicate_expert,
    unknown_module,
    training_diverged,
    corrupt_checkpoint,
    invalid_config,
    io_failure,
};

inline std::string_view errc_name(errc code) {
    switch (code) {
    case errc::invalid_input: return "InvalidInput";
    case errc::rank_too_large: return "RankTooLarge";
    case errc::invalid_distribution: return "InvalidDistribution";
    case errc::not_on_simplex: return "NotOnSimplex";
    case errc::invalid_step: return "InvalidStep";
    case errc::empty_registry: return "EmptyRegistry";
    case errc::degenerate_simplex: return "DegenerateSimplex";
    case errc::incompatible_models: return "IncompatibleModels";
    case errc::duplicate_expert: return "DuplicateExpert";
    case errc::unknown_module: return "UnknownModule";
    case errc::training_diverged: return "TrainingDiverged";
    case errc::corrupt_checkpoint: return "CorruptCheckpoint";
    case errc::invalid_config: return "InvalidConfig";
    case errc::io_failure: return "IoFailure";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an `error` carrying a code.
class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool cond, errc code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace hoe
