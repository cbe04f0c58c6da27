#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditmos/data/dataset.hpp"
#include "ditmos/model/architecture.hpp"
#include "ditmos/train/config.hpp"

namespace ditmos::cli {

/// Bad flags, unknown subcommands and malformed config files.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Everything a command may read, resolved from defaults, then the JSON
/// config file, then explicit flags.
struct RunConfig {
    std::uint64_t seed = 0;
    data::SyntheticConfig synthetic;
    double train_ratio = 0.8;
    std::size_t m = 6;
    std::vector<std::size_t> selector_filters{8, 8, 4};
    std::vector<std::size_t> classifier_filters{8, 8, 4};
    std::size_t kernel_width = 5;
    std::size_t strong_epochs = 10;
    train::TrainConfig train;

    model::ArchitectureSpec architecture(const data::Dataset& data) const;
    nlohmann::json to_json() const;
};

/// Layout: {"seed", "data": {...}, "architecture": {...}, "strong_epochs",
/// "train": {...}}. Absent keys keep the values in `base`; unknown keys
/// throw UsageError.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});

/// Runs one subcommand given the arguments after the program name.
/// Returns 0 on success, 1 on usage errors and 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ditmos::cli
