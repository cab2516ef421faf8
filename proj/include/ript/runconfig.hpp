#pragma once

#include <string>
#include <vector>

#include "ript/sdmm.hpp"

namespace ript {

// Parsed structured-text run configuration ("key = value" lines, '#'
// comments). Every field is validated against module invariants before any
// work starts; unknown keys are rejected.
struct RunConfig {
    std::string dataset_manifest;
    std::string checkpoint_dir = "checkpoints";
    int checkpoint_every = 10;
    int workers = 0;  // 0 = library default

    TokenizerConfig tokenizer;
    TransformerConfig transformer;
    sdmm::SdmmConfig trainer;

    void validate() const;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<config>");

}  // namespace ript
