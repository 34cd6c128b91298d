#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "evflow/autodiff.hpp"

namespace evflow {

// Single-file archive: "EVCK" magic, version, JSON manifest (config, seed),
// then named double tensors with shapes, all little-endian.
struct Checkpoint {
    nlohmann::json manifest;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                     const ad::ParamStore& ps);
Checkpoint load_checkpoint(const std::string& path);

// Overwrites store values from the archive; throws on missing names or shape
// mismatches.
void apply_checkpoint(const Checkpoint& ck, ad::ParamStore& ps);

// Accepts either the archive file itself or a directory containing
// checkpoint.evck.
std::string resolve_checkpoint_path(const std::string& path);

}  // namespace evflow
