#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "mmsyn/nets.hpp"

namespace mmsyn {

// Binary archive layout (little-endian):
//   "MMSYNCK1" | fingerprint | metadata JSON | tensor count |
//   { name | dtype | ndim | dims... | byte count | raw bytes }* | FNV-1a of everything before
// Strings are u64 length-prefixed. Tensors are stored contiguous on CPU.
struct Checkpoint {
    std::string fingerprint;
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws DataError on a truncated or corrupted archive.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Every parameter and buffer of the model, by qualified name.
std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module);

void save_params(const TranslationModel& model, const std::filesystem::path& path,
                 const nlohmann::json& metadata = nlohmann::json::object());
// Copies the archived tensors into `model`. Throws DataError naming both
// fingerprints when the archive was written for another architecture.
nlohmann::json load_params(TranslationModel& model, const std::filesystem::path& path);

}  // namespace mmsyn
