#pragma once

#include <map>
#include <string>
#include <vector>

#include "ript/autodiff.hpp"
#include "ript/tokenizer.hpp"

namespace ript {

// Named-tensor archive: magic + version header, then per tensor the name,
// shape, and little-endian f32 values. Everything a run needs to resume is
// stored under namespaced keys ("student/...", "teacher/...", "opt/...").
inline constexpr char kCheckpointMagic[8] = {'R', 'I', 'P', 'T', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ad::Tensor<double>*>>& tensors);

std::map<std::string, ad::Tensor<double>> load_checkpoint(const std::string& path);

// Writes a feature table: u32 count, u32 dim, then count*dim little-endian
// f32 values in row-major order.
void save_features(const std::string& path, const std::vector<Eigen::VectorXd>& rows);
std::vector<Eigen::VectorXd> load_features(const std::string& path);

// Token-set record: u32 T, u32 D, then T*3 coords and T*D features as
// little-endian f32. Appends when the stream already holds records.
void append_token_set(std::ostream& out, const TokenSet& set);
std::vector<TokenSet> load_token_sets(const std::string& path);

}  // namespace ript
