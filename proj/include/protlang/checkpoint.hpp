#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protlang/tensor.hpp"

namespace protlang {

// One entry of the PLPT checkpoint container.  Payloads are stored as f32
// regardless of the compute precision.
struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

// Layout (little endian): magic "PLPT", u32 version=1, u32 tensor count, then
// per tensor u32 name length, name bytes, u32 rank, u64 dims, f32 payload.
// Writes go to a temp file and are renamed over the target, so readers never
// observe a half-written checkpoint.
void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> load_checkpoint(const std::string& path);

template <class S>
TensorRecord to_record(const std::string& name, const Tensor<S>& t);

// Copies values into an existing tensor; shape must match exactly.
template <class S>
void assign_from_record(Tensor<S>& t, const TensorRecord& r);

// Applies every record matching a named parameter; unknown names in the file
// are ignored, missing parameters raise NotFoundError.
template <class S>
void load_into_params(const std::vector<TensorRecord>& records,
                      std::vector<NamedTensor<S>> params);

// Stable content hash of parameter values, for freezing checks.
template <class S>
std::uint64_t params_hash(const std::vector<NamedTensor<S>>& params);

}  // namespace protlang
