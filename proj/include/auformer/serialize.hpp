#pragma once

#include <string>
#include <utility>
#include <vector>

#include "auformer/tensor.hpp"

namespace auf {

using NamedTensors = std::vector<std::pair<std::string, Tensor32>>;

// "AUFW" container: u16 version, u32 tensor count, then per tensor
// (u16 name length, utf-8 name, u8 rank, u32 dims), then contiguous f32
// payloads in header order. Little-endian throughout.
void save_tensors(const std::string& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::string& path);

// "AUTD" single-tensor sample file: u16 version, u8 rank, u32 dims, f32
// payload row-major.
void write_sample_tensor(const std::string& path, const Tensor32& t);
Tensor32 read_sample_tensor(const std::string& path);

}  // namespace auf
