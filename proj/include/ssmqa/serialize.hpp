#pragma once

#include <string>
#include <string_view>

#include "ssmqa/tensor.hpp"

namespace ssmqa {

// Flat little-endian tensor blob:
//   "SSMT" | u8 dtype (1 = f64) | u32 ndim | i64 dims[ndim] | f64 data[numel]
std::string tensor_to_bytes(const Tensor& t);
// Throws CheckpointError on a bad magic, dtype, or length.
Tensor tensor_from_bytes(std::string_view bytes);

std::string read_file(const std::string& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view content);

} // namespace ssmqa
