#pragma once

#include <string>

#include "vicp/nn.hpp"

namespace vicp::ckpt {

// Tensor container: magic "VICPTNS1", little-endian uint32 header length, a
// JSON manifest {schema_version, frozen, entries:[{name, rows, cols}]}, then
// the raw float64 tensor data row-major in entry order, little-endian.
void save_store(const nn::ParamStore& store, const std::string& path);

// Loads values into an existing store; every entry must match by name and
// shape. Returns the file's frozen marker.
bool load_store(nn::ParamStore& store, const std::string& path);

}  // namespace vicp::ckpt
