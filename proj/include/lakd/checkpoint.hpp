#pragma once

#include <map>
#include <string>

#include "lakd/tensor.hpp"

namespace lakd {

/// Binary checkpoint: magic "LAKD", version u16, entry count u32, then per
/// entry: name length u16, UTF-8 name, ndim u8, dims as u32s, payload as
/// little-endian 32-bit floats.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace lakd
