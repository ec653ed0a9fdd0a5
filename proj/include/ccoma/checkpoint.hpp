#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ccoma/optim.hpp"

// Parameter checkpoint file:
//   magic "CCOMA\x01", then per parameter
//   [name_len u32 LE][name bytes][dtype u8: 0=f32 1=f64][rank u8]
//   [dims u32 LE each][raw little-endian values]
// Round-trips are bit-exact for either dtype (f32 values are exactly
// representable in the in-memory double storage).

namespace ccoma::checkpoint {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

void save(std::ostream& os, const ParamStore& params, Dtype dtype = Dtype::F64);
void save_file(const std::string& path, const ParamStore& params, Dtype dtype = Dtype::F64);

// Loads into an existing store: every record must match a parameter by name
// and dims, and every parameter must be covered. Returns the dtype found
// (files with mixed dtypes return the last record's).
Dtype load(std::istream& is, ParamStore& params);
Dtype load_file(const std::string& path, ParamStore& params);

}  // namespace ccoma::checkpoint
