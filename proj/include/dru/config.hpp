#pragma once

// Scalar type for all tensor math. The default engine is 32-bit; defining
// DRU_REAL_DOUBLE builds a 64-bit variant used only to tighten gradient-check
// tolerances in tests.
namespace dru {

#ifdef DRU_REAL_DOUBLE
using real_t = double;
#else
using real_t = float;
#endif

}  // namespace dru
