#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace qguide {

// Training allocates and frees many hidden-layer sized matrices per gradient
// step. Those sit just above glibc's default mmap threshold, so every one
// becomes an mmap/munmap pair. Keeping them on the heap removes most of the
// system time of a run.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace qguide
