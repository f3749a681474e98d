#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spikemix::detail {

// Large tensors would otherwise be fresh mmaps on every allocation, paying
// page-fault cost that grows with the buffer size.
inline void keep_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace spikemix::detail
