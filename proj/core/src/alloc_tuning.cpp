// Training forwards allocate and free large transient buffers (activations,
// im2col scratch) on every step. By default glibc serves those from mmap and
// returns them to the kernel on free, which makes every reuse pay the page
// fault and zero-fill cost again. Keeping them in the arena removes that.

#if defined(__GLIBC__)
#include <malloc.h>

namespace {

struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
};

MallocTuning tuning_applied;

}  // namespace
#endif
