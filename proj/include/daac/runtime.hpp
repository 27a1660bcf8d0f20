#pragma once

namespace daac {

// Keeps freed tensor buffers in the heap instead of returning them to the
// OS after every op. Training allocates and frees many mid-sized buffers per
// step, and the default glibc thresholds turn that into page-fault churn.
// No-op on other C libraries.
void tune_allocator();

}  // namespace daac
