#pragma once

namespace mtpl {

/// Worker count used by the OpenMP kernels (defaults to the OpenMP runtime's).
int thread_count();
void set_thread_count(int n);

/// Below this many work items the OpenMP kernels run inline.
inline constexpr long kParallelThreshold = 4096;

}  // namespace mtpl
