#pragma once

#include <functional>

#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

/// Worker count for intra-operator parallelism. Defaults to the value of the
/// ECGCL_NUM_THREADS environment variable (1 when unset or invalid).
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). Work items must write disjoint memory, so the
/// result is independent of the worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

ECGCL_NAMESPACE_END
