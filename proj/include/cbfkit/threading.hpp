#pragma once

#include <cstddef>
#include <functional>

namespace cbfkit {

// Worker count for block-parallel loops: CBF_KIT_THREADS if set (clamped to
// >= 1), otherwise hardware concurrency. Read once per process.
std::size_t worker_count();

// Runs fn(0..count-1), distributing blocks over workers. Each block must write
// only to its own slot; callers reduce serially in block order afterwards, so
// results never depend on the worker count. Exceptions from fn are rethrown.
void parallel_blocks(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace cbfkit
