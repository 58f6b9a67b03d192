#pragma once

#include <cstddef>
#include <functional>

namespace cbct {

// Worker count used by every internally parallel operation. Defaults to
// std::thread::hardware_concurrency(); 0 restores the default.
void set_num_threads(unsigned n);
unsigned num_threads();

// Runs body(begin, end) over [0, n) split into contiguous blocks. Every
// index is visited exactly once; callers must only write outputs owned by
// the indices they receive, which keeps results independent of the
// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Runs task(i) for i in [0, count) with at most num_threads() in flight.
void parallel_tasks(std::size_t count, const std::function<void(std::size_t)>& task);

} // namespace cbct
