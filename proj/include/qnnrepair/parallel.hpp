#ifndef QNNREPAIR_PARALLEL_HPP_
#define QNNREPAIR_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qnnrepair
{

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be written by index;
/// the first exception thrown by any task is rethrown on the caller's thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn &&fn)
{
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1)
    {
        for (std::size_t i = 0; i < n; i++)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++)
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; w++)
        pool.emplace_back(run);
    pool.clear();
    if (error)
        std::rethrow_exception(error);
}

} // namespace qnnrepair

#endif // QNNREPAIR_PARALLEL_HPP_
