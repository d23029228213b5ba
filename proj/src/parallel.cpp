#include "qpkpd/parallel.hpp"

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qpkpd {

void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& body) {
    if (n == 0)
        return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    if (workers > n)
        workers = static_cast<unsigned>(n);

    std::mutex err_mutex;
    std::size_t first_err_index = n;
    std::exception_ptr first_err;

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (i < first_err_index) {
                        first_err_index = i;
                        first_err = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (first_err)
        std::rethrow_exception(first_err);
}

} // namespace qpkpd
