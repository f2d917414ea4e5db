#include "ffebm/parallel.hpp"

#include <cstdlib>
#include <future>
#include <string>

namespace ffebm {

std::size_t threads_from_env(std::size_t fallback) {
    const char* v = std::getenv("FFEBM_THREADS");
    if (!v || !*v) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long n = std::stoul(v, &pos);
        if (pos != std::string(v).size() || n == 0) return fallback;
        return n;
    } catch (const std::exception&) {
        return fallback;
    }
}

void run_both(const std::function<void()>& a, const std::function<void()>& b, bool concurrent) {
    if (!concurrent) {
        a();
        b();
        return;
    }
    auto fa = std::async(std::launch::async, a);
    std::exception_ptr err;
    try {
        b();
    } catch (...) {
        err = std::current_exception();
    }
    fa.get();
    if (err) std::rethrow_exception(err);
}

}  // namespace ffebm
