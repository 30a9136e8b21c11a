#include "dgnet/threading.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <string>

#include <omp.h>

#include "dgnet/errors.hpp"

namespace dgnet {

int configure_threads()
{
    if (const char* env = std::getenv("DGNET_THREADS"); env != nullptr && *env != '\0') {
        int n = 0;
        const char* end = env + std::strlen(env);
        const auto [ptr, ec] = std::from_chars(env, end, n);
        if (ec != std::errc() || ptr != end || n < 1) {
            throw ConfigError(std::string("DGNET_THREADS must be a positive integer, got '") + env + "'");
        }
        omp_set_num_threads(n);
    }
    return omp_get_max_threads();
}

} // namespace dgnet
