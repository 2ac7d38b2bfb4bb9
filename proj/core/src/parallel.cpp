#include "tased/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string>
#include <string_view>
#include <thread>

#ifdef TASED_HAVE_OPENMP
#include <omp.h>
#endif

#include "tased/error.hpp"

namespace tased {

namespace {

std::size_t hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

}  // namespace

void set_thread_count(std::size_t n) {
  if (n == 0) n = hardware_threads();
#ifdef TASED_HAVE_OPENMP
  omp_set_num_threads(static_cast<int>(n));
#else
  (void)n;
#endif
}

std::size_t thread_count() {
#ifdef TASED_HAVE_OPENMP
  return static_cast<std::size_t>(omp_get_max_threads());
#else
  return 1;
#endif
}

std::size_t resolve_thread_count(std::optional<std::size_t> requested) {
  if (const char* env = std::getenv("TASED_THREADS"); env != nullptr && *env != '\0') {
    const std::string_view text(env);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec == std::errc() && end == text.data() + text.size() && v > 0) return v;
    throw ConfigError(std::string("TASED_THREADS must be a positive integer, got '") + env + "'");
  }
  if (requested && *requested > 0) return *requested;
  return hardware_threads();
}

}  // namespace tased
