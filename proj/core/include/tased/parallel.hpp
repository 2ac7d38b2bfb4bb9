#pragma once

#include <cstddef>
#include <optional>

namespace tased {

/// Worker threads used by kernels and by window/frame-level loops.
/// 0 selects the number of available cores.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// The effective thread count: TASED_THREADS when set, otherwise `requested`
/// if given, otherwise the number of available cores. A TASED_THREADS value
/// that is not a positive integer throws ConfigError.
std::size_t resolve_thread_count(std::optional<std::size_t> requested);

}  // namespace tased
