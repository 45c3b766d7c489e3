// SPDX-License-Identifier: Apache-2.0
#include "dnls/tensor/memory.hpp"

namespace dnls::memory {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_limit{0};
}  // namespace

void record_alloc(std::size_t bytes) noexcept {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void record_free(std::size_t bytes) noexcept {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() noexcept { g_peak.store(g_current.load(std::memory_order_relaxed)); }

void set_limit(std::size_t bytes) noexcept { g_limit.store(bytes, std::memory_order_relaxed); }
std::size_t limit() noexcept { return g_limit.load(std::memory_order_relaxed); }

bool within_limit(std::size_t extra) noexcept {
  const std::size_t lim = limit();
  return lim == 0 || current_bytes() + extra <= lim;
}

}  // namespace dnls::memory
