// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <new>

namespace dnls::memory {

// Byte accounting for every numeric buffer the library allocates. Peak
// numbers reported by the benchmark harness come from here, not from RSS.
void record_alloc(std::size_t bytes) noexcept;
void record_free(std::size_t bytes) noexcept;

std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;

// Resets the peak to the current live byte count.
void reset_peak() noexcept;

// Tracked allocations that would push the live count above the limit throw
// std::bad_alloc. 0 disables the limit.
void set_limit(std::size_t bytes) noexcept;
std::size_t limit() noexcept;
bool within_limit(std::size_t extra) noexcept;

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    if (!within_limit(bytes)) throw std::bad_alloc();
    T* p = static_cast<T*>(::operator new(bytes));
    record_alloc(bytes);
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    record_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

// Scoped peak measurement: peak bytes above the live count at construction.
class PeakScope {
 public:
  PeakScope() noexcept : base_(current_bytes()) { reset_peak(); }
  std::size_t peak_above_base() const noexcept {
    const std::size_t p = peak_bytes();
    return p > base_ ? p - base_ : 0;
  }

 private:
  std::size_t base_;
};

}  // namespace dnls::memory
