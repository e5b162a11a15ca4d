#include "vito/nn/tensor.hpp"

#include <sys/mman.h>

#include <list>
#include <mutex>
#include <unordered_map>

namespace vito::nn::detail {

namespace {

constexpr std::size_t kHuge = std::size_t{2} << 20;
constexpr std::align_val_t kHugeAlign{kHuge};
// Freed blocks kept for reuse, up to about one 512^2 training step's working
// set. A step allocates the same sizes every time, and returning them to the
// kernel makes each step fault them back in (seconds per GiB under a VM).
constexpr std::size_t kCacheLimit = std::size_t{3} << 30;

struct BlockCache {
  std::mutex mutex;
  std::unordered_map<void*, std::size_t> live;      // pointer -> rounded bytes
  std::list<std::pair<void*, std::size_t>> idle;    // most recently freed first
  std::size_t idle_bytes = 0;
};

BlockCache& cache() {
  static BlockCache* c = new BlockCache;  // never destroyed: tensors may outlive statics
  return *c;
}

}  // namespace

void* allocate_large(std::size_t bytes) {
  const std::size_t rounded = (bytes + kHuge - 1) / kHuge * kHuge;
  BlockCache& c = cache();
  {
    std::lock_guard lock(c.mutex);
    // Smallest idle block that is large enough without wasting over a quarter.
    auto best = c.idle.end();
    for (auto it = c.idle.begin(); it != c.idle.end(); ++it)
      if (it->second >= rounded && it->second <= rounded + rounded / 4 &&
          (best == c.idle.end() || it->second < best->second))
        best = it;
    if (best != c.idle.end()) {
      void* p = best->first;
      c.idle_bytes -= best->second;
      c.live.emplace(p, best->second);
      c.idle.erase(best);
      return p;
    }
  }
  void* p = ::operator new(rounded, kHugeAlign);
  // Advisory only: failure leaves ordinary pages.
  madvise(p, rounded, MADV_HUGEPAGE);
  std::lock_guard lock(c.mutex);
  c.live.emplace(p, rounded);
  return p;
}

void deallocate_large(void* p) noexcept {
  BlockCache& c = cache();
  std::lock_guard lock(c.mutex);
  const auto it = c.live.find(p);
  const std::size_t rounded = it->second;
  c.live.erase(it);
  c.idle.emplace_front(p, rounded);
  c.idle_bytes += rounded;
  while (c.idle_bytes > kCacheLimit) {
    c.idle_bytes -= c.idle.back().second;
    ::operator delete(c.idle.back().first, kHugeAlign);
    c.idle.pop_back();
  }
}

}  // namespace vito::nn::detail
