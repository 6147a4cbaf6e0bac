#include "emitterlab/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace emitterlab {

unsigned default_thread_count() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("EMITTERLAB_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap > 0 && static_cast<unsigned long>(cap) < n) {
        n = static_cast<unsigned>(cap);
      }
    } catch (const std::exception&) {
      // Unparseable values leave the default in place.
    }
  }
  return n;
}

ChunkRange chunk(std::size_t n, unsigned parts, unsigned index) {
  const std::size_t base = n / parts;
  const std::size_t extra = n % parts;
  const std::size_t begin = index * base + (index < extra ? index : extra);
  const std::size_t size = base + (index < extra ? 1 : 0);
  return {begin, begin + size};
}

}  // namespace emitterlab
