#ifndef ARC_COMMON_H
#define ARC_COMMON_H

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace arc {

// Resource handles are raw machine words (pointers, indices, packed ids).
// One word with all bits set is reserved as the "no value" marker and must
// never be used as a real handle.
template <typename T>
concept word_sized =
    std::is_trivially_copyable_v<T> && sizeof(T) == sizeof(uint64_t);

inline constexpr uint64_t kReservedWord = ~uint64_t{0};

template <word_sized T>
constexpr uint64_t to_word(T v) {
  return std::bit_cast<uint64_t>(v);
}

template <word_sized T>
constexpr T from_word(uint64_t w) {
  return std::bit_cast<T>(w);
}

template <word_sized T>
constexpr T reserved() {
  return from_word<T>(kReservedWord);
}

// Finalizer from splitmix64; used to key the per-pass count tables.
constexpr uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

namespace detail {

// Per-thread association between a manager object and that thread's
// registration with it. Managers are few, so a flat scan beats hashing.
struct tl_bind {
  static std::vector<std::pair<const void*, void*>>& entries() {
    thread_local std::vector<std::pair<const void*, void*>> e;
    return e;
  }
  static void bind(const void* key, void* val) {
    entries().emplace_back(key, val);
  }
  static void unbind(const void* key) {
    auto& e = entries();
    for (size_t i = 0; i < e.size(); i++) {
      if (e[i].first == key) {
        e[i] = e.back();
        e.pop_back();
        return;
      }
    }
  }
  static void* find(const void* key) {
    for (auto& [k, v] : entries())
      if (k == key) return v;
    return nullptr;
  }
  static void* require(const void* key, const char* who) {
    void* v = find(key);
    if (!v) throw std::logic_error(std::string(who) +
                                   ": calling thread is not registered");
    return v;
  }
};

}  // namespace detail
}  // namespace arc

#endif
