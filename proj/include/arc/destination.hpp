#ifndef ARC_DESTINATION_H
#define ARC_DESTINATION_H

#include <atomic>
#include <cassert>
#include <optional>

#include "arc/common.hpp"

namespace arc {

// Single-writer atomic copy cell.
//
// One owner may call write() and swcopy(); any thread may call read().
// swcopy(src) behaves as if the source word were read and deposited into
// the cell at a single instant, without locking the source. The trick is
// to publish the source address first: a concurrent reader that finds the
// cell mid-copy reads the source itself and tries to finish the copy, so
// the copy completes even if the owner stalls.
//
// The cell is a pair {data, old}. data packs a payload word together with
// a copying bit and is operated on with load-linked/store-conditional.
// Real LL/SC is emulated here with a double-width CAS: the upper word
// carries the copying bit plus a 63-bit modification tag that every
// successful SC and every owner store bumps, so a stale SC can never
// succeed (the tag would have to repeat, which does not happen in any
// feasible run). Under this emulation the weak LL always returns a value;
// the empty-LL retry branch in read() is therefore never taken, but the
// shape of the algorithm is kept.
//
// old holds the payload the cell had before the copy in flight began. A
// reader whose SC loses the race to finish a copy returns old: its read
// then sits just before the copy in the linearization order.
//
// All atomic operations use the default sequentially consistent ordering.
template <word_sized T>
class destination {
 public:
  explicit destination(T initial = reserved<T>()) {
    data_.store(repr{to_word(initial), 0});
    old_.store(to_word(initial));
  }

  destination(const destination&) = delete;
  destination& operator=(const destination&) = delete;

  // Any thread.
  T read() const {
    std::optional<repr> c = ll_weak();
    if (!c) {
      c = ll_weak();
      if (!c) return from_word<T>(old_.load());
    }
    if (c->hi & kCopying) {
      auto* src = std::bit_cast<const std::atomic<T>*>(c->lo);
      uint64_t val = to_word(src->load());
      if (sc(*c, repr{val, hi_word(tag_of(c->hi) + 1, false)}))
        return from_word<T>(val);
      return from_word<T>(old_.load());
    }
    return from_word<T>(c->lo);
  }

  // Owner only. Plain store of a new value; settles any pending SC by
  // bumping the tag.
  void write(T v) {
    repr cur = data_.load();
    assert(!(cur.hi & kCopying) && "owner ops always find the cell settled");
    data_.store(repr{to_word(v), hi_word(tag_of(cur.hi) + 1, false)});
  }

  // Owner only. Atomically copies the current value of src into the cell.
  void swcopy(const std::atomic<T>& src) {
    repr cur = data_.load();
    assert(!(cur.hi & kCopying) && "owner ops always find the cell settled");
    old_.store(cur.lo);
    uint64_t t = tag_of(cur.hi) + 1;
    repr in_flight{std::bit_cast<uint64_t>(&src), hi_word(t, true)};
    data_.store(in_flight);
    uint64_t val = to_word(src.load());
    // If this fails, a reader already finished the copy for us.
    sc(in_flight, repr{val, hi_word(t + 1, false)});
  }

 private:
  struct repr {
    uint64_t lo;  // payload word, or source address while copying
    uint64_t hi;  // (tag << 1) | copying
  };
  static constexpr uint64_t kCopying = 1;
  static constexpr uint64_t tag_of(uint64_t hi) { return hi >> 1; }
  static constexpr uint64_t hi_word(uint64_t tag, bool copying) {
    return (tag << 1) | (copying ? kCopying : 0);
  }

  // Weak LL: may spuriously report no value in a native implementation.
  // The tagged-CAS emulation always returns the current pair.
  std::optional<repr> ll_weak() const { return data_.load(); }

  // SC paired with the LL that produced `linked`: succeeds only if no
  // other successful SC or owner store intervened.
  bool sc(repr linked, repr desired) const {
    return data_.compare_exchange_strong(linked, desired);
  }

  alignas(16) mutable std::atomic<repr> data_;
  mutable std::atomic<uint64_t> old_;
};

}  // namespace arc

#endif
