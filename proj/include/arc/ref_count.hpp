#ifndef ARC_REF_COUNT_H
#define ARC_REF_COUNT_H

#include <atomic>
#include <cassert>
#include <cstdint>
#include <utility>
#include <vector>

#include "arc/reclamation.hpp"

namespace arc {

template <typename T>
class rc_ptr;

// Heap object carrying a reference count next to its payload. The count
// moves only by fetch-and-add; there is no compare-and-swap loop anywhere
// in the counting, so increments and decrements cannot be starved.
template <typename T>
class counted {
 public:
  template <typename... Args>
  explicit counted(Args&&... args) : value_(std::forward<Args>(args)...) {}

  // Returns the previous count.
  int64_t add_counter(int64_t d) { return count_.fetch_add(d); }
  int64_t count() const { return count_.load(); }

  T& value() { return value_; }
  const T& value() const { return value_; }

 private:
  std::atomic<int64_t> count_{0};
  T value_;
};

namespace detail {

// Dropping the last reference destroys the object, whose own rc_ptr
// members then drop more references. The cascade is flattened through a
// per-thread worklist: nested drops just park their object and return, so
// a chain of any length destructs in constant stack depth.
template <typename T>
void rc_decrement(counted<T>* o) {
  if (o == nullptr) return;
  if (o->add_counter(-1) != 1) return;
  thread_local std::vector<counted<T>*> worklist;
  thread_local bool draining = false;
  worklist.push_back(o);
  if (draining) return;
  draining = true;
  while (!worklist.empty()) {
    counted<T>* z = worklist.back();
    worklist.pop_back();
    delete z;
  }
  draining = false;
}

template <typename T>
struct rc_decrement_fn {
  void operator()(counted<T>* o) const { rc_decrement(o); }
};

}  // namespace detail

// Shared home for deferred decrements of counted<T> objects. A pointer
// overwritten in a concurrently-read cell cannot be decremented on the
// spot (a reader may sit between loading it and incrementing); it is
// retired here instead, and the decrement runs once no read window can
// hold it. One announcement slot per thread, at most kMaxThreads threads
// registered at a time.
template <typename T>
class rc_domain {
  using reclaimer =
      memory_reclaimer<counted<T>, detail::rc_decrement_fn<T>>;

 public:
  static constexpr int kMaxThreads = 64;

  using thread_guard = typename reclaimer::thread_guard;

  static rc_domain& instance() {
    static rc_domain d;
    return d;
  }

  // Number of announce-table probes an acquire makes before falling back
  // to the wait-free path. Takes effect only if called before the first
  // instance() in the process; afterwards it is ignored.
  static void set_fast_path_tries(int n) { pending_fast_tries().store(n); }

  // Register before copying, updating, or reading through shared rc_ptr
  // cells on this thread. The guard's destruction applies every decrement
  // this thread still has pending.
  thread_guard register_thread() { return rec_.register_thread(); }

  // Retired-but-not-yet-applied decrements across all threads.
  size_t delayed() const { return rec_.delayed(); }

 private:
  friend class rc_ptr<T>;
  rc_domain() : rec_(kMaxThreads, 1, {}, pending_fast_tries().load()) {}

  static std::atomic<int>& pending_fast_tries() {
    static std::atomic<int> n{0};
    return n;
  }

  reclaimer rec_;
};

// Reference-counted pointer whose cell may be read and overwritten
// concurrently. Reads (copies, with_ptr) pin the cell's target while they
// touch the count, so the increment can never land on freed memory;
// overwrites retire the old target instead of decrementing it inline.
//
// The rc_ptr instance itself is a single-owner value: destruction and
// move-assignment assume no concurrent operation on this instance, and
// decrement immediately.
template <typename T>
class rc_ptr {
 public:
  rc_ptr() = default;

  // Adopts a freshly constructed object (count zero) as its first
  // reference.
  explicit rc_ptr(counted<T>* fresh) {
    assert(fresh != nullptr && fresh->count() == 0);
    fresh->add_counter(1);
    p_.store(fresh, std::memory_order_relaxed);
  }

  template <typename... Args>
  static rc_ptr make(Args&&... args) {
    return rc_ptr(new counted<T>(std::forward<Args>(args)...));
  }

  // Copies whatever b holds at the acquire instant, incrementing inside
  // the protection window. b may be concurrently updated.
  rc_ptr(const rc_ptr& b) {
    counted<T>* got =
        dom().rec_.protected_read(b.p_, [](counted<T>* p) {
          if (p != nullptr) p->add_counter(1);
          return p;
        });
    p_.store(got, std::memory_order_relaxed);
  }

  rc_ptr(rc_ptr&& b) noexcept { p_.store(b.p_.exchange(nullptr)); }

  rc_ptr& operator=(rc_ptr&& b) noexcept {
    if (this != &b) detail::rc_decrement(p_.exchange(b.p_.exchange(nullptr)));
    return *this;
  }
  rc_ptr& operator=(const rc_ptr&) = delete;

  ~rc_ptr() { detail::rc_decrement(p_.load()); }

  // Replaces this cell's target with b's, taking b's count unit. The old
  // target is retired, and one collection step runs, applying at most one
  // decrement that has become safe.
  void update(rc_ptr b) {
    counted<T>* nv = b.p_.exchange(nullptr);
    counted<T>* old = p_.exchange(nv);
    if (old != nullptr) {
      dom().rec_.safe_free(old);
    } else {
      dom().rec_.collect_step();
    }
  }

  // Applies f to the current target (possibly null), which stays
  // unreclaimed while f runs. No count churn.
  template <typename F>
  auto with_ptr(F&& f) {
    return dom().rec_.protected_read(p_, std::forward<F>(f));
  }

  // Unprotected observer; meaningful only under this instance's
  // single-owner discipline.
  counted<T>* get() const { return p_.load(); }
  explicit operator bool() const { return get() != nullptr; }

 private:
  static rc_domain<T>& dom() { return rc_domain<T>::instance(); }

  std::atomic<counted<T>*> p_{nullptr};
};

}  // namespace arc

#endif
