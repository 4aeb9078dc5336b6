#ifndef ARC_WEAK_ATOMIC_H
#define ARC_WEAK_ATOMIC_H

#include <atomic>
#include <cassert>
#include <concepts>
#include <cstddef>
#include <optional>
#include <utility>

#include "arc/acquire_retire.hpp"
#include "arc/common.hpp"

namespace arc {

// Describes how values of T behave as owned resources:
//
//   copy(v)     duplicates v; concurrent copies of one value must be safe
//   destruct(v) releases v; destruct(empty()) must be a no-op
//   empty()     the distinguished "nothing here" value
//
// A policy is race-free safe when a copy never has to run concurrently
// with the destruct of the value it is copying. weak_atomic guarantees
// exactly that separation, so any race-free safe policy may be used:
// plain heap boxes, deep-copied buffers, reference-counted handles.
template <typename P, typename T>
concept ownership_policy = requires(T v) {
  { P::copy(v) } -> std::same_as<T>;
  P::destruct(v);
  { P::empty() } -> std::same_as<T>;
};

// Shared announce table for all weak_atomic cells with one value type and
// policy. Threads register before calling load, store, or
// compare_exchange; the guard deregisters on destruction and applies the
// policy destruct to every value the thread still had parked.
template <typename T, typename Policy>
  requires word_sized<T> && ownership_policy<Policy, T>
class wa_domain {
  using table = acquire_retire<T>;

 public:
  static constexpr int kMaxThreads = 64;

  class thread_guard {
   public:
    thread_guard(thread_guard&& o) noexcept
        : dom_(std::exchange(o.dom_, nullptr)), proc_(o.proc_) {}
    thread_guard& operator=(thread_guard&&) = delete;
    thread_guard(const thread_guard&) = delete;

    ~thread_guard() {
      if (!dom_) return;
      detail::tl_bind::unbind(dom_);
      dom_->ar_.deregister(*proc_, [](T v) { Policy::destruct(v); });
    }

    const typename table::process::op_stats& stats() const {
      return proc_->stats();
    }

   private:
    friend class wa_domain;
    thread_guard(wa_domain* dom, typename table::process* proc)
        : dom_(dom), proc_(proc) {}
    wa_domain* dom_;
    typename table::process* proc_;
  };

  static wa_domain& instance() {
    static wa_domain d;
    return d;
  }

  // Number of announce-table probes an acquire makes before falling back
  // to the wait-free path. Takes effect only if called before the first
  // instance() in the process; afterwards it is ignored.
  static void set_fast_path_tries(int n) { pending_fast_tries().store(n); }

  thread_guard register_thread() {
    auto& proc = ar_.register_process();
    detail::tl_bind::bind(this, &proc);
    return thread_guard(this, &proc);
  }

  // Values whose destruct is still parked, across all threads; a racy
  // census sample.
  size_t delayed() const { return ar_.total_delayed(); }

 private:
  template <typename U, typename P>
    requires word_sized<U> && ownership_policy<P, U>
  friend class weak_atomic;

  wa_domain() : ar_(kMaxThreads, 1, pending_fast_tries().load()) {}

  static std::atomic<int>& pending_fast_tries() {
    static std::atomic<int> n{0};
    return n;
  }

  typename table::process& self() {
    return *static_cast<typename table::process*>(
        detail::tl_bind::require(this, "wa_domain"));
  }

  table ar_;
};

// A mutable cell holding one owned value, safe to load and overwrite from
// many threads at once. The cell owns its current value: store and
// compare_exchange destruct the value they displace (deferred until no
// load still reads it), the destructor destructs whatever remains, and
// load hands back an independent policy-copy. exchange transfers the old
// value out instead, obligation included, and never defers anything.
//
// T must occupy exactly one machine word; a wider payload is stored
// boxed, behind a pointer the policy copies and frees. The all-ones bit
// pattern is reserved by the announce table and must never be stored.
//
// load, store, and compare_exchange require a live thread_guard from
// this cell's domain. The constructor, destructor, exchange, and take
// run unregistered.
template <typename T, typename Policy>
  requires word_sized<T> && ownership_policy<Policy, T>
class weak_atomic {
 public:
  using domain = wa_domain<T, Policy>;

  explicit weak_atomic(T v = Policy::empty()) : p_(v) {
    assert(!reserved(v));
  }

  weak_atomic(const weak_atomic&) = delete;
  weak_atomic& operator=(const weak_atomic&) = delete;

  ~weak_atomic() { Policy::destruct(p_.load()); }

  // Returns a copy of the value present at some instant during the call.
  // The source value cannot be destructed while it is being copied.
  T load() const {
    auto& proc = domain::instance().self();
    T v = proc.acquire(p_, 0);
    releaser r{proc};
    return Policy::copy(v);
  }

  // Installs v and schedules the displaced value for destruction once no
  // in-flight load still holds it. Runs one collection step first, so a
  // long run of stores destructs as it goes.
  void store(T v) {
    assert(!reserved(v));
    auto& proc = domain::instance().self();
    if (auto e = proc.eject()) Policy::destruct(*e);
    dispose(proc, p_.exchange(v));
  }

  // On success, installs desired and retires the displaced value exactly
  // like store. On failure, writes the current value into expected; no
  // ownership changes hands.
  bool compare_exchange(T& expected, T desired) {
    assert(!reserved(desired));
    auto& proc = domain::instance().self();
    if (auto e = proc.eject()) Policy::destruct(*e);
    T old = expected;
    if (!p_.compare_exchange_strong(old, desired)) {
      expected = old;
      return false;
    }
    dispose(proc, old);
    return true;
  }

  // Swaps v in and returns the prior value with its destruct obligation;
  // the caller now owns it. Nothing is deferred.
  T exchange(T v) {
    assert(!reserved(v));
    return p_.exchange(v);
  }

  // Empties the cell, returning the prior value and its obligation.
  T take() { return exchange(Policy::empty()); }

 private:
  using table = acquire_retire<T>;

  struct releaser {
    typename table::process& pr;
    ~releaser() { pr.release(0); }
  };

  static bool reserved(T v) { return to_word(v) == kReservedWord; }

  // The empty value carries no obligation, so it is dropped rather than
  // retired; everything else waits its turn in the announce table.
  static void dispose(typename table::process& proc, T old) {
    if (to_word(old) != to_word(Policy::empty())) proc.retire(old);
  }

  std::atomic<T> p_;
};

}  // namespace arc

#endif
