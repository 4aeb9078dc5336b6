#ifndef ARC_RECLAMATION_H
#define ARC_RECLAMATION_H

#include <atomic>
#include <cassert>
#include <memory>
#include <type_traits>
#include <utility>

#include "arc/acquire_retire.hpp"
#include "arc/common.hpp"

namespace arc {

// Deferred reclamation for lock-free structures built on the announce
// table. protected_read pins the pointer stored at a location for the
// duration of a callback; safe_free retires a pointer and destroys
// whatever earlier retirement has become safe. Where freed memory goes is
// the deleter's business: the default returns it to the heap, a pooled
// deleter can hand blocks back to an allocator instead.
//
// Threads register before use; the guard deregisters on destruction,
// draining that thread's deferred pointers through the deleter (this can
// wait on other threads' announcements).
template <typename T, typename Deleter = std::default_delete<T>>
class memory_reclaimer {
  using table = acquire_retire<T*>;

 public:
  explicit memory_reclaimer(int max_threads, int slots_per_thread = 1,
                            Deleter d = Deleter{}, int fast_path_tries = 0)
      : ar_(max_threads, slots_per_thread, fast_path_tries),
        del_(std::move(d)) {}

  class thread_guard {
   public:
    thread_guard(thread_guard&& o) noexcept
        : rec_(std::exchange(o.rec_, nullptr)), proc_(o.proc_) {}
    thread_guard& operator=(thread_guard&&) = delete;
    thread_guard(const thread_guard&) = delete;

    ~thread_guard() {
      if (!rec_) return;
      detail::tl_bind::unbind(rec_);
      rec_->ar_.deregister(*proc_,
                           [this](T* h) { rec_->del_(h); });
    }

    const typename table::process::op_stats& stats() const {
      return proc_->stats();
    }

   private:
    friend class memory_reclaimer;
    thread_guard(memory_reclaimer* rec, typename table::process* proc)
        : rec_(rec), proc_(proc) {}
    memory_reclaimer* rec_;
    typename table::process* proc_;
  };

  thread_guard register_thread() {
    auto& proc = ar_.register_process();
    detail::tl_bind::bind(this, &proc);
    return thread_guard(this, &proc);
  }

  // Runs f with the pointer currently stored at loc, which stays valid
  // (not freed) until f returns. f must not recursively occupy the same
  // announcement slot.
  template <typename F>
  auto protected_read(const std::atomic<T*>& loc, int slot, F&& f)
      -> std::invoke_result_t<F, T*> {
    auto& proc = self();
    T* p = proc.acquire(loc, slot);
    struct releaser {
      typename table::process& pr;
      int i;
      ~releaser() { pr.release(i); }
    } r{proc, slot};
    return std::forward<F>(f)(p);
  }

  template <typename F>
  auto protected_read(const std::atomic<T*>& loc, F&& f)
      -> std::invoke_result_t<F, T*> {
    return protected_read(loc, 0, std::forward<F>(f));
  }

  // protected_read over a location wider than one word. read() yields the
  // composite value, proj picks out the T* to pin, and f receives the
  // validated composite. Lock-free: the announce is retried until a read
  // is stable across it.
  template <typename V, typename ReadFn, typename ProjFn, typename F>
  auto protected_composite(ReadFn&& read, ProjFn&& proj, int slot, F&& f)
      -> std::invoke_result_t<F, V> {
    auto& proc = self();
    V v = proc.template acquire_composite<V>(std::forward<ReadFn>(read),
                                             std::forward<ProjFn>(proj),
                                             slot);
    struct releaser {
      typename table::process& pr;
      int i;
      ~releaser() { pr.release(i); }
    } r{proc, slot};
    return std::forward<F>(f)(v);
  }

  // Defers destruction of p until no protected_read window holds it, and
  // performs one constant-time step of that bookkeeping, destroying at
  // most one earlier pointer that has become safe.
  void safe_free(T* p) {
    assert(p != nullptr);
    auto& proc = self();
    proc.retire(p);
    if (auto h = proc.eject()) del_(*h);
  }

  // One collection step without retiring anything; destroys at most one
  // earlier pointer that has become safe.
  void collect_step() {
    auto& proc = self();
    if (auto h = proc.eject()) del_(*h);
  }

  // Deferred pointers across all threads; a racy census sample.
  size_t delayed() const { return ar_.total_delayed(); }

  int max_threads() const { return ar_.max_processes(); }

 private:
  typename table::process& self() {
    return *static_cast<typename table::process*>(
        detail::tl_bind::require(this, "memory_reclaimer"));
  }

  table ar_;
  Deleter del_;
};

}  // namespace arc

#endif
