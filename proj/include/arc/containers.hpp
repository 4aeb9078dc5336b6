#ifndef ARC_CONTAINERS_H
#define ARC_CONTAINERS_H

#include <atomic>
#include <cassert>
#include <cstdint>
#include <new>
#include <optional>
#include <utility>

#include "arc/block_pool.hpp"
#include "arc/common.hpp"
#include "arc/reclamation.hpp"

namespace arc {

namespace detail {

// Cells go back to the block pool when the container was built over one,
// otherwise to the heap.
template <typename Node>
struct cell_delete {
  block_pool* pool = nullptr;
  void operator()(Node* n) const {
    if (pool != nullptr) {
      n->~Node();
      pool->free_block(n);
    } else {
      delete n;
    }
  }
};

// Joint registration with the cell pool (when present) and the reclaimer.
// The reclaimer half is released first so that draining deferred cells can
// still hand blocks back to the pool.
template <typename Reclaimer>
class container_guard {
 public:
  container_guard(std::optional<block_pool::thread_guard> pg,
                  typename Reclaimer::thread_guard rg)
      : pool_g_(std::move(pg)), rec_g_(std::move(rg)) {}
  container_guard(container_guard&&) noexcept = default;
  container_guard(const container_guard&) = delete;
  container_guard& operator=(container_guard&&) = delete;

  const auto& reclaim_stats() const { return rec_g_.stats(); }

 private:
  std::optional<block_pool::thread_guard> pool_g_;
  typename Reclaimer::thread_guard rec_g_;
};

}  // namespace detail

// Lock-free LIFO stack of word-sized values. Cells are freed through the
// reclaimer, so a cell can never be recycled while another thread still
// holds it inside a read window; that rules out the classic compare-and-
// swap-on-recycled-address failure without tagging the head pointer.
//
// peek runs in a constant number of steps: one protected read of the head
// and one field load, with no retry loop.
template <typename T>
class lf_stack {
  static_assert(word_sized<T>);

  struct cell {
    T value;
    cell* next;
  };
  using reclaimer = memory_reclaimer<cell, detail::cell_delete<cell>>;

 public:
  using thread_guard = detail::container_guard<reclaimer>;

  // Cells come from pool when given (its blocks must fit a cell),
  // otherwise from the heap. fast_path_tries tunes the reclaimer's
  // announce fast path.
  explicit lf_stack(int max_threads, block_pool* pool = nullptr,
                    int fast_path_tries = 0)
      : rec_(max_threads, 1, detail::cell_delete<cell>{pool},
             fast_path_tries),
        pool_(pool) {
    assert(pool == nullptr || pool->block_size() >= sizeof(cell));
  }

  lf_stack(const lf_stack&) = delete;
  lf_stack& operator=(const lf_stack&) = delete;

  // Requires that every thread_guard has been destroyed.
  ~lf_stack() {
    std::optional<block_pool::thread_guard> pg;
    if (pool_ != nullptr) pg.emplace(pool_->register_thread());
    detail::cell_delete<cell> del{pool_};
    cell* p = head_.load();
    while (p != nullptr) {
      cell* nx = p->next;
      del(p);
      p = nx;
    }
  }

  thread_guard register_thread() {
    std::optional<block_pool::thread_guard> pg;
    if (pool_ != nullptr) pg.emplace(pool_->register_thread());
    return thread_guard(std::move(pg), rec_.register_thread());
  }

  void push(T v) {
    cell* a = make_cell(std::move(v));
    while (!rec_.protected_read(head_, 0, [&](cell* p) {
      a->next = p;
      return head_.compare_exchange_strong(p, a);
    })) {
    }
  }

  std::optional<T> pop() {
    cell* r = nullptr;
    while (!rec_.protected_read(head_, 0, [&](cell* p) {
      r = p;
      if (p == nullptr) return true;
      return head_.compare_exchange_strong(p, p->next);
    })) {
    }
    if (r == nullptr) return std::nullopt;
    T v = std::move(r->value);
    rec_.safe_free(r);
    return v;
  }

  std::optional<T> peek() {
    return rec_.protected_read(head_, 0, [](cell* p) -> std::optional<T> {
      if (p == nullptr) return std::nullopt;
      return p->value;
    });
  }

  bool empty() const { return head_.load() == nullptr; }

  // Cells retired but not yet destroyed, across all threads.
  size_t delayed() const { return rec_.delayed(); }

 private:
  cell* make_cell(T v) {
    if (pool_ != nullptr) {
      return new (pool_->allocate()) cell{std::move(v), nullptr};
    }
    return new cell{std::move(v), nullptr};
  }

  std::atomic<cell*> head_{nullptr};
  reclaimer rec_;
  block_pool* pool_;
};

// Lock-free FIFO queue of word-sized values, in the two-hazard style: the
// head side pins the front cell, the tail side pins the append point.
//
// The dummy cell is a permanent member, never allocated or retired.
// dummy.next is the head link: it points at the front cell, or null when
// the queue is empty. Cells form a chain through their next fields;
// enqueuers append at the last cell, dequeuers unlink at the front.
//
// Removing the last cell cannot simply swing the head link, because a
// concurrent enqueuer may append to that cell between the emptiness check
// and the swing, stranding the new cell on a dead chain. Instead the
// dequeuer first closes the cell by installing a reserved mark in its next
// field; enqueuers can never link onto a closed cell, so the unlink to
// null that follows is safe. Everyone who encounters a closed front cell
// helps unlink it.
//
// The tail is a hint to the append point and carries a version counter,
// updated together by a double-width compare-and-swap. The counter is
// what keeps a delayed tail update from resurrecting a retired cell: the
// tail revisits the dummy every time the queue drains, so unlike a
// rotating-dummy queue the pointer value alone cannot prove freshness.
// Every tail update bumps the counter, and between unlinking a cell and
// retiring it the dequeuer forces one tail update of its own through
// (moving the tail off the cell if it sits there, else just bumping the
// counter). Any delayed update that could install the dead cell read its
// expected counter while the cell was still linked, so it now fails.
//
// peek runs in a constant number of steps: one protected read of the head
// link and two field loads, with no retry loop.
template <typename T>
class lf_queue {
  static_assert(word_sized<T>);

  struct cell {
    T value;
    std::atomic<cell*> next{nullptr};
  };
  struct alignas(16) tail_ref {
    cell* p;
    uint64_t tag;
    bool operator==(const tail_ref&) const = default;
  };
  using reclaimer = memory_reclaimer<cell, detail::cell_delete<cell>>;

  // Mark stored in a closed cell's next field. Never a legal cell
  // address, never announced from the head link or the tail.
  static cell* closed() { return from_word<cell*>(kReservedWord); }

 public:
  using thread_guard = detail::container_guard<reclaimer>;

  explicit lf_queue(int max_threads, block_pool* pool = nullptr,
                    int fast_path_tries = 0)
      : rec_(max_threads, 2, detail::cell_delete<cell>{pool},
             fast_path_tries),
        pool_(pool) {
    assert(pool == nullptr || pool->block_size() >= sizeof(cell));
    tail_.store(tail_ref{&dummy_, 0});
  }

  lf_queue(const lf_queue&) = delete;
  lf_queue& operator=(const lf_queue&) = delete;

  // Requires that every thread_guard has been destroyed.
  ~lf_queue() {
    std::optional<block_pool::thread_guard> pg;
    if (pool_ != nullptr) pg.emplace(pool_->register_thread());
    detail::cell_delete<cell> del{pool_};
    cell* p = dummy_.next.load();
    while (p != nullptr && p != closed()) {
      cell* nx = p->next.load();
      del(p);
      p = nx;
    }
  }

  thread_guard register_thread() {
    std::optional<block_pool::thread_guard> pg;
    if (pool_ != nullptr) pg.emplace(pool_->register_thread());
    return thread_guard(std::move(pg), rec_.register_thread());
  }

  void enqueue(T v) {
    cell* f = make_cell(std::move(v));
    for (;;) {
      // Slot 1 is the tail-side hazard; the head side uses slot 0.
      bool done = rec_.template protected_composite<tail_ref>(
          [this] { return tail_.load(); },
          [](const tail_ref& w) { return w.p; }, 1, [&](tail_ref tp) {
            cell* t = tp.p;
            cell* nx = t->next.load();
            if (nx == closed()) {
              // Closed ex-front still linked: help unlink it, then route
              // the tail back to the dummy.
              cell* e = t;
              dummy_.next.compare_exchange_strong(e, nullptr);
              tail_.compare_exchange_strong(tp,
                                            tail_ref{&dummy_, tp.tag + 1});
              return false;
            }
            if (nx != nullptr) {
              // Tail lagging one cell behind the append point.
              tail_.compare_exchange_strong(tp, tail_ref{nx, tp.tag + 1});
              return false;
            }
            if (t->next.compare_exchange_strong(nx, f)) {
              tail_.compare_exchange_strong(tp, tail_ref{f, tp.tag + 1});
              return true;
            }
            return false;
          });
      if (done) return;
    }
  }

  std::optional<T> dequeue() {
    for (;;) {
      cell* victim = nullptr;
      // Engaged outer optional: operation decided (inner empty means the
      // queue was empty). Disengaged: lost a race, retry.
      auto outcome = rec_.protected_read(
          dummy_.next, 0, [&](cell* x) -> std::optional<std::optional<T>> {
            if (x == nullptr) return std::optional<T>{};
            cell* nx = x->next.load();
            if (nx == closed()) {
              cell* e = x;
              dummy_.next.compare_exchange_strong(e, nullptr);
              return std::nullopt;
            }
            if (nx != nullptr) {
              cell* e = x;
              if (!dummy_.next.compare_exchange_strong(e, nx))
                return std::nullopt;
              quarantine_tail(x);
              victim = x;
              return std::optional<T>{std::move(x->value)};
            }
            // Sole cell: close it, then unlink. The close is the point
            // the value is taken; the unlink may be finished by helpers.
            if (x->next.compare_exchange_strong(nx, closed())) {
              T v = std::move(x->value);
              cell* e = x;
              dummy_.next.compare_exchange_strong(e, nullptr);
              quarantine_tail(x);
              victim = x;
              return std::optional<T>{std::move(v)};
            }
            return std::nullopt;
          });
      if (outcome) {
        if (victim != nullptr) rec_.safe_free(victim);
        return *outcome;
      }
    }
  }

  std::optional<T> peek() {
    return rec_.protected_read(
        dummy_.next, 0, [](cell* x) -> std::optional<T> {
          if (x == nullptr) return std::nullopt;
          // A closed front has already been taken by its dequeuer; the
          // queue is empty at this instant.
          if (x->next.load() == closed()) return std::nullopt;
          return x->value;
        });
  }

  bool empty() const {
    cell* x = dummy_.next.load();
    return x == nullptr || x->next.load() == closed();
  }

  // Cells retired but not yet destroyed, across all threads.
  size_t delayed() const { return rec_.delayed(); }

 private:
  cell* make_cell(T v) {
    if (pool_ != nullptr) {
      return new (pool_->allocate()) cell{std::move(v)};
    }
    return new cell{std::move(v)};
  }

  // Runs between unlinking x and retiring it; loops until one tail
  // update of our own lands. Any update still in flight that could point
  // the tail at x read its expected counter while x was linked, and our
  // bump sits between that read and its compare-and-swap, so it fails.
  // If the tail currently sits on x, this moves it to the dummy; the
  // dummy is the one target that can never itself be dead, and enqueuers
  // walk the tail forward from there. A failed attempt means someone
  // else's update landed; retry against the fresh value.
  void quarantine_tail(cell* x) {
    for (;;) {
      tail_ref w = tail_.load();
      cell* target = (w.p == x) ? &dummy_ : w.p;
      if (tail_.compare_exchange_strong(w, tail_ref{target, w.tag + 1}))
        return;
    }
  }

  cell dummy_;
  alignas(16) std::atomic<tail_ref> tail_;
  reclaimer rec_;
  block_pool* pool_;
};

}  // namespace arc

#endif
