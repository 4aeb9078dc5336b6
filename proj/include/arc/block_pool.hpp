#ifndef ARC_BLOCK_POOL_H
#define ARC_BLOCK_POOL_H

#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "arc/common.hpp"

namespace arc {

// Fixed-size block allocator for p processes with constant-time allocate
// and free. Blocks move in batches of l (default l = p): each process
// owns a partially filled current batch plus up to two full ones, and a
// shared stack holds the overflow as full batches. A shared push or pop
// costs O(p), so it is deamortized: the operation is split into p unit
// steps and every allocate/free advances the pending operation by one
// step. A batch therefore lands p operations after it was requested, and
// the local pools are sized so that nobody has to wait for it.
//
// Free blocks store the pool's bookkeeping in their own first bytes: a
// batch is a singly linked chain threaded through word 0 of its blocks,
// and the head block's word 1 links batch to batch inside the shared
// stack. Nothing is allocated after construction; for at most max_live
// concurrently live blocks the arena holds max_live + 4p^2 blocks total
// (with l = p).
//
// Threads register before use. Deregistering parks the thread's local
// batches in its slot; a later registration picks them back up.
class block_pool {
  static constexpr size_t kMinStride = 2 * sizeof(void*);
  struct local_pool;

 public:
  struct op_stats {
    uint64_t pops = 0;           // shared pops completed
    uint64_t pushes = 0;         // shared pushes completed
    uint64_t cas_retries = 0;    // shared-stack contention retries
    uint64_t empty_waits = 0;    // paced pops that found the stack empty
    uint64_t forced_steps = 0;   // steps run eagerly because a batch was due
  };

  enum class pending { none, pop, push };

  block_pool(size_t block_size, int max_processes, size_t max_live,
             size_t batch_size = 0)
      : stride_(round_stride(block_size)),
        p_(max_processes),
        l_(batch_size ? batch_size : static_cast<size_t>(max_processes)),
        locals_(static_cast<size_t>(max_processes)) {
    assert(max_processes > 0 && l_ >= 1);
    const size_t half = l_ / 2 ? l_ / 2 : 1;
    const size_t shared_batches = (max_live + l_ - 1) / l_;
    const size_t total =
        shared_batches * l_ + static_cast<size_t>(p_) * (2 * l_ + half);
    arena_ = std::make_unique<std::byte[]>(total * stride_ + alignof(std::max_align_t));
    total_blocks_ = total;

    size_t next = 0;
    auto carve_chain = [&](size_t len) {
      void* head = nullptr;
      for (size_t i = 0; i < len; i++) {
        void* b = block_at(next++);
        set_link(b, 0, head);
        head = b;
      }
      return head;
    };
    for (size_t i = 0; i < shared_batches; i++) {
      void* chain = carve_chain(l_);
      set_link(chain, 1, head_.load(std::memory_order_relaxed).top);
      head_.store({chain, i + 1}, std::memory_order_relaxed);
    }
    shared_count_.store(shared_batches, std::memory_order_relaxed);
    for (auto& lp : locals_) {
      lp.fulls[0] = carve_chain(l_);
      lp.fulls[1] = carve_chain(l_);
      lp.full_count = 2;
      lp.num_batches = 2;
      lp.cur_head = carve_chain(half);
      lp.cur_count = half;
    }
    assert(next == total);
  }

  block_pool(const block_pool&) = delete;

  class thread_guard {
   public:
    thread_guard(thread_guard&& o) noexcept
        : pool_(std::exchange(o.pool_, nullptr)), lp_(o.lp_) {}
    thread_guard(const thread_guard&) = delete;
    thread_guard& operator=(thread_guard&&) = delete;

    ~thread_guard() {
      if (!pool_) return;
      detail::tl_bind::unbind(pool_);
      std::lock_guard<std::mutex> g(pool_->reg_mu_);
      pool_->free_pids_.push_back(static_cast<int>(lp_ - pool_->locals_.data()));
    }

    int num_batches() const { return lp_->num_batches; }
    size_t current_count() const { return lp_->cur_count; }
    int full_count() const { return lp_->full_count; }
    pending pending_op() const { return lp_->op; }
    size_t steps_done() const { return lp_->steps_done; }
    size_t parked_pushes() const { return lp_->parked.size(); }
    const op_stats& stats() const { return lp_->stats; }

    // Blocks this process is sitting on, counting a push in flight.
    size_t local_blocks() const {
      size_t n = lp_->cur_count + lp_->full_count * pool_->l_ +
                 lp_->parked.size() * pool_->l_;
      if (lp_->op == pending::push) n += pool_->l_;
      return n;
    }

   private:
    friend class block_pool;
    thread_guard(block_pool* pool, local_pool* lp) : pool_(pool), lp_(lp) {}
    block_pool* pool_;
    local_pool* lp_;
  };

  thread_guard register_thread() {
    local_pool* lp;
    {
      std::lock_guard<std::mutex> g(reg_mu_);
      if (free_pids_.empty() && next_pid_ >= p_)
        throw std::runtime_error("block_pool: process capacity exhausted");
      int pid;
      if (!free_pids_.empty()) {
        pid = free_pids_.back();
        free_pids_.pop_back();
      } else {
        pid = next_pid_++;
      }
      lp = &locals_[static_cast<size_t>(pid)];
    }
    detail::tl_bind::bind(this, lp);
    return thread_guard(this, lp);
  }

  void* allocate() {
    local_pool& lp = self();
    check_boundary(lp);
    if (lp.cur_count == 0) {
      if (lp.full_count == 0) force_batch(lp);
      lp.cur_head = lp.fulls[--lp.full_count];
      lp.cur_count = l_;
      if (lp.num_batches == 1) {
        if (lp.op == pending::none && !lp.pop_owed)
          start_pop(lp);
        else
          lp.pop_owed = true;
      } else {
        lp.num_batches--;
      }
    }
    step_one(lp);
    void* b = lp.cur_head;
    lp.cur_head = get_link(b, 0);
    lp.cur_count--;
    set_link(b, 1, nullptr);  // clear the free mark
    check_boundary(lp);
    return b;
  }

  void free_block(void* b) {
    local_pool& lp = self();
    check_boundary(lp);
    assert(get_link(b, 1) != free_mark() && "block freed twice");
    if (lp.cur_count == l_) {
      if (lp.num_batches == 2) {
        if (lp.op == pending::none && !lp.pop_owed && lp.parked.empty())
          start_push(lp, lp.cur_head);
        else
          lp.parked.push_back(lp.cur_head);
      } else {
        lp.num_batches++;
        lp.fulls[lp.full_count++] = lp.cur_head;
      }
      lp.cur_head = nullptr;
      lp.cur_count = 0;
    }
    step_one(lp);
    set_link(b, 0, lp.cur_head);
    set_link(b, 1, free_mark());
    lp.cur_head = b;
    lp.cur_count++;
    check_boundary(lp);
  }

  // One unit of any pending shared-pool work; a no-op when nothing is
  // pending. allocate and free call this once on every invocation.
  void step() { step_one(self()); }

  size_t shared_batches() const {
    return shared_count_.load(std::memory_order_relaxed);
  }
  size_t arena_blocks() const { return total_blocks_; }
  size_t batch_size() const { return l_; }
  size_t block_size() const { return stride_; }
  int max_processes() const { return p_; }

 private:
  struct alignas(16) head_t {
    void* top;
    uint64_t tag;
  };

  struct local_pool {
    void* cur_head = nullptr;
    size_t cur_count = 0;
    void* fulls[2] = {nullptr, nullptr};
    int full_count = 0;
    int num_batches = 2;
    pending op = pending::none;
    size_t steps_done = 0;
    void* push_chain = nullptr;
    bool pop_owed = false;
    std::deque<void*> parked;
    op_stats stats;
  };

  static size_t round_stride(size_t block_size) {
    size_t s = block_size < kMinStride ? kMinStride : block_size;
    return (s + alignof(std::max_align_t) - 1) &
           ~(alignof(std::max_align_t) - 1);
  }

  void* block_at(size_t i) const {
    auto base = reinterpret_cast<uintptr_t>(arena_.get());
    base = (base + alignof(std::max_align_t) - 1) &
           ~uintptr_t(alignof(std::max_align_t) - 1);
    return reinterpret_cast<void*>(base + i * stride_);
  }

  // Links live in the free block's own storage: word 0 chains blocks
  // within a batch, word 1 chains batches in the shared stack (and holds
  // the free mark otherwise). Word 1 of a shared head is written before
  // the publishing CAS and read racily by poppers, hence the atomic_ref.
  static void set_link(void* b, int word, void* v) {
    std::atomic_ref<void*>(static_cast<void**>(b)[word])
        .store(v, std::memory_order_relaxed);
  }
  static void* get_link(void* b, int word) {
    return std::atomic_ref<void*>(static_cast<void**>(b)[word])
        .load(std::memory_order_relaxed);
  }
  static void* free_mark() {
    return reinterpret_cast<void*>(uintptr_t(0xF4EEF4EEF4EEF4EEull));
  }

  local_pool& self() {
    return *static_cast<local_pool*>(
        detail::tl_bind::require(this, "block_pool"));
  }

  void check_boundary(local_pool& lp) {
    assert(lp.num_batches == lp.full_count + (lp.op == pending::pop ? 1 : 0) +
                                 (lp.pop_owed ? 1 : 0));
    assert(lp.num_batches >= 1 && lp.num_batches <= 2);
    (void)lp;
  }

  void start_pop(local_pool& lp) {
    assert(lp.op == pending::none);
    lp.op = pending::pop;
    lp.steps_done = 0;
  }

  void start_push(local_pool& lp, void* chain) {
    assert(lp.op == pending::none);
    lp.op = pending::push;
    lp.push_chain = chain;
    lp.steps_done = 0;
  }

  void step_one(local_pool& lp) {
    if (lp.op == pending::none) {
      if (lp.pop_owed) {
        lp.pop_owed = false;
        start_pop(lp);
      } else if (!lp.parked.empty()) {
        start_push(lp, lp.parked.front());
        lp.parked.pop_front();
      } else {
        return;
      }
    }
    lp.steps_done++;
    if (lp.steps_done < static_cast<size_t>(p_)) return;
    bool done = attempt_shared(lp, false);
    // A pop waiting on an empty stack can sit in front of this process's
    // own parked spills, and those spills are exactly what would refill
    // the stack. Let one push overtake the pop or neither ever finishes.
    if (!done && lp.op == pending::pop && !lp.parked.empty() &&
        shared_count_.load(std::memory_order_relaxed) == 0) {
      lp.op = pending::none;
      lp.pop_owed = true;
      start_push(lp, lp.parked.front());
      lp.parked.pop_front();
      lp.steps_done = static_cast<size_t>(p_);
      attempt_shared(lp, false);
    }
  }

  bool attempt_shared(local_pool& lp, bool required) {
    if (lp.op == pending::pop) {
      if (!try_shared_pop(lp, required)) return false;
      lp.stats.pops++;
    } else {
      if (!try_shared_push(lp)) return false;
      lp.stats.pushes++;
      lp.push_chain = nullptr;
    }
    lp.op = pending::none;
    return true;
  }

  // An empty shared stack is not by itself exhaustion: every batch may
  // just be parked in some local pool. A paced pop keeps retrying; only
  // a pop that is needed immediately (required) escalates to an error.
  bool try_shared_pop(local_pool& lp, bool required) {
    head_t h = head_.load(std::memory_order_acquire);
    if (h.top == nullptr) {
      if (required)
        throw std::runtime_error("block_pool: shared pool exhausted");
      lp.stats.empty_waits++;
      return false;
    }
    void* next = get_link(h.top, 1);
    if (!head_.compare_exchange_strong(h, {next, h.tag + 1},
                                       std::memory_order_acq_rel)) {
      lp.stats.cas_retries++;
      return false;
    }
    shared_count_.fetch_sub(1, std::memory_order_relaxed);
    set_link(h.top, 1, nullptr);
    lp.fulls[lp.full_count++] = h.top;
    assert(lp.full_count <= 2);
    return true;
  }

  bool try_shared_push(local_pool& lp) {
    head_t h = head_.load(std::memory_order_acquire);
    set_link(lp.push_chain, 1, h.top);
    if (!head_.compare_exchange_strong(h, {lp.push_chain, h.tag + 1},
                                       std::memory_order_acq_rel)) {
      lp.stats.cas_retries++;
      return false;
    }
    shared_count_.fetch_add(1, std::memory_order_relaxed);
    return true;
  }

  // The current batch ran dry with no full batch on hand, so the batch
  // this process is owed has to be produced now, at O(p) cost. Reachable
  // through pacing only when l < p; with l >= p it means the pool is
  // genuinely out of blocks and the pop escalates to an error.
  void force_batch(local_pool& lp) {
    while (lp.full_count == 0) {
      assert(lp.op == pending::pop || lp.pop_owed);
      lp.stats.forced_steps++;
      if (lp.op == pending::none) {
        lp.pop_owed = false;
        start_pop(lp);
      }
      attempt_shared(lp, lp.op == pending::pop);
    }
  }

  size_t stride_;
  int p_;
  size_t l_;
  std::unique_ptr<std::byte[]> arena_;
  size_t total_blocks_ = 0;
  alignas(64) std::atomic<head_t> head_{{nullptr, 0}};
  std::atomic<size_t> shared_count_{0};
  std::vector<local_pool> locals_;
  std::mutex reg_mu_;
  std::vector<int> free_pids_;
  int next_pid_ = 0;
};

}  // namespace arc

#endif
