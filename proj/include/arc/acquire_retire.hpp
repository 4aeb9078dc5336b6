#ifndef ARC_ACQUIRE_RETIRE_H
#define ARC_ACQUIRE_RETIRE_H

#include <atomic>
#include <bit>
#include <cassert>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <thread>
#include <vector>

#include "arc/common.hpp"
#include "arc/destination.hpp"

namespace arc {

namespace detail {

// Open-addressing count table over handle words, linear probing, rebuilt
// for each collection pass. The reserved word doubles as the empty-slot
// marker; it never occurs among announced or retired handles. Capacity is
// kept at twice the key bound, so probes stay short in expectation.
class count_table {
 public:
  void reset(size_t key_bound) {
    size_t cap = std::bit_ceil(std::max<size_t>(2 * key_bound, 4));
    entries_.assign(cap, entry{kReservedWord, 0});
    mask_ = cap - 1;
  }

  void increment(uint64_t key) {
    assert(key != kReservedWord);
    for (size_t i = mix64(key) & mask_;; i = (i + 1) & mask_) {
      if (entries_[i].key == key) {
        entries_[i].count++;
        return;
      }
      if (entries_[i].key == kReservedWord) {
        entries_[i] = {key, 1};
        return;
      }
    }
  }

  // Consumes one occurrence if present. False means the count was zero.
  bool try_decrement(uint64_t key) {
    for (size_t i = mix64(key) & mask_;; i = (i + 1) & mask_) {
      if (entries_[i].key == key) {
        if (entries_[i].count == 0) return false;
        entries_[i].count--;
        return true;
      }
      if (entries_[i].key == kReservedWord) return false;
    }
  }

 private:
  struct entry {
    uint64_t key;
    int64_t count;
  };
  std::vector<entry> entries_;
  size_t mask_ = 0;
};

}  // namespace detail

// rl minus plist with multiset multiplicity: an element retired s times
// and announced t times survives max(s - t, 0) times. Expected O(n + m).
// Occurrences of rl are consumed in order, earliest first.
template <word_sized T>
std::vector<T> multiset_difference(const std::vector<T>& rl,
                                   const std::vector<T>& plist) {
  detail::count_table t;
  t.reset(plist.size() + 1);
  for (T x : plist) t.increment(to_word(x));
  std::vector<T> out;
  for (T x : rl)
    if (!t.try_decrement(to_word(x))) out.push_back(x);
  return out;
}

// Announce-and-defer protection for word-sized resource handles.
//
// A table holds P rows of c announcement cells. A registered process
// acquires a handle out of a shared location by atomically copying the
// location into one of its cells, which both reads and publishes it in a
// single step; release clears the cell. Destruction is split in two:
// retire(h) parks the handle, and eject() hands back handles that are
// no longer announced anywhere, at which point the caller may destroy
// them. The guarantee: a handle acquired from a location before being
// overwritten there and then retired is never handed back by eject before
// the matching release.
//
// Collection is incremental. Once enough handles are parked, a pass
// snapshots the retired list, scans all P*c cells into a count table, and
// subtracts announcements from the snapshot; survivors queue FIFO for
// eject. Each eject() call performs at most four scan reads or four table
// steps (a table operation is never split), so a pass finishes within
// 2*c*P eject calls and every operation stays constant-time. With at
// least one eject per retire, a process never has more than 3*c*P handles
// parked, 3*c*P*P across the table.
template <word_sized T>
class acquire_retire {
 public:
  class process;

  explicit acquire_retire(int max_processes, int slots_per_process = 2,
                          int fast_path_tries = 0)
      : procs_count_(max_processes),
        slots_per_(slots_per_process),
        fast_tries_(fast_path_tries),
        grid_(static_cast<size_t>(max_processes) * slots_per_process) {
    assert(max_processes > 0 && slots_per_process > 0);
    procs_.reserve(procs_count_);
    for (int pid = 0; pid < procs_count_; pid++) {
      procs_.push_back(std::unique_ptr<process>(new process(this, pid)));
      free_pids_.insert(pid);
    }
  }

  acquire_retire(const acquire_retire&) = delete;
  acquire_retire& operator=(const acquire_retire&) = delete;

  static constexpr T empty_handle() { return reserved<T>(); }

  int max_processes() const { return procs_count_; }
  int slots_per_process() const { return slots_per_; }

  // Claims the lowest free row. Throws when all rows are taken.
  process& register_process() {
    std::lock_guard<std::mutex> g(reg_mu_);
    if (free_pids_.empty())
      throw std::runtime_error("acquire_retire: process capacity exhausted");
    int pid = *free_pids_.begin();
    free_pids_.erase(free_pids_.begin());
    procs_[pid]->reinit();
    return *procs_[pid];
  }

  // All slots must already be released. Drains the process by running
  // eager passes, handing every remaining handle to on_eject; this blocks
  // until other processes stop announcing those handles.
  template <typename F>
  void deregister(process& p, F&& on_eject) {
    for (int i = 0; i < slots_per_; i++) p.release(i);
    while (p.delayed() > 0) {
      p.eject_all();
      while (auto h = p.try_pop()) on_eject(*h);
      if (p.delayed() > 0) std::this_thread::yield();
    }
    std::lock_guard<std::mutex> g(reg_mu_);
    p.live_ = false;
    free_pids_.insert(p.pid_);
  }

  // For handles that need no destruction on drain.
  void deregister(process& p) {
    deregister(p, [](T) {});
  }

  // Racy by design: a census sample while other processes run.
  size_t total_delayed() const {
    size_t sum = 0;
    for (auto& p : procs_) sum += p->delayed();
    return sum;
  }

  class process {
   public:
    // Reads loc and announces the value in cell i as one atomic step.
    // With fast_path_tries > 0, first attempts the cheaper
    // announce-and-validate loop before falling back to the atomic copy.
    T acquire(const std::atomic<T>& loc, int i = 0) {
      stats_.acquires++;
      destination<T>& d = cell(i);
      for (int k = 0; k < parent_->fast_tries_; k++) {
        T a = loc.load();
        d.write(a);
        stats_.announce_stores++;
        if (to_word(loc.load()) == to_word(a)) return a;
        stats_.fast_retries++;
      }
      d.swcopy(loc);
      stats_.announce_stores++;
      return d.read();
    }

    // Announce-and-validate over a location wider than one word (for
    // example a pointer packed with a version counter). read() returns the
    // composite value V and proj extracts the word to protect. Retries
    // until a read is stable across the announcement, so this is lock-free
    // rather than wait-free: there is no atomic-copy fallback for sources
    // that are not a single word.
    template <typename V, typename ReadFn, typename ProjFn>
    V acquire_composite(ReadFn&& read, ProjFn&& proj, int i = 0) {
      stats_.acquires++;
      destination<T>& d = cell(i);
      while (true) {
        V v = read();
        d.write(proj(v));
        stats_.announce_stores++;
        if (read() == v) return v;
        stats_.fast_retries++;
      }
    }

    void release(int i = 0) { cell(i).write(reserved<T>()); }

    // Parks h for deferred destruction. h must be a real handle.
    void retire(T h) {
      assert(to_word(h) != kReservedWord && "cannot retire the empty marker");
      rlist_.push_back(h);
      delayed_count_.fetch_add(1, std::memory_order_relaxed);
      retired_since_pass_ = true;
    }

    // One constant-time collection step; returns a handle that is safe to
    // destroy, if one is ready.
    std::optional<T> eject() {
      ejects_++;
      stats_.ejects++;
      if (phase_ == phase::idle) maybe_start_pass();
      advance(4);
      return try_pop();
    }

    // Next ready handle without doing any pass work.
    std::optional<T> try_pop() {
      if (flist_.empty()) return std::nullopt;
      T h = flist_.front();
      flist_.pop_front();
      delayed_count_.fetch_sub(1, std::memory_order_relaxed);
      return h;
    }

    // Eager collection: finishes any pass in flight, then runs one full
    // pass over everything currently parked. For teardown and tests.
    void eject_all() {
      while (phase_ != phase::idle) advance(std::numeric_limits<int>::max());
      if (!rlist_.empty()) {
        start_pass();
        while (phase_ != phase::idle) advance(std::numeric_limits<int>::max());
      }
    }

    // Parked handles: retired list, in-flight snapshot, and ready queue.
    size_t delayed() const {
      return static_cast<size_t>(
          delayed_count_.load(std::memory_order_relaxed));
    }

    int pid() const { return pid_; }
    T announced(int i) const { return cell(i).read(); }

    struct op_stats {
      uint64_t acquires = 0;
      uint64_t announce_stores = 0;
      uint64_t fast_retries = 0;
      uint64_t ejects = 0;
      uint64_t passes = 0;
      uint64_t max_pass_ejects = 0;
    };
    const op_stats& stats() const { return stats_; }

   private:
    friend class acquire_retire;

    process(acquire_retire* parent, int pid) : parent_(parent), pid_(pid) {}

    destination<T>& cell(int i) const {
      assert(i >= 0 && i < parent_->slots_per_);
      return parent_->grid_[static_cast<size_t>(pid_) * parent_->slots_per_ +
                            i]
          .d;
    }

    void reinit() {
      assert(!live_);
      live_ = true;
      for (int i = 0; i < parent_->slots_per_; i++) release(i);
      rlist_.clear();
      flist_.clear();
      batch_.clear();
      kept_.clear();
      phase_ = phase::idle;
      ejects_ = 0;
      pass_begin_ejects_ = std::numeric_limits<int64_t>::min() / 2;
      retired_since_pass_ = false;
      delayed_count_.store(0, std::memory_order_relaxed);
      stats_ = op_stats{};
    }

    size_t table_cells() const {
      return static_cast<size_t>(parent_->procs_count_) * parent_->slots_per_;
    }

    void maybe_start_pass() {
      size_t cp = table_cells();
      if (rlist_.size() >= cp ||
          (!rlist_.empty() && retired_since_pass_ &&
           ejects_ - pass_begin_ejects_ >= static_cast<int64_t>(2 * cp)))
        start_pass();
    }

    void start_pass() {
      assert(phase_ == phase::idle && batch_.empty() && kept_.empty());
      std::swap(batch_, rlist_);
      table_.reset(batch_.size() + table_cells());
      scan_idx_ = 0;
      batch_pos_ = 0;
      phase_ = phase::scanning;
      pass_begin_ejects_ = ejects_;
      retired_since_pass_ = false;
      stats_.passes++;
    }

    // Runs up to `budget` unit steps of the current pass. A unit is one
    // announcement-cell read (with its table insert) or one snapshot
    // element's lookup; table operations are not split across units.
    void advance(int budget) {
      while (budget > 0 && phase_ != phase::idle) {
        if (phase_ == phase::scanning) {
          if (scan_idx_ == table_cells()) {
            phase_ = phase::differencing;
            continue;
          }
          T v = parent_->grid_[scan_idx_].d.read();
          if (to_word(v) != kReservedWord) table_.increment(to_word(v));
          scan_idx_++;
          budget--;
        } else {
          if (batch_pos_ == batch_.size()) {
            finish_pass();
            continue;
          }
          T x = batch_[batch_pos_++];
          if (table_.try_decrement(to_word(x)))
            kept_.push_back(x);  // still announced somewhere
          else
            flist_.push_back(x);
          budget--;
        }
      }
    }

    void finish_pass() {
      uint64_t len = static_cast<uint64_t>(ejects_ - pass_begin_ejects_);
      if (len > stats_.max_pass_ejects) stats_.max_pass_ejects = len;
      assert(len <= 2 * table_cells() &&
             "pass exceeded its eject budget; is eject called per retire?");
      rlist_.insert(rlist_.end(), kept_.begin(), kept_.end());
      kept_.clear();
      batch_.clear();
      phase_ = phase::idle;
    }

    acquire_retire* parent_;
    int pid_;
    bool live_ = false;

    std::vector<T> rlist_;
    std::deque<T> flist_;

    enum class phase { idle, scanning, differencing };
    phase phase_ = phase::idle;
    std::vector<T> batch_;
    std::vector<T> kept_;
    size_t scan_idx_ = 0;
    size_t batch_pos_ = 0;
    detail::count_table table_;
    int64_t ejects_ = 0;
    int64_t pass_begin_ejects_ = std::numeric_limits<int64_t>::min() / 2;
    bool retired_since_pass_ = false;

    std::atomic<int64_t> delayed_count_{0};
    op_stats stats_;
  };

 private:
  struct alignas(64) padded_cell {
    destination<T> d;
  };

  int procs_count_;
  int slots_per_;
  int fast_tries_;
  std::vector<padded_cell> grid_;
  std::vector<std::unique_ptr<process>> procs_;
  std::set<int> free_pids_;
  std::mutex reg_mu_;
};

}  // namespace arc

#endif
