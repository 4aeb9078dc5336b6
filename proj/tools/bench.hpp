#ifndef ARC_TOOLS_BENCH_H
#define ARC_TOOLS_BENCH_H

#include <atomic>
#include <barrier>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "arc/common.hpp"
#include "arc/ref_count.hpp"
#include "arc/weak_atomic.hpp"

// Workload driver shared by the bench binary and its tests. An array of
// reference-holding cells, each padded to its own cache line, is hammered
// by workers that either load (copy, verify, drop) or store (install a
// fresh object) at uniformly random indices. Three interchangeable cell
// implementations run the same workload: counted pointers with deferred
// decrements, counted handles behind an ownership cell, and a per-entry
// mutex baseline. Every run ends with a census; the violations field
// counts canary hits plus any object leaked or destroyed twice.
namespace bench {

struct config {
  std::string impl = "refcount";
  int threads = 1;
  size_t n_refs = 10;
  double store_prob = 0.1;
  double duration_s = 3.0;
  uint64_t ops = 0;  // nonzero: run this many ops total instead of a duration
  uint64_t seed = 42;
};

struct result {
  std::string impl;
  int threads = 0;
  size_t n_refs = 0;
  double store_prob = 0.0;
  double duration_s = 0.0;  // measured, not configured
  uint64_t ops_total = 0;
  uint64_t loads = 0;
  uint64_t stores = 0;
  double throughput = 0.0;
  uint64_t violations = 0;
};

// Counter-based per-thread randomness: draw k of thread t is a pure
// function of (seed, t, k), so fixed-op single-thread runs replay the
// exact same operation sequence.
inline uint64_t stream_base(uint64_t seed, int tid) {
  return arc::mix64(seed ^ (0x9e3779b97f4a7c15ull * (uint64_t(tid) + 1)));
}
inline uint64_t draw(uint64_t base, uint64_t k) {
  return arc::mix64(base + k);
}

inline std::atomic<uint64_t> objects_made{0};
inline std::atomic<uint64_t> objects_destroyed{0};
inline constexpr uint64_t kMagic = 0xBE9CBE9CBE9CBE9Cull;

struct object {
  uint64_t magic = kMagic;
  uint64_t tag;
  explicit object(uint64_t t) : tag(t) {
    objects_made.fetch_add(1, std::memory_order_relaxed);
  }
  ~object() {
    magic = 0;
    objects_destroyed.fetch_add(1, std::memory_order_relaxed);
  }
};

inline arc::counted<object>* make_handle(uint64_t tag) {
  auto* h = new arc::counted<object>(tag);
  h->add_counter(1);
  return h;
}

// Counted pointers whose overwrite decrement is deferred through the
// announce table.
class refcount_cells {
 public:
  explicit refcount_cells(size_t n) : slots_(n) {
    for (size_t i = 0; i < n; i++)
      slots_[i].cell = arc::rc_ptr<object>::make(uint64_t{i});
  }
  auto register_worker() {
    return arc::rc_domain<object>::instance().register_thread();
  }
  bool load_check(size_t i) {
    arc::rc_ptr<object> c(slots_[i].cell);
    return c.get() == nullptr || c.get()->value().magic == kMagic;
  }
  void store(size_t i, uint64_t tag) {
    slots_[i].cell.update(arc::rc_ptr<object>::make(tag));
  }

 private:
  struct alignas(64) slot {
    arc::rc_ptr<object> cell;
  };
  std::vector<slot> slots_;
};

// The same counted handles, driven through the generic ownership cell:
// the policy copy is an increment and the destruct a decrement.
struct counted_policy {
  static arc::counted<object>* copy(arc::counted<object>* p) {
    if (p != nullptr) p->add_counter(1);
    return p;
  }
  static void destruct(arc::counted<object>* p) {
    arc::detail::rc_decrement(p);
  }
  static arc::counted<object>* empty() { return nullptr; }
};

class weak_atomic_cells {
  using cell_type = arc::weak_atomic<arc::counted<object>*, counted_policy>;

 public:
  explicit weak_atomic_cells(size_t n) : slots_(n) {
    for (size_t i = 0; i < n; i++) slots_[i].cell.exchange(make_handle(i));
  }
  auto register_worker() {
    return cell_type::domain::instance().register_thread();
  }
  bool load_check(size_t i) {
    arc::counted<object>* h = slots_[i].cell.load();
    bool ok = h == nullptr || h->value().magic == kMagic;
    counted_policy::destruct(h);
    return ok;
  }
  void store(size_t i, uint64_t tag) {
    slots_[i].cell.store(make_handle(tag));
  }

 private:
  struct alignas(64) slot {
    cell_type cell;
  };
  std::vector<slot> slots_;
};

// Baseline: one mutex per entry, counting done under the lock. Readers
// increment while holding the lock, so an overwriter's decrement can
// never free a handle a reader is still about to touch.
class lock_cells {
 public:
  explicit lock_cells(size_t n) : slots_(n) {
    for (size_t i = 0; i < n; i++) slots_[i].p = make_handle(i);
  }
  ~lock_cells() {
    for (auto& s : slots_) arc::detail::rc_decrement(s.p);
  }
  struct no_guard {};
  no_guard register_worker() { return {}; }
  bool load_check(size_t i) {
    auto& s = slots_[i];
    arc::counted<object>* h;
    {
      std::lock_guard<std::mutex> lk(s.m);
      h = s.p;
      if (h != nullptr) h->add_counter(1);
    }
    bool ok = h == nullptr || h->value().magic == kMagic;
    arc::detail::rc_decrement(h);
    return ok;
  }
  void store(size_t i, uint64_t tag) {
    auto& s = slots_[i];
    arc::counted<object>* fresh = make_handle(tag);
    arc::counted<object>* old;
    {
      std::lock_guard<std::mutex> lk(s.m);
      old = s.p;
      s.p = fresh;
    }
    arc::detail::rc_decrement(old);
  }

 private:
  struct alignas(64) slot {
    std::mutex m;
    arc::counted<object>* p = nullptr;
  };
  std::vector<slot> slots_;
};

// Announce fast-path attempts before the wait-free fallback, for both
// domains the workload can touch. Only effective before the first run.
inline void set_fast_path_tries(int n) {
  arc::rc_domain<object>::set_fast_path_tries(n);
  arc::wa_domain<arc::counted<object>*, counted_policy>::set_fast_path_tries(
      n);
}

inline void validate(const config& cfg) {
  if (cfg.threads < 1 || cfg.threads > 64)
    throw std::invalid_argument("threads must be in [1, 64]");
  if (cfg.n_refs < 1) throw std::invalid_argument("n-refs must be >= 1");
  if (!(cfg.store_prob >= 0.0 && cfg.store_prob <= 1.0))
    throw std::invalid_argument("store-prob must be in [0, 1]");
  if (cfg.ops == 0 && !(cfg.duration_s > 0.0))
    throw std::invalid_argument("duration-s must be positive");
}

template <typename Cells>
result run_with(const config& cfg) {
  uint64_t made0 = objects_made.load();
  uint64_t dead0 = objects_destroyed.load();
  std::atomic<uint64_t> bad_reads{0};
  std::vector<uint64_t> loads(cfg.threads, 0), stores(cfg.threads, 0);
  double elapsed = 0.0;
  // Store with probability store_prob: compare a 53-bit draw against the
  // scaled threshold.
  const uint64_t threshold =
      cfg.store_prob >= 1.0
          ? ~uint64_t{0}
          : uint64_t(cfg.store_prob * 9007199254740992.0);  // 2^53
  {
    Cells cells(cfg.n_refs);
    std::atomic<bool> stop{false};
    std::barrier<> gate(cfg.threads + 1);
    {
      std::vector<std::jthread> ts;
      for (int t = 0; t < cfg.threads; t++) {
        ts.emplace_back([&, t] {
          [[maybe_unused]] auto g = cells.register_worker();
          const uint64_t base = stream_base(cfg.seed, t);
          uint64_t quota = ~uint64_t{0};
          if (cfg.ops != 0)
            quota = cfg.ops / cfg.threads +
                    (uint64_t(t) < cfg.ops % cfg.threads ? 1 : 0);
          gate.arrive_and_wait();
          uint64_t k = 0, nl = 0, ns = 0;
          while (k < quota) {
            if (cfg.ops == 0 && (k & 255) == 0 &&
                stop.load(std::memory_order_relaxed))
              break;
            size_t idx = size_t(draw(base, 2 * k) % cfg.n_refs);
            if ((draw(base, 2 * k + 1) >> 11) < threshold) {
              cells.store(idx, (uint64_t(t) << 48) | k);
              ns++;
            } else {
              if (!cells.load_check(idx)) bad_reads.fetch_add(1);
              nl++;
            }
            k++;
          }
          loads[size_t(t)] = nl;
          stores[size_t(t)] = ns;
          gate.arrive_and_wait();
        });
      }
      auto t0 = std::chrono::steady_clock::now();
      gate.arrive_and_wait();
      if (cfg.ops == 0) {
        std::this_thread::sleep_for(
            std::chrono::duration<double>(cfg.duration_s));
        stop.store(true);
      }
      gate.arrive_and_wait();
      elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
    }  // workers join; their guards drain every parked destruct
  }    // cells die; residents are released

  result res;
  res.impl = cfg.impl;
  res.threads = cfg.threads;
  res.n_refs = cfg.n_refs;
  res.store_prob = cfg.store_prob;
  res.duration_s = elapsed;
  for (int t = 0; t < cfg.threads; t++) {
    res.loads += loads[size_t(t)];
    res.stores += stores[size_t(t)];
  }
  res.ops_total = res.loads + res.stores;
  res.throughput = elapsed > 0.0 ? double(res.ops_total) / elapsed : 0.0;
  uint64_t made = objects_made.load() - made0;
  uint64_t dead = objects_destroyed.load() - dead0;
  res.violations =
      bad_reads.load() + (made > dead ? made - dead : dead - made);
  return res;
}

inline result run_workload(const config& cfg) {
  validate(cfg);
  if (cfg.impl == "refcount") return run_with<refcount_cells>(cfg);
  if (cfg.impl == "weak-atomic-counted") return run_with<weak_atomic_cells>(cfg);
  if (cfg.impl == "lock-baseline") return run_with<lock_cells>(cfg);
  throw std::invalid_argument("unknown impl: " + cfg.impl);
}

inline std::string fmt(double v, const char* pattern) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline void write_csv(std::ostream& os, const std::vector<result>& rs) {
  os << "impl,threads,n_refs,store_prob,duration_s,ops_total,throughput,"
        "violations\n";
  for (const auto& r : rs) {
    os << r.impl << ',' << r.threads << ',' << r.n_refs << ','
       << fmt(r.store_prob, "%g") << ',' << fmt(r.duration_s, "%.3f") << ','
       << r.ops_total << ',' << fmt(r.throughput, "%.1f") << ','
       << r.violations << '\n';
  }
}

// Human-readable table; speedup is relative to the single-thread run of
// the same implementation when present in the batch.
inline void write_summary(std::ostream& os, const std::vector<result>& rs) {
  os << "impl                   threads        ops        ops/s   speedup"
        "  violations\n";
  for (const auto& r : rs) {
    double base = 0.0;
    for (const auto& b : rs)
      if (b.impl == r.impl && b.threads == 1) base = b.throughput;
    std::string speedup =
        base > 0.0 ? fmt(r.throughput / base, "%.2fx") : "-";
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %7d %10llu %12.1f %9s %11llu\n",
                  r.impl.c_str(), r.threads,
                  static_cast<unsigned long long>(r.ops_total), r.throughput,
                  speedup.c_str(),
                  static_cast<unsigned long long>(r.violations));
    os << line;
  }
}

}  // namespace bench

#endif
