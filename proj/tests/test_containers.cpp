#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <atomic>
#include <barrier>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

#include "arc/block_pool.hpp"
#include "arc/containers.hpp"
#include "doctest.h"
#include "support/linearize.hpp"
#include "support/oracles.hpp"

using arc::block_pool;
using arc::lf_queue;
using arc::lf_stack;

namespace {

uint64_t tagged(int tid, uint64_t seq) {
  return (uint64_t{static_cast<uint32_t>(tid)} << 32) | seq;
}
int tag_of(uint64_t v) { return static_cast<int>(v >> 32); }
uint64_t seq_of(uint64_t v) { return v & 0xffffffffull; }

// Every value from one producer must appear in increasing sequence order
// within each consumer's log; FIFO order cannot reorder a single
// producer's items.
void check_producer_order(const std::vector<uint64_t>& log, int producers) {
  std::vector<uint64_t> last(static_cast<size_t>(producers), 0);
  std::vector<bool> seen(static_cast<size_t>(producers), false);
  for (uint64_t v : log) {
    int t = tag_of(v);
    REQUIRE(t < producers);
    if (seen[static_cast<size_t>(t)]) {
      CHECK(seq_of(v) > last[static_cast<size_t>(t)]);
    }
    seen[static_cast<size_t>(t)] = true;
    last[static_cast<size_t>(t)] = seq_of(v);
  }
}

}  // namespace

TEST_CASE("stack orders values last in, first out") {
  lf_stack<uint64_t> st(2);
  {
    auto g = st.register_thread();
    CHECK(st.pop() == std::nullopt);
    CHECK(st.peek() == std::nullopt);
    for (uint64_t v = 1; v <= 5; v++) st.push(v);
    CHECK(st.peek() == 5);
    CHECK(st.peek() == 5);
    for (uint64_t v = 5; v >= 1; v--) {
      CHECK(st.peek() == v);
      CHECK(st.pop() == v);
    }
    CHECK(st.pop() == std::nullopt);
    CHECK(st.peek() == std::nullopt);
    CHECK(st.empty());
    st.push(7);
    CHECK(!st.empty());
    CHECK(st.pop() == 7);
  }
  CHECK(st.delayed() == 0);
}

TEST_CASE("queue orders values first in, first out") {
  lf_queue<uint64_t> q(2);
  {
    auto g = q.register_thread();
    CHECK(q.dequeue() == std::nullopt);
    CHECK(q.peek() == std::nullopt);
    for (uint64_t v = 1; v <= 5; v++) q.enqueue(v);
    CHECK(q.peek() == 1);
    CHECK(q.peek() == 1);
    for (uint64_t v = 1; v <= 5; v++) {
      CHECK(q.peek() == v);
      CHECK(q.dequeue() == v);
    }
    CHECK(q.dequeue() == std::nullopt);
    CHECK(q.peek() == std::nullopt);
    CHECK(q.empty());

    q.enqueue(10);
    q.enqueue(11);
    CHECK(q.dequeue() == 10);
    q.enqueue(12);
    CHECK(q.dequeue() == 11);
    CHECK(q.dequeue() == 12);
    CHECK(q.dequeue() == std::nullopt);
  }
  CHECK(q.delayed() == 0);
}

TEST_CASE("stack conserves values under concurrent churn") {
  constexpr int kThreads = 4;
  constexpr int kOps = 30000;
  constexpr int kMax = kThreads + 1;  // workers plus the draining thread
  lf_stack<uint64_t> st(kMax);

  std::vector<std::vector<uint64_t>> pushed(kThreads), popped(kThreads);
  std::vector<size_t> max_delayed(kThreads, 0);
  std::barrier<> gate(kThreads);
  {
    std::vector<std::jthread> ts;
    for (int t = 0; t < kThreads; t++) {
      ts.emplace_back([&, t] {
        auto g = st.register_thread();
        std::mt19937_64 rng(0x57acc + static_cast<uint64_t>(t));
        uint64_t seq = 1;
        gate.arrive_and_wait();
        for (int i = 0; i < kOps; i++) {
          // Push-heavy early, pop-heavy late, so the stack both grows
          // and fully churns.
          bool grow = (i < kOps / 2) ? (rng() % 3 != 0) : (rng() % 3 == 0);
          if (grow) {
            uint64_t v = tagged(t, seq++);
            pushed[static_cast<size_t>(t)].push_back(v);
            st.push(v);
          } else if (auto v = st.pop()) {
            popped[static_cast<size_t>(t)].push_back(*v);
          }
          if ((i & 1023) == 0) {
            max_delayed[static_cast<size_t>(t)] =
                std::max(max_delayed[static_cast<size_t>(t)], st.delayed());
          }
        }
      });
    }
  }

  std::vector<uint64_t> all_pushed, all_taken;
  for (auto& v : pushed)
    all_pushed.insert(all_pushed.end(), v.begin(), v.end());
  for (auto& v : popped) all_taken.insert(all_taken.end(), v.begin(), v.end());
  {
    auto g = st.register_thread();
    while (auto v = st.pop()) all_taken.push_back(*v);
  }
  CHECK(oracle::multiset_difference(all_pushed, all_taken).empty());
  CHECK(oracle::multiset_difference(all_taken, all_pushed).empty());
  CHECK(st.delayed() == 0);

  // One announcement slot per thread: at most 3 * 1 * kMax delayed cells
  // per thread, plus slop for the racy census read.
  for (size_t t = 0; t < kThreads; t++)
    CHECK(max_delayed[t] <= 3u * 1u * kMax * kMax + kMax);
}

TEST_CASE("queue conserves values and keeps each producer in order") {
  constexpr int kThreads = 4;
  constexpr int kOps = 25000;
  constexpr int kMax = kThreads + 1;
  lf_queue<uint64_t> q(kMax);

  std::vector<std::vector<uint64_t>> enqueued(kThreads), dequeued(kThreads);
  std::vector<size_t> max_delayed(kThreads, 0);
  std::barrier<> gate(kThreads);
  {
    std::vector<std::jthread> ts;
    for (int t = 0; t < kThreads; t++) {
      ts.emplace_back([&, t] {
        auto g = q.register_thread();
        std::mt19937_64 rng(0x9e9e + static_cast<uint64_t>(t));
        uint64_t seq = 1;
        gate.arrive_and_wait();
        for (int i = 0; i < kOps; i++) {
          bool grow = (i < kOps / 2) ? (rng() % 3 != 0) : (rng() % 3 == 0);
          if (grow) {
            uint64_t v = tagged(t, seq++);
            enqueued[static_cast<size_t>(t)].push_back(v);
            q.enqueue(v);
          } else if (auto v = q.dequeue()) {
            dequeued[static_cast<size_t>(t)].push_back(*v);
          }
          if ((i & 1023) == 0) {
            max_delayed[static_cast<size_t>(t)] =
                std::max(max_delayed[static_cast<size_t>(t)], q.delayed());
          }
        }
      });
    }
  }

  std::vector<uint64_t> all_in, all_out, drained;
  for (auto& v : enqueued) all_in.insert(all_in.end(), v.begin(), v.end());
  for (auto& v : dequeued) all_out.insert(all_out.end(), v.begin(), v.end());
  {
    auto g = q.register_thread();
    while (auto v = q.dequeue()) drained.push_back(*v);
  }
  check_producer_order(drained, kThreads);
  for (auto& v : dequeued) check_producer_order(v, kThreads);
  all_out.insert(all_out.end(), drained.begin(), drained.end());
  CHECK(oracle::multiset_difference(all_in, all_out).empty());
  CHECK(oracle::multiset_difference(all_out, all_in).empty());
  CHECK(q.delayed() == 0);

  // Two announcement slots per thread.
  for (size_t t = 0; t < kThreads; t++)
    CHECK(max_delayed[t] <= 3u * 2u * kMax * kMax + kMax);
}

TEST_CASE("stack histories linearize against a sequential stack") {
  constexpr int kRounds = 250;
  constexpr int kOpsPer = 3;
  for (int round = 0; round < kRounds; round++) {
    lf_stack<uint64_t> st(2);
    std::vector<std::vector<linearize::op>> logs(2);
    std::barrier<> gate(2);
    {
      std::vector<std::jthread> ts;
      for (int t = 0; t < 2; t++) {
        ts.emplace_back([&, t] {
          auto g = st.register_thread();
          std::mt19937_64 rng(
              0x11ce + static_cast<uint64_t>(round * 2 + t));
          gate.arrive_and_wait();
          for (int i = 0; i < kOpsPer; i++) {
            linearize::op o;
            o.thread = t;
            switch (rng() % 3) {
              case 0: {
                o.k = linearize::kind::push;
                o.arg = tagged(t, static_cast<uint64_t>(i + 1));
                o.invoke = linearize::stamp();
                st.push(o.arg);
                o.response = linearize::stamp();
                break;
              }
              case 1: {
                o.k = linearize::kind::pop;
                o.invoke = linearize::stamp();
                o.result = st.pop();
                o.response = linearize::stamp();
                break;
              }
              default: {
                o.k = linearize::kind::peek;
                o.invoke = linearize::stamp();
                o.result = st.peek();
                o.response = linearize::stamp();
                break;
              }
            }
            logs[static_cast<size_t>(t)].push_back(o);
          }
        });
      }
    }
    std::vector<linearize::op> hist;
    for (auto& l : logs) hist.insert(hist.end(), l.begin(), l.end());
    REQUIRE(linearize::check<linearize::seq_stack>(hist));
  }
}

TEST_CASE("queue histories linearize against a sequential queue") {
  constexpr int kRounds = 250;
  constexpr int kOpsPer = 3;
  for (int round = 0; round < kRounds; round++) {
    lf_queue<uint64_t> q(2);
    std::vector<std::vector<linearize::op>> logs(2);
    std::barrier<> gate(2);
    {
      std::vector<std::jthread> ts;
      for (int t = 0; t < 2; t++) {
        ts.emplace_back([&, t] {
          auto g = q.register_thread();
          std::mt19937_64 rng(
              0xf1f0 + static_cast<uint64_t>(round * 2 + t));
          gate.arrive_and_wait();
          for (int i = 0; i < kOpsPer; i++) {
            linearize::op o;
            o.thread = t;
            switch (rng() % 3) {
              case 0: {
                o.k = linearize::kind::push;
                o.arg = tagged(t, static_cast<uint64_t>(i + 1));
                o.invoke = linearize::stamp();
                q.enqueue(o.arg);
                o.response = linearize::stamp();
                break;
              }
              case 1: {
                o.k = linearize::kind::pop;
                o.invoke = linearize::stamp();
                o.result = q.dequeue();
                o.response = linearize::stamp();
                break;
              }
              default: {
                o.k = linearize::kind::peek;
                o.invoke = linearize::stamp();
                o.result = q.peek();
                o.response = linearize::stamp();
                break;
              }
            }
            logs[static_cast<size_t>(t)].push_back(o);
          }
        });
      }
    }
    std::vector<linearize::op> hist;
    for (auto& l : logs) hist.insert(hist.end(), l.begin(), l.end());
    REQUIRE(linearize::check<linearize::seq_queue>(hist));
  }
}

TEST_CASE("peek takes one announcement per call even under contention") {
  constexpr int kPeeks = 10000;

  SUBCASE("stack") {
    lf_stack<uint64_t> st(2);
    std::atomic<bool> stop{false};
    std::barrier<> gate(2);
    uint64_t acquires = 0, announces = 0;
    {
      std::jthread churn([&] {
        auto g = st.register_thread();
        gate.arrive_and_wait();
        uint64_t v = 1;
        while (!stop.load(std::memory_order_relaxed)) {
          st.push(v++);
          st.pop();
        }
      });
      std::jthread peeker([&] {
        auto g = st.register_thread();
        gate.arrive_and_wait();
        uint64_t a0 = g.reclaim_stats().acquires;
        uint64_t s0 = g.reclaim_stats().announce_stores;
        for (int i = 0; i < kPeeks; i++) st.peek();
        acquires = g.reclaim_stats().acquires - a0;
        announces = g.reclaim_stats().announce_stores - s0;
        stop.store(true, std::memory_order_relaxed);
      });
    }
    CHECK(acquires == kPeeks);
    CHECK(announces == kPeeks);
  }

  SUBCASE("queue") {
    lf_queue<uint64_t> q(2);
    std::atomic<bool> stop{false};
    std::barrier<> gate(2);
    uint64_t acquires = 0, announces = 0;
    {
      std::jthread churn([&] {
        auto g = q.register_thread();
        gate.arrive_and_wait();
        uint64_t v = 1;
        while (!stop.load(std::memory_order_relaxed)) {
          q.enqueue(v++);
          q.dequeue();
        }
      });
      std::jthread peeker([&] {
        auto g = q.register_thread();
        gate.arrive_and_wait();
        uint64_t a0 = g.reclaim_stats().acquires;
        uint64_t s0 = g.reclaim_stats().announce_stores;
        for (int i = 0; i < kPeeks; i++) q.peek();
        acquires = g.reclaim_stats().acquires - a0;
        announces = g.reclaim_stats().announce_stores - s0;
        stop.store(true, std::memory_order_relaxed);
      });
    }
    CHECK(acquires == kPeeks);
    CHECK(announces == kPeeks);
  }
}

TEST_CASE("containers draw cells from a block pool when given one") {
  constexpr int kThreads = 4;
  constexpr int kOps = 20000;
  constexpr int kCap = 800;  // per-thread live ceiling
  constexpr int kMax = kThreads + 1;

  SUBCASE("stack") {
    block_pool pool(16, kMax, 8192);
    lf_stack<uint64_t> st(kMax, &pool);
    std::vector<std::vector<uint64_t>> pushed(kThreads), popped(kThreads);
    std::barrier<> gate(kThreads);
    {
      std::vector<std::jthread> ts;
      for (int t = 0; t < kThreads; t++) {
        ts.emplace_back([&, t] {
          auto g = st.register_thread();
          std::mt19937_64 rng(0xb10c + static_cast<uint64_t>(t));
          uint64_t seq = 1;
          int live = 0;
          gate.arrive_and_wait();
          for (int i = 0; i < kOps; i++) {
            if (live < kCap && rng() % 2 == 0) {
              uint64_t v = tagged(t, seq++);
              pushed[static_cast<size_t>(t)].push_back(v);
              st.push(v);
              live++;
            } else if (auto v = st.pop()) {
              popped[static_cast<size_t>(t)].push_back(*v);
              live--;
            }
          }
        });
      }
    }
    std::vector<uint64_t> all_in, all_out;
    for (auto& v : pushed) all_in.insert(all_in.end(), v.begin(), v.end());
    for (auto& v : popped) all_out.insert(all_out.end(), v.begin(), v.end());
    {
      auto g = st.register_thread();
      while (auto v = st.pop()) all_out.push_back(*v);
    }
    CHECK(oracle::multiset_difference(all_in, all_out).empty());
    CHECK(oracle::multiset_difference(all_out, all_in).empty());
  }

  SUBCASE("queue") {
    block_pool pool(16, kMax, 8192);
    lf_queue<uint64_t> q(kMax, &pool);
    std::vector<std::vector<uint64_t>> enq(kThreads), deq(kThreads);
    std::barrier<> gate(kThreads);
    {
      std::vector<std::jthread> ts;
      for (int t = 0; t < kThreads; t++) {
        ts.emplace_back([&, t] {
          auto g = q.register_thread();
          std::mt19937_64 rng(0xfee1 + static_cast<uint64_t>(t));
          uint64_t seq = 1;
          int live = 0;
          gate.arrive_and_wait();
          for (int i = 0; i < kOps; i++) {
            if (live < kCap && rng() % 2 == 0) {
              uint64_t v = tagged(t, seq++);
              enq[static_cast<size_t>(t)].push_back(v);
              q.enqueue(v);
              live++;
            } else if (auto v = q.dequeue()) {
              deq[static_cast<size_t>(t)].push_back(*v);
              live--;
            }
          }
        });
      }
    }
    std::vector<uint64_t> all_in, all_out;
    for (auto& v : enq) all_in.insert(all_in.end(), v.begin(), v.end());
    for (auto& v : deq) all_out.insert(all_out.end(), v.begin(), v.end());
    {
      auto g = q.register_thread();
      while (auto v = q.dequeue()) all_out.push_back(*v);
      for (auto& v : deq) check_producer_order(v, kThreads);
    }
    CHECK(oracle::multiset_difference(all_in, all_out).empty());
    CHECK(oracle::multiset_difference(all_out, all_in).empty());
  }
}

namespace {

// Pulls everything out of the pool, one registration per slot so blocks
// parked in any slot's local state are reachable, and counts what comes
// out. Equal to the arena size exactly when no block was leaked or
// returned twice.
size_t drain_pool(block_pool& pool, int procs) {
  std::atomic<size_t> got{0};
  std::barrier<> gate(procs);
  std::vector<std::jthread> ts;
  for (int t = 0; t < procs; t++) {
    ts.emplace_back([&] {
      auto g = pool.register_thread();
      gate.arrive_and_wait();
      try {
        for (;;) {
          pool.allocate();
          got.fetch_add(1, std::memory_order_relaxed);
        }
      } catch (const std::runtime_error&) {
      }
    });
  }
  ts.clear();
  return got.load();
}

}  // namespace

TEST_CASE("every pool block is returned once the container is destroyed") {
  constexpr int kProcs = 3;

  SUBCASE("stack") {
    block_pool pool(16, kProcs, 64);
    {
      lf_stack<uint64_t> st(2, &pool);
      std::barrier<> gate(2);
      std::vector<std::jthread> ts;
      for (int t = 0; t < 2; t++) {
        ts.emplace_back([&, t] {
          auto g = st.register_thread();
          gate.arrive_and_wait();
          for (uint64_t i = 1; i <= 2000; i++) {
            st.push(tagged(t, i));
            if (i % 3 != 0) st.pop();
            if (i % 50 == 0)
              while (st.pop()) {
              }
          }
          while (st.pop()) {
          }
        });
      }
    }
    CHECK(drain_pool(pool, kProcs) == pool.arena_blocks());
  }

  SUBCASE("queue") {
    block_pool pool(16, kProcs, 64);
    {
      lf_queue<uint64_t> q(2, &pool);
      std::barrier<> gate(2);
      std::vector<std::jthread> ts;
      for (int t = 0; t < 2; t++) {
        ts.emplace_back([&, t] {
          auto g = q.register_thread();
          gate.arrive_and_wait();
          for (uint64_t i = 1; i <= 2000; i++) {
            q.enqueue(tagged(t, i));
            if (i % 3 != 0) q.dequeue();
            if (i % 50 == 0)
              while (q.dequeue()) {
              }
          }
          while (q.dequeue()) {
          }
        });
      }
    }
    CHECK(drain_pool(pool, kProcs) == pool.arena_blocks());
  }
}
