#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

#include "arc/reclamation.hpp"
#include "doctest.h"
#include "support/canary.hpp"

namespace {

struct kill_deleter {
  canary::ledger* led;
  void operator()(canary::block* b) const { led->kill(b); }
};

using reclaimer = arc::memory_reclaimer<canary::block, kill_deleter>;

}  // namespace

TEST_CASE("protected_read passes the pointer through and returns the result") {
  canary::ledger led;
  reclaimer rec(2, 1, kill_deleter{&led});
  auto g = rec.register_thread();

  std::atomic<canary::block*> loc{led.make(41)};

  uint64_t got = rec.protected_read(
      loc, [](canary::block* b) { return b->payload + 1; });
  CHECK(got == 42);

  // A void callback works too.
  uint64_t seen = 0;
  rec.protected_read(loc, [&](canary::block* b) { seen = b->payload; });
  CHECK(seen == 41);

  rec.safe_free(loc.exchange(nullptr));
}

TEST_CASE("a block freed inside its own window outlives the window") {
  canary::ledger led;
  {
    reclaimer rec(2, 1, kill_deleter{&led});
    auto g = rec.register_thread();

    canary::block* b1 = led.make(7);
    std::atomic<canary::block*> loc{b1};

    rec.protected_read(loc, [&](canary::block* b) {
      loc.store(led.make(8));
      rec.safe_free(b);
      led.check_live(b);  // still protected by this very window
    });
    CHECK(rec.delayed() >= 1);
    rec.safe_free(loc.exchange(nullptr));
  }
  CHECK(led.violations() == 0);
  CHECK(led.killed() == led.made());
}

TEST_CASE("a free waits for a remote window and lands after release") {
  canary::ledger led;
  constexpr int kProcs = 4;
  reclaimer rec(kProcs, 1, kill_deleter{&led});
  auto g = rec.register_thread();

  canary::block* b1 = led.make(1);
  std::atomic<canary::block*> loc{b1};
  std::atomic<bool> inside{false}, done{false};

  std::thread holder([&] {
    auto hg = rec.register_thread();
    rec.protected_read(loc, [&](canary::block* b) {
      CHECK(b == b1);
      inside.store(true);
      while (!done.load()) std::this_thread::yield();
    });
  });
  while (!inside.load()) std::this_thread::yield();

  loc.store(led.make(2));
  rec.safe_free(b1);

  // Drive plenty of reclamation steps; b1 must survive them all.
  for (int i = 0; i < 6 * kProcs; i++) {
    canary::block* filler = led.make(100 + i);
    rec.safe_free(filler);
    CHECK(b1->state.load() == canary::kLive);
  }

  done.store(true);
  holder.join();

  // Released now: a bounded number of further steps flushes it out.
  for (int i = 0; i < 6 * kProcs && b1->state.load() == canary::kLive; i++)
    rec.safe_free(led.make(200 + i));
  CHECK(b1->state.load() == canary::kDead);

  rec.safe_free(loc.exchange(nullptr));
}

TEST_CASE("guard destruction drains every deferred block") {
  canary::ledger led;
  {
    reclaimer rec(2, 1, kill_deleter{&led});
    auto g = rec.register_thread();
    std::atomic<canary::block*> loc{nullptr};
    for (int i = 0; i < 100; i++) {
      canary::block* fresh = led.make(i);
      canary::block* old = loc.exchange(fresh);
      if (old) rec.safe_free(old);
    }
    rec.safe_free(loc.exchange(nullptr));
    CHECK(led.made() == 100);
  }
  CHECK(led.killed() == 100);
  CHECK(led.double_kills() == 0);
}

TEST_CASE("freeing the same block twice trips the tombstone check") {
  canary::ledger led;
  {
    reclaimer rec(2, 1, kill_deleter{&led});
    auto g = rec.register_thread();
    canary::block* b = led.make(9);
    rec.safe_free(b);
    rec.safe_free(b);
  }
  CHECK(led.killed() == 2);
  CHECK(led.double_kills() == 1);
}

TEST_CASE("the deleter is the constructor's functor, not a global") {
  static int counted = 0;
  struct counting_deleter {
    int* hits;
    void operator()(int* p) const {
      (*hits)++;
      delete p;
    }
  };
  {
    arc::memory_reclaimer<int, counting_deleter> rec(2, 1,
                                                     counting_deleter{&counted});
    auto g = rec.register_thread();
    for (int i = 0; i < 5; i++) rec.safe_free(new int(i));
  }
  CHECK(counted == 5);
}

TEST_CASE("canary stress: concurrent readers never observe a tombstone") {
  canary::ledger led;
  constexpr int kThreads = 4;
  constexpr int kMax = 8;
  constexpr int kLocs = 32;
  constexpr int kOps = 60000;
  const size_t census_bound = 3u * 1 * kMax * kMax;

  {
    reclaimer rec(kMax, 1, kill_deleter{&led});
    std::vector<std::atomic<canary::block*>> locs(kLocs);
    for (int i = 0; i < kLocs; i++) locs[i].store(led.make(i));

    std::atomic<uint64_t> census_max{0};
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; t++) {
      ts.emplace_back([&, t] {
        auto g = rec.register_thread();
        uint64_t s = 0x9e3779b97f4a7c15ull * (t + 1);
        for (int i = 0; i < kOps; i++) {
          uint64_t r = arc::mix64(s + i);
          auto& loc = locs[r % kLocs];
          if ((r >> 8) % 4 == 0) {
            canary::block* fresh = led.make(r);
            canary::block* old = loc.exchange(fresh);
            if (old) rec.safe_free(old);
          } else {
            rec.protected_read(loc, [&](canary::block* b) {
              led.check_live(b);
            });
          }
          if (i % 1024 == 0) {
            uint64_t d = rec.delayed();
            uint64_t seen = census_max.load();
            while (d > seen && !census_max.compare_exchange_weak(seen, d)) {
            }
            std::this_thread::yield();
          }
        }
      });
    }
    for (auto& t : ts) t.join();

    auto g = rec.register_thread();
    for (auto& loc : locs)
      if (canary::block* b = loc.exchange(nullptr)) rec.safe_free(b);

    CHECK(census_max.load() <= census_bound);
  }
  CHECK(led.violations() == 0);
  CHECK(led.double_kills() == 0);
  CHECK(led.killed() == led.made());
}
