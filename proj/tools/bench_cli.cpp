#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bench.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Load/store stress over an array of concurrently shared cells.\n"
      "Exits 0 only if every run finishes with zero violations."};

  bench::config cfg;
  std::vector<int> sweep;
  std::string csv_path;
  int fast_tries = 3;

  app.add_option("--impl", cfg.impl,
                 "cell implementation: refcount, weak-atomic-counted, "
                 "lock-baseline")
      ->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker count")
      ->capture_default_str();
  app.add_option("--n-refs", cfg.n_refs, "number of shared cells")
      ->capture_default_str();
  app.add_option("--store-prob", cfg.store_prob,
                 "probability an operation is a store")
      ->capture_default_str();
  app.add_option("--duration-s", cfg.duration_s, "seconds per run")
      ->capture_default_str();
  app.add_option("--ops", cfg.ops,
                 "run a fixed total op count instead of a duration");
  app.add_option("--seed", cfg.seed, "base RNG seed")->capture_default_str();
  app.add_option("--csv", csv_path, "also write results as CSV to this path");
  app.add_option("--sweep", sweep,
                 "comma-separated thread counts, one run each (overrides "
                 "--threads)")
      ->delimiter(',');
  app.add_option("--fast-tries", fast_tries,
                 "announce fast-path attempts before the wait-free fallback")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  bench::set_fast_path_tries(fast_tries);

  std::vector<int> thread_counts = sweep.empty() ? std::vector<int>{cfg.threads}
                                                 : sweep;
  std::vector<bench::result> results;
  try {
    for (int t : thread_counts) {
      bench::config c = cfg;
      c.threads = t;
      results.push_back(bench::run_workload(c));
    }
  } catch (const std::exception& e) {
    std::cerr << "bench_cli: " << e.what() << "\n";
    return 2;
  }

  bench::write_summary(std::cout, results);

  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) {
      std::cerr << "bench_cli: cannot open " << csv_path << "\n";
      return 2;
    }
    bench::write_csv(out, results);
    out.flush();
    if (!out) {
      std::cerr << "bench_cli: write failed for " << csv_path << "\n";
      return 2;
    }
  }

  uint64_t violations = 0;
  for (const auto& r : results) violations += r.violations;
  return violations == 0 ? 0 : 1;
}
