#include <cstdio>
#include "mixenc/bench.hpp"
using namespace mixenc;
int main(int argc, char** argv) {
  BenchConfig bc;
  bc.models = {"dual", "cross", "mix-a"};
  bc.n_list = {10, 100, 1000};
  bc.queries = 2;
  bc.reps = 5;
  if (argc > 1 && std::string(argv[1]) == "fast") { bc.n_list = {10, 100}; }
  auto rep = run_latency_bench(bc);
  std::printf("%s", bench_table(rep).c_str());
  return 0;
}
