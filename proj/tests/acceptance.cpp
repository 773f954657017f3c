// One line per acceptance criterion. Criteria 1-8 gate the exit code;
// criterion 9 runs only with --long and never gates.
#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metriplector/harness.hpp"
#include "metriplector/parallel.hpp"

using namespace mtpl;
using nlohmann::json;

namespace {

struct Line {
  int id;
  bool pass;
  std::string summary;
  json details;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

bool all_pass(const std::vector<CheckReport>& rs) {
  for (const auto& r : rs)
    if (!r.pass) return false;
  return true;
}

std::string describe(const std::vector<CheckReport>& rs) {
  std::string s;
  for (const auto& r : rs) {
    if (!s.empty()) s += "; ";
    s += r.name + " " + fmt(r.max_error) + "/" + fmt(r.threshold) + " in " + fmt(r.seconds) + "s";
  }
  return s;
}

Line from_reports(int id, std::vector<CheckReport> rs, double time_limit = 0.0) {
  bool pass = all_pass(rs);
  double total = 0.0;
  for (const auto& r : rs) total += r.seconds;
  std::string s = describe(rs);
  if (time_limit > 0.0) {
    pass = pass && total < time_limit;
    s += "; total " + fmt(total) + "s (limit " + fmt(time_limit) + "s)";
  }
  return {id, pass, s, json(rs)};
}

Line maze_desk(std::uint64_t base_seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const MazeProtocol p;
  std::size_t f1_ok = 0, transfer_ok = 0;
  json runs = json::array();
  std::string s;
  for (std::uint64_t k = 0; k < 3; ++k) {
    const std::uint64_t seed = base_seed + k;
    const MazeRun on = maze_run(p, seed, true);
    const MazeRun off = maze_run(p, seed, false);
    f1_ok += on.f1_train_size >= 0.9;
    transfer_ok += on.f1_transfer >= off.f1_transfer;
    runs.push_back(on);
    runs.push_back(off);
    s += "seed " + std::to_string(seed) + ": F1(9) " + fmt(on.f1_train_size) + ", F1(19) " + fmt(on.f1_transfer) +
         " vs " + fmt(off.f1_transfer) + " without; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = f1_ok >= 2 && transfer_ok >= 2 && secs <= 900.0;
  s += std::to_string(f1_ok) + "/3 seeds F1>=0.9, " + std::to_string(transfer_ok) + "/3 transfer wins, " + fmt(secs) +
       "s (limit 900s)";
  return {8, pass, s, runs};
}

Line maze_long(std::uint64_t seed) {
  MazeProtocol p;
  p.train_mazes = 250;
  p.train_size = 15;
  p.eval_mazes = 50;
  p.transfer_size = 39;
  p.transfer_mazes = 200;
  p.train.steps = 10000;
  const MazeRun r = maze_run(p, seed, true);
  return {9, r.f1_transfer >= 0.95,
          "F1(15) " + fmt(r.f1_train_size) + ", F1(39) " + fmt(r.f1_transfer) + " (target 0.95), " + fmt(r.seconds) + "s",
          json(r)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool long_run = false;
  std::uint64_t seed = 0;
  std::vector<int> only;
  std::string json_out;
  int threads = 0;
  app.add_flag("--long", long_run, "Also run the long maze criterion (9)");
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--json", json_out, "Write the full report here");
  app.add_option("--threads", threads)->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_thread_count(threads);

  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int id) { return selected.empty() || selected.count(id); };

  std::vector<Line> lines;
  auto run = [&](int id, auto&& fn) {
    if (!want(id)) return;
    try {
      lines.push_back(fn());
    } catch (const std::exception& e) {
      lines.push_back({id, false, std::string("error: ") + e.what(), json()});
    }
    const Line& l = lines.back();
    std::cout << "criterion " << l.id << ": " << (l.pass ? "PASS" : "FAIL") << " | " << l.summary << std::endl;
  };

  run(1, [&] { return from_reports(1, {solve_oracle(seed, 200, 200, 4)}, 30.0); });
  run(2, [&] { return from_reports(2, {gradient_oracle(seed, 20, 50)}); });
  run(3, [&] { return from_reports(3, {dirichlet_oracle(seed, 50, 100)}); });
  run(4, [&] {
    return from_reports(4, {scan_oracle(seed, {1, 7, 1024, 100000}, 20), scan_causality(seed)}, 20.0);
  });
  run(5, [&] {
    return from_reports(5, {drift_identity(seed), drift_order(seed), dissipation_monotone(seed), skew_bitwise(seed)});
  });
  run(6, [&] { return from_reports(6, {readout_count(), shear_reconstruction(seed), dissipation_identity(seed)}); });
  run(7, [&] { return from_reports(7, {casimir_spectrum(seed)}); });
  run(8, [&] { return maze_desk(seed); });
  if (long_run && want(9)) {
    run(9, [&] { return maze_long(seed); });
  } else if (want(9)) {
    std::cout << "criterion 9: SKIP | long maze run, enable with --long (non-gating)" << std::endl;
  }

  if (!json_out.empty()) {
    json all = json::array();
    for (const auto& l : lines) all.push_back({{"criterion", l.id}, {"pass", l.pass}, {"summary", l.summary}, {"details", l.details}});
    std::ofstream(json_out) << all.dump(2) << '\n';
  }
  int failed = 0;
  for (const auto& l : lines) failed += !l.pass && l.id != 9;
  return failed == 0 ? 0 : 1;
}
