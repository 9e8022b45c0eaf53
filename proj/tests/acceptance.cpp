// Acceptance checks, one line per criterion. Pass criterion numbers as
// arguments to run a subset; the exit status is nonzero when any fails.

#include "gradsuite.hpp"
#include "invariants.hpp"
#include "mmer/config.hpp"
#include "mmer/elimination.hpp"
#include "mmer/metrics.hpp"
#include "mmer/stats.hpp"
#include "mmer/synth.hpp"
#include "mmer/train.hpp"
#include "oracles.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace mmer;
using namespace mmer::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kInvariantTol = 1e-9;
constexpr double kCachedTol = 1e-10;
constexpr int kInvariantConfigs = 20;
constexpr double kCccFormulaTol = 1e-10;
constexpr double kAntiTol = 1e-8;
constexpr double kWelchPTol = 0.01;
constexpr double kOverfitCcc = 0.99;
constexpr double kHeldOutCcc = 0.7;
constexpr double kRidgeOracleCcc = 0.9;
constexpr double kFrequencyTol = 0.01;
constexpr double kAlpha = 0.05;
constexpr double kGradBudgetSeconds = 120;
constexpr double kOverfitBudgetSeconds = 300;
constexpr double kExperimentBudgetSeconds = 3600;

const fs::path kConfigs = fs::path(MMER_SOURCE_DIR) / "configs";

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

Outcome gradient_suite() {
  Outcome out;
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : primitive_cases()) {
    const PrimitiveResult r = check_primitive(c);
    if (r.worst >= worst) {
      worst = r.worst;
      worst_name = c.name;
    }
  }
  out.require(worst < kGradTolerance,
              std::to_string(primitive_cases().size()) + " primitives, worst " + fmt("%.2e", worst) + " (" + worst_name + ")");
  const auto model = full_model_gradcheck(17);
  out.require(model.max_relative_error() < kGradTolerance,
              "full model " + fmt("%.2e", model.max_relative_error()) + " (" + model.worst() + ")");
  const double elapsed = seconds_since(start);
  out.require(elapsed < kGradBudgetSeconds, fmt("%.1f s", elapsed));
  return out;
}

Outcome architecture_invariants() {
  Outcome out;
  const double reach = model_future_reachability(kInvariantConfigs, 101);
  const double enc = encoder_reachability(kInvariantConfigs, 102);
  const double blind = decoder_future_blindness(kInvariantConfigs, 103);
  const double perm = permutation_invariance(kInvariantConfigs, 104);
  const double cached = cached_vs_uncached(kInvariantConfigs, 105);
  out.require(reach <= kInvariantTol && enc <= kInvariantTol, "reachability " + fmt("%.1e", std::max(reach, enc)));
  out.require(blind == 0.0, "future blindness " + fmt("%.1e", blind));
  out.require(perm <= kInvariantTol, "permutation " + fmt("%.1e", perm));
  out.require(cached <= kCachedTol, "cached vs uncached " + fmt("%.1e", cached));
  out.detail += "; " + std::to_string(kInvariantConfigs) + " configs each";
  return out;
}

Outcome missing_modality_continuity() {
  Outcome out;
  Rng rng(31);
  ModelConfig cfg = small_config(3, 8);
  Model model = Model::init(cfg, rng);
  Batch batch = random_batch(cfg, 2, 12, rng);
  int finite = 0;
  for (unsigned mask = 1; mask < 8; ++mask) {
    ModalitySet subset;
    for (std::size_t m = 0; m < 3; ++m) {
      if (mask & (1u << m)) subset.push_back(m);
    }
    try {
      if (model_forward(model, batch, subset, {}).value().allFinite()) ++finite;
    } catch (const std::exception&) {
    }
  }
  out.require(finite == 7, std::to_string(finite) + "/7 subsets finite");
  return out;
}

Outcome metric_oracles() {
  Outcome out;
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Index n = 2 + static_cast<Index>(rng.below(200));
    Vector a(n), b(n);
    const double shift = rng.normal(), spread = 0.1 + rng.uniform() * 3.0;
    for (Index k = 0; k < n; ++k) {
      a(k) = rng.normal();
      b(k) = 0.5 * a(k) + spread * rng.normal() + shift;
    }
    const double ma = a.mean(), mb = b.mean();
    const double va = (a.array() - ma).square().mean(), vb = (b.array() - mb).square().mean();
    const double cov = ((a.array() - ma) * (b.array() - mb)).mean();
    const double direct = 2.0 * cov / (va + vb + (ma - mb) * (ma - mb) + kCccEpsilon);
    worst = std::max(worst, std::abs(ccc(a, b).value - direct));
  }
  out.require(worst <= kCccFormulaTol, "ccc vs formula " + fmt("%.1e", worst) + " over 1000 pairs");

  Vector y(5), neg(5);
  y << 1.0, 2.0, 3.0, 4.0, 5.0;
  neg = -y.array() + 6.0;
  const double anti = ccc(y, neg).value;
  out.require(std::abs(anti + 4.0 / (4.0 + kCccEpsilon)) < 1e-15 && std::abs(anti + 1.0) < kAntiTol,
              "anti-correlated " + fmt("%.12f", anti));

  const StatTestResult w = welch_t_test(kWelchA, kWelchB, Sidedness::TwoSided);
  out.require(std::abs(w.p - kWelchTwoSidedP) <= kWelchPTol && std::abs(w.t - kWelchT) < 1e-9,
              "welch t " + fmt("%.4f", w.t) + " dof " + fmt("%.2f", w.dof) + " p " + fmt("%.4f", w.p) +
                  " vs scipy p " + fmt("%.4f", kWelchTwoSidedP) + " (quoted reference t -2.22 p 0.036 does not match these samples)");

  std::size_t checked = 0, mismatched = 0;
  std::vector<double> p;
  for (std::size_t m = 1; m <= 4; ++m) {
    std::size_t total = 1;
    for (std::size_t k = 0; k < m; ++k) total *= 101;
    p.assign(m, 0.0);
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      for (std::size_t k = 0; k < m; ++k, c /= 101) p[k] = static_cast<double>(c % 101) / 100.0;
      if (holm_bonferroni(p, kAlpha) != holm_closed_testing(p, kAlpha)) ++mismatched;
      ++checked;
    }
  }
  out.require(mismatched == 0, "holm " + std::to_string(mismatched) + " mismatches over " + std::to_string(checked) + " vectors");
  return out;
}

Outcome learning_sanity() {
  Outcome out;
  {
    const auto start = Clock::now();
    const RunConfig cfg = load_config(kConfigs / "overfit.conf");
    DatasetSplits data = synth_generate(cfg.synth);
    data.val = data.train;
    const TrainResult run = train_run(cfg.model, cfg.train, data, 0, {});
    const double fit = evaluate(run.model, data.train, {}).ccc;
    const double elapsed = seconds_since(start);
    out.require(fit > kOverfitCcc && elapsed < kOverfitBudgetSeconds,
                "overfit train ccc " + fmt("%.4f", fit) + " after " + std::to_string(run.history.epochs.size()) +
                    " epochs in " + fmt("%.1f s", elapsed));
  }
  {
    const RunConfig cfg = load_config(kConfigs / "heldout.conf");
    const DatasetSplits data = synth_generate(cfg.synth);
    std::size_t dominant = 0;
    for (std::size_t m = 0; m < cfg.synth.modalities.size(); ++m) {
      if (cfg.synth.modalities[m].name == cfg.synth.dominant().name) dominant = m;
    }
    const double ridge = ridge_oracle_ccc(data.train, data.test, dominant);
    const TrainResult run = train_run(cfg.model, cfg.train, data, 0, {});
    const double held = evaluate(run.model, data.test, {}).ccc;
    out.require(ridge >= kRidgeOracleCcc, "ridge oracle " + fmt("%.4f", ridge));
    out.require(held >= kHeldOutCcc, "d_model " + std::to_string(cfg.model.d_model) + " held-out ccc " + fmt("%.4f", held));
  }
  return out;
}

Outcome qualitative_reproduction() {
  Outcome out;
  const auto start = Clock::now();
  const RunConfig cfg = load_config(kConfigs / "desk.conf");
  const DatasetSplits data = synth_generate(cfg.synth);
  const std::string dominant = "missing_" + cfg.synth.dominant().name;
  const std::string weakest = "missing_" + cfg.synth.weakest().name;
  const ExperimentReport report = multi_seed_experiment(cfg.model, cfg.train, data, cfg.train.seeds, "test");
  std::fprintf(stderr, "%s", render_table(report).c_str());

  const auto* drop = report.find_test("robustness", "standard", dominant, "ccc");
  const auto* flat = report.find_test("robustness", "standard", weakest, "ccc");
  const auto* gain = report.find_test("improvement", "optimized", dominant, "ccc");
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  out.require(drop && drop->reject && mean(report.cell("standard", dominant).ccc) < mean(report.cell("standard", "all").ccc),
              "standard " + dominant + " drop p " + fmt("%.2g", drop ? drop->p : 1.0));
  out.require(flat && !flat->reject, "standard " + weakest + " p " + fmt("%.2g", flat ? flat->p : 0.0));
  out.require(gain && gain->p < kAlpha,
              "optimized vs standard " + dominant + " ccc " + fmt("%.4f", mean(report.cell("optimized", dominant).ccc)) +
                  " vs " + fmt("%.4f", mean(report.cell("standard", dominant).ccc)) + " one-sided p " +
                  fmt("%.2g", gain ? gain->p : 1.0));
  const double elapsed = seconds_since(start);
  out.require(elapsed < kExperimentBudgetSeconds,
              std::to_string(report.seeds.size()) + " seeds in " + fmt("%.1f min", elapsed / 60.0));
  return out;
}

Outcome elimination_statistics() {
  Outcome out;
  const std::vector<ModalitySpec> declared{{"audio", 8}, {"video", 6}, {"physio", 3}};
  const std::vector<EliminationPolicy> policies{{{{"video", 0.25}}}, {{{"audio", 0.333}, {"video", 0.333}}}};
  constexpr int kDraws = 100000;
  for (const auto& policy : policies) {
    Rng rng(2023);
    std::map<std::string, int> counts;
    for (int i = 0; i < kDraws; ++i) {
      const EliminationDraw d = sample_elimination(policy, declared, rng);
      ++counts[d.eliminated ? declared[*d.eliminated].name : "none"];
    }
    double worst = std::abs(counts["none"] / double(kDraws) - policy.keep_all_probability());
    std::string desc;
    for (const auto& [name, rho] : policy.entries) {
      const double freq = counts[name] / double(kDraws);
      worst = std::max(worst, std::abs(freq - rho));
      desc += name + " " + fmt("%.4f", freq) + "/" + fmt("%.3f", rho) + " ";
    }
    out.require(worst <= kFrequencyTol, desc + "max dev " + fmt("%.4f", worst));
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MMER_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> files_below(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename().string().find("manifest") != std::string::npos) continue;
    files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

Outcome reproducibility() {
  Outcome out;
  const std::string conf = "'" + (kConfigs / "tiny.conf").string() + "'";
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* run : {"a", "b"}) {
    const fs::path root = scratch_dir(std::string("acceptance_repro_") + run);
    const std::string r = "'" + root.string() + "'";
    const bool ok = run_cli("synth --config " + conf + " --out " + r + "/data") == 0 &&
                    run_cli("train --config " + conf + " --data " + r + "/data --out " + r + "/train --seed 5") == 0 &&
                    run_cli("train --config " + conf + " --data " + r + "/data --out " + r +
                            "/train_opt --seed 5 --variant optimized") == 0 &&
                    run_cli("eval --checkpoint " + r + "/train/best.ckpt --data " + r + "/data --missing video --out " + r +
                            "/eval.json") == 0 &&
                    run_cli("experiment --config " + conf + " --data " + r + "/data --out " + r + "/experiment") == 0 &&
                    run_cli("trace --checkpoint " + r + "/train/best.ckpt --data " + r +
                            "/data --sample sample_000 --missing audio --out " + r + "/trace.csv") == 0;
    out.require(ok, std::string("pipeline ") + run);
    trees.push_back(files_below(root));
  }
  std::set<std::string> kinds;
  for (const auto& [name, bytes] : trees[0]) kinds.insert(fs::path(name).extension().string());
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) ++differing;
  }
  differing += trees[0].size() != trees[1].size();
  std::string kind_list;
  for (const auto& k : kinds) kind_list += (kind_list.empty() ? "" : ",") + k;
  out.require(differing == 0 && !trees[0].empty(), std::to_string(trees[0].size()) + " files (" + kind_list + "), " +
                                                       std::to_string(differing) + " differ");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, Outcome (*)()>> criteria{
      {1, gradient_suite},          {2, architecture_invariants}, {3, missing_modality_continuity},
      {4, metric_oracles},          {5, learning_sanity},         {6, qualitative_reproduction},
      {7, elimination_statistics},  {8, reproducibility}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
