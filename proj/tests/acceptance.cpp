// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>

#include "mkd/gradcheck.hpp"
#include "mkd/trainer.hpp"

using namespace mkd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::vector<std::pair<int, Outcome>> results;

void report(int id, const char* title, Outcome o) {
  std::printf("[%s] %2d %s: %s\n", o.passed ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  results.push_back({id, std::move(o)});
}

template <class F>
void criterion(int id, const char* title, F&& body) {
  try {
    report(id, title, body());
  } catch (const std::exception& e) {
    report(id, title, {false, std::string("exception: ") + e.what()});
  }
}

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentConfig desk_config() { return load_config(std::string(MKD_SOURCE_DIR) + "/configs/desk.ini"); }

// 1 --------------------------------------------------------------------------
Outcome gradient_suite() {
  auto t0 = Clock::now();
  auto rows = run_first_order_checks(primitive_cases(), 100, 1e-6, 1e-5);
  double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : rows) {
    if (!(r.error <= worst)) {
      worst = r.error;
      worst_name = r.name;
    }
    if (!r.passed) failed += " " + r.name;
  }
  bool ok = failed.empty() && secs < 60.0;
  return {ok, format("%zu ops x 100 instances, h=1e-6, worst rel err %.2e (%s) <= 1e-5, %.1fs < 60s%s", rows.size(),
                     worst, worst_name.c_str(), secs, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// 2 --------------------------------------------------------------------------
Outcome second_order() {
  auto rows = run_second_order_checks(1e-8);
  double worst = 0.0;
  bool ok = true;
  for (const auto& r : rows) {
    worst = std::max(worst, r.error);
    ok = ok && r.passed;
  }
  ToyMetaResult toy = toy_meta_gradient(1.0, 0.0, 0.1);
  double toy_err = std::abs(toy.exact - 0.09);
  ok = ok && toy_err <= 1e-10;
  return {ok, format("%zu polynomial fixtures, worst err %.2e <= 1e-8; toy meta-gradient %.17g, |err| %.2e <= 1e-10",
                     rows.size(), worst, toy.exact, toy_err)};
}

// 3 --------------------------------------------------------------------------
Outcome meta_cross_check() {
  auto t0 = Clock::now();
  MetaCrossCheck mc = run_meta_cross_check(20, 0.1, MetaObjective::eq8, 1e-4);
  double secs = seconds_since(t0);
  MetaCrossCheck at_default = run_meta_cross_check(20, 0.1, MetaObjective::eq8, 0.01);
  bool ok = mc.instances == 20 && mc.min_cosine >= 0.999 && mc.max_relative_error <= 1e-3 && secs < 120.0;
  return {ok, format("20 instances, fd radius 1e-4: min cosine %.8f >= 0.999, max rel L2 %.2e <= 1e-3, %.1fs < 120s "
                     "(info: at the default radius 0.01, min cosine %.6f, max rel L2 %.2e)",
                     mc.min_cosine, mc.max_relative_error, secs, at_default.min_cosine,
                     at_default.max_relative_error)};
}

// 4 and 5 share the desk-scale runs -------------------------------------------
struct DeskRuns {
  std::vector<double> mkd_val;
  std::vector<std::vector<double>> kd_val;  // [seed][tau]
  std::vector<double> taus;
  std::size_t mkd_steps = 0;
  bool starts_at_init = true;
  std::size_t tau_records = 0;
  std::size_t tau_outside = 0;
  double tau_init = 0.0;
  double tau_lo = 1e300, tau_hi = -1e300;
  double secs = 0.0;
};

DeskRuns desk_runs() {
  auto t0 = Clock::now();
  DeskRuns d;
  ExperimentConfig cfg = desk_config();
  Splits splits = prepare_data(cfg.data);
  MetricsWriter sink;
  TeacherParams teacher = train_teacher(cfg, splits, sink);
  d.taus = cfg.grid_tau_s;
  d.tau_init = cfg.distill.tau_init;
  std::size_t threads = worker_threads();
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    GridResult g = grid_search(c, splits, teacher, d.taus, {}, threads);
    std::vector<double> row;
    for (const auto& cell : g.cells) row.push_back(cell.val_accuracy);
    d.kd_val.push_back(row);

    DistillRun run(c, splits, teacher, Method::mkd);
    auto [s0, t0v] = run.temperatures();
    d.starts_at_init = d.starts_at_init && s0 == d.tau_init && t0v == d.tau_init;
    MetricsWriter w;
    run.run(w);
    d.mkd_steps = std::max(d.mkd_steps, run.step());
    double lo = d.tau_init - 0.5, hi = d.tau_init + 0.5;
    for (const auto& r : w.records()) {
      for (const auto& t : {r.tau_s, r.tau_t}) {
        if (!t) continue;
        ++d.tau_records;
        d.tau_lo = std::min(d.tau_lo, *t);
        d.tau_hi = std::max(d.tau_hi, *t);
        if (!(*t > lo && *t < hi)) ++d.tau_outside;
      }
    }
    d.mkd_val.push_back(run.last_val().accuracy);
  }
  d.secs = seconds_since(t0);
  return d;
}

Outcome range_invariant(const DeskRuns& d) {
  bool ok = d.mkd_steps >= 1000 && d.tau_outside == 0 && d.starts_at_init && d.tau_records > 0;
  return {ok, format("%zu steps per run x 3 runs, %zu recorded temperatures in [%.6f, %.6f], %zu outside "
                     "(%.1f, %.1f); initial temperatures exactly tau_init: %s",
                     d.mkd_steps, d.tau_records, d.tau_lo, d.tau_hi, d.tau_outside, d.tau_init - 0.5,
                     d.tau_init + 0.5, d.starts_at_init ? "yes" : "no")};
}

Outcome desk_efficacy(const DeskRuns& d) {
  std::size_t n = d.mkd_val.size();
  double mkd_mean = 0.0;
  for (double v : d.mkd_val) mkd_mean += v / static_cast<double>(n);
  std::vector<double> kd_mean(d.taus.size(), 0.0);
  for (const auto& row : d.kd_val)
    for (std::size_t k = 0; k < row.size(); ++k) kd_mean[k] += row[k] / static_cast<double>(n);
  std::size_t best = 0;
  for (std::size_t k = 1; k < kd_mean.size(); ++k)
    if (kd_mean[k] > kd_mean[best]) best = k;
  double gap_pp = 100.0 * (mkd_mean - kd_mean[best]);
  std::string per_seed;
  for (std::size_t s = 0; s < n; ++s) {
    double b = *std::max_element(d.kd_val[s].begin(), d.kd_val[s].end());
    per_seed += format(" seed%zu mkd %.3f / best kd %.3f;", s + 1, d.mkd_val[s], b);
  }
  bool ok = gap_pp >= -0.5 && d.secs < 600.0;
  return {ok, format("mean over 3 seeds: mkd %.4f vs best kd (tau=%g) %.4f, difference %+.2f pp >= -0.5 pp, "
                     "%.0fs < 600s;%s",
                     mkd_mean, d.taus[best], kd_mean[best], gap_pp, d.secs, per_seed.c_str())};
}

// 6 --------------------------------------------------------------------------
Outcome reduction() {
  ExperimentConfig cfg = desk_config();
  cfg.student_optim.epochs = 5;
  cfg.teacher_optim.epochs = 2;
  cfg.meta.lr = 0.0;
  cfg.meta.weight_decay = 0.0;
  Splits splits = prepare_data(cfg.data);
  MetricsWriter sink;
  TeacherParams teacher = train_teacher(cfg, splits, sink);
  fs::path dir = fs::temp_directory_path() / "mkd_acceptance_reduction";
  fs::create_directories(dir);
  {
    MetricsWriter kd_w((dir / "kd.jsonl").string());
    DistillRun kd(cfg, splits, teacher, Method::kd);
    kd.run(kd_w);
    MetricsWriter mkd_w((dir / "mkd.jsonl").string());
    DistillRun mkd(cfg, splits, teacher, Method::mkd);
    mkd.run(mkd_w);
  }
  auto kd = read_metrics((dir / "kd.jsonl").string());
  auto mkd_all = read_metrics((dir / "mkd.jsonl").string());
  auto mkd = read_metrics((dir / "mkd.jsonl").string(), {"meta"});
  bool same = kd.size() == mkd.size();
  for (std::size_t i = 0; same && i < kd.size(); ++i) same = kd[i].dump() == mkd[i].dump();
  fs::remove_all(dir);
  return {same && !kd.empty(),
          format("meta lr 0: %zu kd records vs %zu mkd records after dropping %zu per-step meta records; "
                 "byte-identical ignoring wall_ms: %s",
                 kd.size(), mkd.size(), mkd_all.size() - mkd.size(), same ? "yes" : "no")};
}

// 7 --------------------------------------------------------------------------
Outcome degenerate_target() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_int_distribution<int> cls(0, 9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t b = 16, c = 10;
    std::vector<double> zs(b * c), zt(b * c, 0.0);
    std::vector<int> labels(b);
    for (double& v : zs) v = u(rng);
    for (std::size_t r = 0; r < b; ++r) {
      labels[r] = cls(rng);
      zt[r * c + static_cast<std::size_t>(labels[r])] = 1000.0;
    }
    Tensor s({b, c}, zs), t({b, c}, zt);
    double kd = kd_loss(s, t, Temperatures::fixed(1.0, 1.0)).item();
    double ce = ce_loss(s, one_hot(labels, c)).item();
    worst = std::max(worst, std::abs(kd - ce));
  }
  return {worst <= 1e-9, format("100 random 16x10 batches, margin-1000 teacher: max |kd - ce| %.2e <= 1e-9", worst)};
}

// 8 --------------------------------------------------------------------------
Outcome scale_compensation() {
  ExperimentConfig cfg = desk_config();
  Splits splits = prepare_data(cfg.data);
  MetricsWriter sink;
  TeacherParams teacher = train_teacher(cfg, splits, sink);
  const std::vector<double> tau_s{cfg.distill.tau_init};
  const std::vector<double> tau_t{0.75, 1, 1.5, 2, 3, 4, 6, 8, 9, 12, 18};
  std::size_t threads = worker_threads();
  GridResult plain = grid_search(cfg, splits, teacher, tau_s, tau_t, threads);
  ExperimentConfig scaled_cfg = cfg;
  scaled_cfg.distill.teacher_scale = 2.0;
  GridResult scaled = grid_search(scaled_cfg, splits, teacher, tau_s, tau_t, threads);

  double a = plain.cells[plain.argmax].tau_t, b = scaled.cells[scaled.argmax].tau_t;
  // Grid cell closest to 2a (in log scale), then allow it or a neighbour.
  std::size_t target = 0;
  for (std::size_t k = 1; k < tau_t.size(); ++k)
    if (std::abs(std::log(tau_t[k] / (2 * a))) < std::abs(std::log(tau_t[target] / (2 * a)))) target = k;
  std::size_t got = scaled.argmax;
  bool ok = (got + 1 >= target) && (got <= target + 1);
  // Exact compensation: the scaled cell at 2*tau equals the plain cell at tau.
  std::size_t exact_pairs = 0, exact_equal = 0;
  for (std::size_t i = 0; i < tau_t.size(); ++i)
    for (std::size_t j = 0; j < tau_t.size(); ++j)
      if (tau_t[j] == 2 * tau_t[i]) {
        ++exact_pairs;
        exact_equal += plain.cells[i].val_accuracy == scaled.cells[j].val_accuracy &&
                       plain.cells[i].val_loss == scaled.cells[j].val_loss;
      }
  std::string row_a, row_b;
  for (std::size_t k = 0; k < tau_t.size(); ++k) {
    row_a += format(" %g:%.3f", tau_t[k], plain.cells[k].val_accuracy);
    row_b += format(" %g:%.3f", tau_t[k], scaled.cells[k].val_accuracy);
  }
  return {ok, format("tau_s=%g; argmax tau_t unscaled %g, logits x2 %g, 2x = %g (grid target %g, +-1 cell); "
                     "%zu/%zu (tau, 2tau) cell pairs identical | unscaled%s | x2%s",
                     tau_s[0], a, b, 2 * a, tau_t[target], exact_equal, exact_pairs, row_a.c_str(), row_b.c_str())};
}

// 9 --------------------------------------------------------------------------
Outcome data_contract() {
  SplitIndices s1 = split_indices(50000, {0.10, 42});
  SplitIndices s2 = split_indices(50000, {0.10, 42});
  SplitIndices s3 = split_indices(50000, {0.10, 43});
  std::set<std::size_t> seen(s1.train.begin(), s1.train.end());
  std::size_t overlap = 0;
  for (auto i : s1.val) overlap += seen.count(i);
  seen.insert(s1.val.begin(), s1.val.end());
  bool ok = s1.train.size() == 45000 && s1.val.size() == 5000 && overlap == 0 && seen.size() == 50000 &&
            s1.train == s2.train && s1.val == s2.val && s1.val != s3.val;
  return {ok, format("train %zu, val %zu, overlap %zu, union %zu, same seed identical: %s, other seed differs: %s",
                     s1.train.size(), s1.val.size(), overlap, seen.size(),
                     (s1.train == s2.train && s1.val == s2.val) ? "yes" : "no", s1.val != s3.val ? "yes" : "no")};
}

// 10 -------------------------------------------------------------------------
Outcome meta_gating() {
  MetaInstance inst = random_meta_instance(5);
  inst.meta = meta_init(3.0, 17);
  const double alpha = 0.05;
  // Validation labels = predictions of the lookahead student, so nothing is misclassified.
  std::vector<Tensor> lookahead;
  {
    TapeScope scope;
    Tensor lt = distill_train_loss(inst.student.tensors, inst.train, tempnet_forward(inst.meta), false);
    GradMap g = backward(lt, std::span<const Tensor>(inst.student.tensors));
    NoGradGuard ng;
    for (const auto& t : inst.student.tensors) lookahead.push_back(t - scalar_mul(g[t], alpha));
  }
  Tensor z = mlp_forward(std::span<const Tensor>(lookahead), inst.val.x);
  std::vector<int> labels;
  for (auto k : argmax_rows(z)) labels.push_back(static_cast<int>(k));
  inst.val.y = one_hot(labels, z.size(1));

  Temperatures before = tempnet_forward(inst.meta);
  AdamWState adam;
  std::vector<std::vector<double>> expected;
  for (const auto& t : inst.meta.tensors()) {
    std::vector<double> v = t.values();
    for (double& x : v) x -= adam.lr * adam.weight_decay * x;
    expected.push_back(v);
  }
  MetaOptimizer opt = adam;
  SgdState sgd{alpha, 0.9, 5e-4, {}};
  MkdStepOptions o;
  o.alpha = alpha;
  o.objective = MetaObjective::eq8;
  MetaStepTrace tr = mkd_step(inst.student, inst.meta, inst.train, inst.val, sgd, opt, o);
  bool params_ok = true;
  auto after = inst.meta.tensors();
  for (std::size_t i = 0; i < after.size(); ++i) params_ok = params_ok && after[i].values() == expected[i];
  Temperatures now = tempnet_forward(inst.meta);
  bool temps_ok = now.student() == before.student() && now.teacher() == before.teacher();
  bool ok = tr.meta_grad_norm == 0.0 && tr.val_loss == 0.0 && params_ok && temps_ok;
  return {ok, format("0 incorrect of %zu: meta grad norm %g, meta loss %g, meta params = (1 - lr*wd) * before "
                     "exactly: %s, temperatures (%g, %g) unchanged: %s",
                     labels.size(), tr.meta_grad_norm, tr.val_loss, params_ok ? "yes" : "no", now.student(),
                     now.teacher(), temps_ok ? "yes" : "no")};
}

}  // namespace

int main() {
  auto t0 = Clock::now();
  criterion(1, "gradient suite", gradient_suite);
  criterion(2, "second-order correctness", second_order);
  criterion(3, "meta-gradient exact vs finite differences", meta_cross_check);
  DeskRuns desk;
  std::string desk_error;
  try {
    desk = desk_runs();
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  criterion(4, "temperature range invariant", [&] {
    return desk_error.empty() ? range_invariant(desk) : Outcome{false, "exception: " + desk_error};
  });
  criterion(5, "desk-scale MKD efficacy", [&] {
    return desk_error.empty() ? desk_efficacy(desk) : Outcome{false, "exception: " + desk_error};
  });
  criterion(6, "reduction to fixed-temperature KD", reduction);
  criterion(7, "degenerate-target equivalence", degenerate_target);
  criterion(8, "temperature/scale compensation", scale_compensation);
  criterion(9, "data contract", data_contract);
  criterion(10, "meta-loss gating", meta_gating);
  std::size_t passed = 0;
  for (const auto& [id, o] : results) passed += o.passed;
  std::printf("%zu/%zu criteria passed in %.0fs\n", passed, results.size(), seconds_since(t0));
  return passed == results.size() ? 0 : 1;
}
