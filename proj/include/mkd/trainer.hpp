#pragma once

// Training loops: teacher training on cross-entropy, fixed-temperature KD,
// MKD, and the temperature grid search.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "mkd/augment.hpp"
#include "mkd/checkpoint.hpp"
#include "mkd/config.hpp"
#include "mkd/data.hpp"
#include "mkd/meta.hpp"
#include "mkd/metrics.hpp"

namespace mkd {

struct Splits {
  Dataset train;
  Dataset val;
  std::optional<Dataset> test;

  std::size_t classes() const { return train.classes; }
  std::size_t dim() const { return train.d; }
};

/// Loads or generates the data and carves out the held-out split.
inline Splits prepare_data(const DataConfig& c) {
  Dataset full, test;
  bool has_test = false;
  if (c.source == "mixture") {
    MixtureSpec spec = c.mixture;
    spec.seed = c.seed;
    spec.center_seed = c.seed;
    full = gaussian_mixture(spec);
    if (c.test_n > 0) {
      spec.n = c.test_n;
      spec.seed = c.seed + 0x5eed;
      test = gaussian_mixture(spec);
      test.name = "mixture/test";
      has_test = true;
    }
  } else if (c.source == "csv") {
    full = load_csv(c.train_path, c.classes);
    if (!c.test_path.empty()) {
      test = load_csv(c.test_path, full.classes);
      has_test = true;
    }
  } else {
    full = load_idx_dataset(c.train_path, c.train_labels, c.classes, "idx");
    if (!c.test_path.empty()) {
      test = load_idx_dataset(c.test_path, c.test_labels, full.classes, "idx/test");
      has_test = true;
    }
  }
  if (has_test && (test.d != full.d || test.classes != full.classes)) {
    throw ConfigError("data.test: feature width or class count differs from the training data");
  }
  auto [train, val] = split_train_val(full, {c.holdout, c.seed});
  Splits s{std::move(train), std::move(val), std::nullopt};
  if (has_test) s.test = std::move(test);
  return s;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Cross-entropy and accuracy against the hard labels, in chunks.
inline EvalResult evaluate(std::span<const Tensor> params, const Dataset& ds, double logit_scale = 1.0) {
  NoGradGuard ng;
  EvalResult r;
  const std::size_t chunk = 1024;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < ds.n; s += chunk) {
    idx.resize(std::min(chunk, ds.n - s));
    std::iota(idx.begin(), idx.end(), s);
    Batch b = make_batch(ds, idx);
    Tensor z = mlp_forward(params, b.x);
    if (logit_scale != 1.0) z = scalar_mul(z, logit_scale);
    r.loss += ce_loss(z, b.y).item() * static_cast<double>(idx.size());
    r.accuracy += static_cast<double>(idx.size() - count_incorrect(z, b.y));
  }
  r.loss /= static_cast<double>(ds.n);
  r.accuracy /= static_cast<double>(ds.n);
  return r;
}

namespace detail {

inline void emit_eval(MetricsWriter& w, const char* split, std::size_t step, std::size_t epoch, const EvalResult& e,
                      std::optional<double> tau_s, std::optional<double> tau_t, std::optional<double> lr) {
  MetricRecord r;
  r.step = step;
  r.epoch = epoch;
  r.split = split;
  r.loss = e.loss;
  r.accuracy = e.accuracy;
  r.tau_s = tau_s;
  r.tau_t = tau_t;
  r.lr = lr;
  w.emit(std::move(r));
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) { return mix_seed(seed, stream); }

}  // namespace detail

inline StudentOptimizer make_optimizer(const OptimConfig& o) {
  if (o.optimizer == "adamw") {
    AdamWState a;
    a.lr = o.lr;
    a.weight_decay = o.weight_decay;
    return a;
  }
  return SgdState{o.lr, o.momentum, o.weight_decay, {}};
}

// ---------------------------------------------------------------------------
// Teacher

inline MlpConfig teacher_config(const ExperimentConfig& c, const Splits& s) {
  return {s.dim(), c.teacher_hidden, s.classes()};
}

inline Checkpoint teacher_checkpoint(const TeacherParams& p, std::size_t epochs_done) {
  Checkpoint c;
  c.put_text("kind", "teacher");
  put_mlp(c, "model", p);
  c.put_scalar("state.epoch", static_cast<double>(epochs_done));
  return c;
}

inline TeacherParams load_teacher(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  if (c.text("kind") != "teacher") throw FormatError("'" + path + "' is not a teacher checkpoint");
  return get_mlp(c, "model", false);
}

/// Cross-entropy training with the [teacher_augment] pipeline and the [teacher] recipe.
inline TeacherParams train_teacher(const ExperimentConfig& c, const Splits& s, MetricsWriter& metrics) {
  const OptimConfig& o = c.teacher_optim;
  TeacherParams p = mlp_init(teacher_config(c, s), c.teacher_seed);
  StudentOptimizer opt = make_optimizer(o);
  EpochSampler sampler(s.train.n, o.batch_size, detail::stream_seed(c.teacher_seed, 1));
  std::size_t per_epoch = sampler.batches_per_epoch();
  std::size_t total = o.epochs * per_epoch, warmup = o.warmup_epochs * per_epoch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    std::mt19937_64 aug_rng(detail::stream_seed(c.teacher_seed, 1000 + epoch));
    double loss_sum = 0.0, correct = 0.0, lr = o.lr;
    for (const auto& idx : sampler.epoch(epoch)) {
      lr = cosine_schedule(step, total, warmup, o.lr, o.min_lr);
      student_learning_rate(opt) = lr;
      Batch b = make_batch(s.train, idx);
      Batch hard = b;
      if (!c.teacher_augment.empty()) b = augment_pipeline(b, c.teacher_augment, aug_rng);
      GradMap g;
      {
        TapeScope scope;
        Tensor z = mlp_forward(p, b.x);
        Tensor loss = ce_loss(z, b.y);
        loss_sum += loss.item() * static_cast<double>(idx.size());
        correct += static_cast<double>(idx.size() - count_incorrect(z, hard.y));
        g = backward(loss, std::span<const Tensor>(p.tensors));
      }
      if (!std::isfinite(g.norm())) {
        throw NumericalError("train_teacher: non-finite gradient at step " + std::to_string(step));
      }
      optimizer_step(p.tensors, g, opt);
      ++step;
    }
    MetricRecord r;
    r.step = step;
    r.epoch = epoch;
    r.split = "train";
    r.loss = loss_sum / static_cast<double>(s.train.n);
    r.accuracy = correct / static_cast<double>(s.train.n);
    r.lr = lr;
    metrics.emit(std::move(r));
    detail::emit_eval(metrics, "val", step, epoch, evaluate(p.tensors, s.val), {}, {}, lr);
    if (s.test) detail::emit_eval(metrics, "test", step, epoch, evaluate(p.tensors, *s.test), {}, {}, lr);
    metrics.flush();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Distillation

enum class Method { kd, mkd };

inline Method parse_method(const std::string& s) {
  if (s == "kd") return Method::kd;
  if (s == "mkd") return Method::mkd;
  throw ConfigError("method must be kd or mkd, got '" + s + "'");
}

/// One student trained against a frozen teacher. kd keeps the temperatures
/// fixed; mkd learns them with the bilevel step.
class DistillRun {
 public:
  DistillRun(const ExperimentConfig& cfg, const Splits& splits, const TeacherParams& teacher, Method method,
             std::optional<std::pair<double, double>> fixed_tau = std::nullopt)
      : cfg_(cfg),
        s_(splits),
        teacher_(teacher),
        method_(method),
        sampler_(splits.train.n, cfg.student_optim.batch_size, detail::stream_seed(cfg.seed, 1)),
        val_sampler_(splits.val.n, cfg.student_optim.batch_size, detail::stream_seed(cfg.seed, 2)) {
    if (teacher.config.output_dim != splits.classes()) {
      throw ConfigError("teacher predicts " + std::to_string(teacher.config.output_dim) +
                        " classes but the dataset has " + std::to_string(splits.classes()));
    }
    if (teacher.config.input_dim != splits.dim()) {
      throw ConfigError("teacher expects " + std::to_string(teacher.config.input_dim) +
                        " input features but the dataset has " + std::to_string(splits.dim()));
    }
    const OptimConfig& o = cfg.student_optim;
    student_ = mlp_init({splits.dim(), cfg.student_hidden, splits.classes()}, cfg.seed);
    opt_ = make_optimizer(o);
    double t0 = cfg.distill.tau_init;
    tau_ = fixed_tau.value_or(std::pair{t0, t0});
    if (method_ == Method::mkd) {
      meta_ = meta_init(t0, detail::stream_seed(cfg.seed, 3) ^ cfg.meta.init_seed);
      if (cfg.meta.optimizer == "gd") {
        meta_opt_ = PlainGradientState{cfg.meta.lr};
      } else {
        AdamWState a;
        a.lr = cfg.meta.lr;
        a.beta1 = cfg.meta.beta1;
        a.beta2 = cfg.meta.beta2;
        a.eps = cfg.meta.eps;
        a.weight_decay = cfg.meta.weight_decay;
        meta_opt_ = a;
      }
    }
    if (cfg.student_augment.empty()) {
      // No augmentation: the teacher sees the same inputs every epoch.
      NoGradGuard ng;
      teacher_logits_ = scaled(mlp_forward(teacher_, full_batch(s_.train).x));
    }
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  const StudentParams& student() const { return student_; }
  const MetaParams& meta() const { return meta_; }
  Method method() const { return method_; }

  std::pair<double, double> temperatures() const {
    if (method_ == Method::kd) return tau_;
    NoGradGuard ng;
    Temperatures t = tempnet_forward(meta_);
    return {t.student(), t.teacher()};
  }

  /// Runs epochs until `until_epoch` (exclusive) or the configured total.
  void run(MetricsWriter& metrics, std::size_t until_epoch = SIZE_MAX,
           const std::function<void(const DistillRun&)>& after_epoch = {}) {
    const OptimConfig& o = cfg_.student_optim;
    until_epoch = std::min(until_epoch, o.epochs);
    std::size_t per_epoch = sampler_.batches_per_epoch();
    std::size_t total = o.epochs * per_epoch, warmup = o.warmup_epochs * per_epoch;
    while (epoch_ < until_epoch) {
      std::mt19937_64 aug_rng(detail::stream_seed(cfg_.seed, 1000 + epoch_));
      bool meta_on = method_ == Method::mkd && epoch_ >= cfg_.meta.start_epoch &&
                     (cfg_.meta.end_epoch == 0 || epoch_ < cfg_.meta.end_epoch);
      double loss_sum = 0.0, correct = 0.0, lr = o.lr;
      for (const auto& idx : sampler_.epoch(epoch_)) {
        lr = cosine_schedule(step_, total, warmup, o.lr, o.min_lr);
        student_learning_rate(opt_) = lr;
        StepBatch train = train_batch(idx, aug_rng);
        KdStepResult r;
        if (method_ == Method::kd) {
          r = kd_step(student_, train, tau_.first, tau_.second, opt_, cfg_.distill.tau_squared);
        } else {
          Batch vb = make_batch(s_.val, val_sampler_.next());
          StepBatch val{vb.x, vb.y, {}};
          if (meta_on) meta_learning_rate(meta_opt_) = meta_rate(per_epoch);
          MkdStepOptions opt;
          opt.alpha = lr;
          opt.mode = cfg_.meta.grad;
          opt.objective = cfg_.meta.objective;
          opt.fd_eps = cfg_.meta.fd_eps;
          opt.tau_squared = cfg_.distill.tau_squared;
          opt.meta_active = meta_on;
          opt.step = step_;
          MetaStepTrace tr = mkd_step(student_, meta_, train, val, opt_, meta_opt_, opt);
          r = {tr.train_loss, tr.student_grad_norm, tr.train_correct};
          if (meta_on) {
            MetricRecord m;
            m.step = step_;
            m.epoch = epoch_;
            m.split = "meta";
            m.loss = tr.val_loss;
            m.tau_s = tr.tau_s;
            m.tau_t = tr.tau_t;
            m.lr = lr;
            m.meta_grad_norm = tr.meta_grad_norm;
            m.extra = {{"train_loss", tr.train_loss},
                       {"student_grad_norm", tr.student_grad_norm},
                       {"meta_lr", meta_learning_rate(meta_opt_)}};
            metrics.emit(std::move(m));
          }
        }
        loss_sum += r.loss * static_cast<double>(idx.size());
        correct += r.correct;
        ++step_;
      }
      auto [ts, tt] = temperatures();
      MetricRecord rec;
      rec.step = step_;
      rec.epoch = epoch_;
      rec.split = "train";
      rec.loss = loss_sum / static_cast<double>(s_.train.n);
      rec.accuracy = correct / static_cast<double>(s_.train.n);
      rec.tau_s = ts;
      rec.tau_t = tt;
      rec.lr = lr;
      metrics.emit(std::move(rec));
      last_val_ = evaluate(student_.tensors, s_.val);
      detail::emit_eval(metrics, "val", step_, epoch_, last_val_, ts, tt, lr);
      if (s_.test) {
        last_test_ = evaluate(student_.tensors, *s_.test);
        detail::emit_eval(metrics, "test", step_, epoch_, *last_test_, ts, tt, lr);
      }
      metrics.flush();
      ++epoch_;
      if (after_epoch) after_epoch(*this);
    }
  }

  EvalResult last_val() const { return last_val_; }
  std::optional<EvalResult> last_test() const { return last_test_; }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.put_text("kind", "student");
    c.put_text("method", method_ == Method::kd ? "kd" : "mkd");
    put_mlp(c, "model", student_);
    put_student_optimizer(c, "opt", opt_);
    c.put_scalar("state.epoch", static_cast<double>(epoch_));
    c.put_scalar("state.step", static_cast<double>(step_));
    c.put("state.val_sampler", Shape{2},
          {static_cast<double>(val_sampler_.pass()), static_cast<double>(val_sampler_.position())});
    if (method_ == Method::kd) {
      c.put("kd.tau", Shape{2}, {tau_.first, tau_.second});
    } else {
      put_meta(c, meta_);
      put_meta_optimizer(c, meta_opt_);
    }
    return c;
  }

  /// Continues from a checkpoint written by checkpoint() under the same config.
  void restore(const Checkpoint& c) {
    if (c.text("kind") != "student") throw FormatError("checkpoint is not a student checkpoint");
    if (c.text("method") != (method_ == Method::kd ? "kd" : "mkd")) {
      throw ConfigError("checkpoint was written by method '" + c.text("method") + "'");
    }
    StudentParams p = get_mlp(c, "model", true);
    if (p.config.widths() != student_.config.widths()) {
      throw ConfigError("checkpoint student architecture (" + describe_mlp(p.config) + ") differs from config (" +
                        describe_mlp(student_.config) + ")");
    }
    student_ = std::move(p);
    opt_ = get_student_optimizer(c, "opt");
    epoch_ = static_cast<std::size_t>(c.scalar("state.epoch"));
    step_ = static_cast<std::size_t>(c.scalar("state.step"));
    Tensor vs = c.tensor("state.val_sampler");
    val_sampler_.restore(static_cast<std::uint64_t>(vs[0]), static_cast<std::size_t>(vs[1]));
    if (method_ == Method::kd) {
      Tensor t = c.tensor("kd.tau");
      tau_ = {t[0], t[1]};
    } else {
      meta_ = get_meta(c);
      meta_opt_ = get_meta_optimizer(c);
    }
  }

 private:
  Tensor scaled(Tensor z) const {
    double k = cfg_.distill.teacher_scale;
    return k == 1.0 ? z : scalar_mul(z, k);
  }

  // Meta step size: cosine decay to zero across the active window, or constant.
  double meta_rate(std::size_t per_epoch) const {
    if (cfg_.meta.schedule == "constant") return cfg_.meta.lr;
    std::size_t last = cfg_.meta.end_epoch == 0 ? cfg_.student_optim.epochs
                                                : std::min(cfg_.meta.end_epoch, cfg_.student_optim.epochs);
    std::size_t begin = cfg_.meta.start_epoch * per_epoch, end = last * per_epoch;
    return cosine_schedule(step_ - begin, end - begin, 0, cfg_.meta.lr, 0.0);
  }

  StepBatch train_batch(const std::vector<std::size_t>& idx, std::mt19937_64& aug_rng) const {
    Batch b = make_batch(s_.train, idx);
    Tensor hard = b.y;
    if (!cfg_.student_augment.empty()) {
      b = augment_pipeline(b, cfg_.student_augment, aug_rng);
      NoGradGuard ng;
      return {b.x, hard, scaled(mlp_forward(teacher_, b.x))};
    }
    std::size_t c = s_.classes();
    std::vector<double> z(idx.size() * c);
    auto all = teacher_logits_.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(all.begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c,
                  z.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    return {b.x, hard, Tensor({idx.size(), c}, std::move(z))};
  }

  const ExperimentConfig& cfg_;
  const Splits& s_;
  const TeacherParams& teacher_;
  Method method_;
  StudentParams student_;
  StudentOptimizer opt_;
  MetaParams meta_;
  MetaOptimizer meta_opt_;
  std::pair<double, double> tau_;
  EpochSampler sampler_;
  CyclicSampler val_sampler_;
  Tensor teacher_logits_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  EvalResult last_val_;
  std::optional<EvalResult> last_test_;
};

// ---------------------------------------------------------------------------
// Grid search

struct GridCell {
  double tau_s = 0.0;
  double tau_t = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  std::optional<double> test_accuracy;
};

struct GridResult {
  std::vector<double> tau_s;  // row values
  std::vector<double> tau_t;  // column values; equals tau_s in shared mode
  bool shared = false;
  std::vector<GridCell> cells;  // shared: one per tau; else row-major tau_s x tau_t
  std::size_t argmax = 0;       // first cell with the highest validation accuracy
};

/// Worker count from MKD_THREADS, else the hardware concurrency.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("MKD_THREADS")) {
    std::string v = env;
    std::size_t n = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || p != v.data() + v.size() || n == 0) {
      throw ConfigError("MKD_THREADS must be a positive integer, got '" + v + "'");
    }
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Trains one kd student per cell. Cells run on up to `threads` workers;
/// results are stored by cell index so the output does not depend on scheduling.
inline GridResult grid_search(const ExperimentConfig& cfg, const Splits& splits, const TeacherParams& teacher,
                              const std::vector<double>& tau_s, const std::vector<double>& tau_t,
                              std::size_t threads) {
  if (tau_s.empty()) throw ConfigError("grid search: tau_s list is empty");
  for (double t : tau_s)
    if (!(t > 0.0)) throw ConfigError("grid search: non-positive temperature in tau_s");
  for (double t : tau_t)
    if (!(t > 0.0)) throw ConfigError("grid search: non-positive temperature in tau_t");
  GridResult g;
  g.tau_s = tau_s;
  g.shared = tau_t.empty();
  g.tau_t = g.shared ? tau_s : tau_t;
  if (g.shared) {
    for (double t : tau_s) g.cells.push_back({t, t, 0.0, 0.0, {}});
  } else {
    for (double s : tau_s)
      for (double t : tau_t) g.cells.push_back({s, t, 0.0, 0.0, {}});
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= g.cells.size()) return;
      try {
        GridCell& cell = g.cells[i];
        DistillRun run(cfg, splits, teacher, Method::kd, std::pair{cell.tau_s, cell.tau_t});
        MetricsWriter sink;
        run.run(sink);
        cell.val_accuracy = run.last_val().accuracy;
        cell.val_loss = run.last_val().loss;
        if (run.last_test()) cell.test_accuracy = run.last_test()->accuracy;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = g.cells.size();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, g.cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (std::size_t i = 1; i < g.cells.size(); ++i) {
    if (g.cells[i].val_accuracy > g.cells[g.argmax].val_accuracy) g.argmax = i;
  }
  return g;
}

inline nlohmann::ordered_json grid_to_json(const GridResult& g) {
  nlohmann::ordered_json j;
  j["mode"] = g.shared ? "shared" : "separate";
  j["tau_s"] = g.tau_s;
  j["tau_t"] = g.tau_t;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : g.cells) {
    nlohmann::ordered_json e;
    e["tau_s"] = c.tau_s;
    e["tau_t"] = c.tau_t;
    e["val_accuracy"] = c.val_accuracy;
    e["val_loss"] = c.val_loss;
    e["test_accuracy"] = c.test_accuracy ? nlohmann::ordered_json(*c.test_accuracy) : nlohmann::ordered_json(nullptr);
    cells.push_back(e);
  }
  j["cells"] = cells;
  if (!g.shared) {
    nlohmann::ordered_json m = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < g.tau_s.size(); ++r) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (std::size_t c = 0; c < g.tau_t.size(); ++c) row.push_back(g.cells[r * g.tau_t.size() + c].val_accuracy);
      m.push_back(row);
    }
    j["val_accuracy_matrix"] = m;
  }
  j["argmax"] = {{"index", g.argmax},
                 {"tau_s", g.cells[g.argmax].tau_s},
                 {"tau_t", g.cells[g.argmax].tau_t},
                 {"val_accuracy", g.cells[g.argmax].val_accuracy}};
  return j;
}

}  // namespace mkd
