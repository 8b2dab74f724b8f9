// mkd: teacher training, fixed-temperature and meta-learned distillation,
// temperature grid search and gradient self-checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mkd/gradcheck.hpp"
#include "mkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace mkd;

namespace {

struct Options {
  std::string config;
  std::string method;
  std::string teacher;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string tau_s;
  std::string tau_t;
  std::string meta_objective;
  std::string meta_grad;
  std::string resume;
  std::size_t until_epoch = SIZE_MAX;
  std::size_t trials = 100;
};

ExperimentConfig resolve(const Options& o, Command cmd) {
  ExperimentConfig c = load_config(o.config);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) (cmd == Command::train_teacher ? c.teacher_seed : c.seed) = *o.seed;
  if (!o.teacher.empty()) c.teacher_path = o.teacher;
  if (!o.method.empty()) c.distill.method = o.method;
  if (!o.meta_objective.empty()) c.meta.objective = parse_objective(o.meta_objective);
  if (!o.meta_grad.empty()) c.meta.grad = parse_grad_mode(o.meta_grad);
  if (!o.tau_s.empty()) c.grid_tau_s = parse_double_list("--tau-s", o.tau_s);
  if (!o.tau_t.empty()) c.grid_tau_t = parse_double_list("--tau-t", o.tau_t);
  validate_config(c, cmd);
  return c;
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write '" + p.string() + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_train_teacher(const Options& o) {
  ExperimentConfig c = resolve(o, Command::train_teacher);
  Splits s = prepare_data(c.data);
  teacher_config(c, s).validate();
  prepare_out_dir(c.out_dir);

  fs::path out = c.out_dir;
  MetricsWriter metrics((out / "metrics.jsonl").string());
  TeacherParams t = train_teacher(c, s, metrics);
  save_checkpoint(teacher_checkpoint(t, c.teacher_optim.epochs), (out / "teacher.ckpt").string());
  EvalResult val = evaluate(t.tensors, s.val);
  std::cout << "teacher " << describe_mlp(t.config) << "\n"
            << "val accuracy " << val.accuracy << "  loss " << val.loss << "\n";
  if (s.test) std::cout << "test accuracy " << evaluate(t.tensors, *s.test).accuracy << "\n";
  std::cout << "wrote " << (out / "teacher.ckpt").string() << "\n";
  return 0;
}

int cmd_distill(const Options& o) {
  ExperimentConfig c = resolve(o, Command::distill);
  TeacherParams teacher = load_teacher(c.teacher_path);
  Splits s = prepare_data(c.data);
  Method method = parse_method(c.distill.method);
  DistillRun run(c, s, teacher, method);
  if (!o.resume.empty()) run.restore(load_checkpoint(o.resume));
  prepare_out_dir(c.out_dir);

  fs::path out = c.out_dir;
  std::string ckpt = (out / "student.ckpt").string();
  MetricsWriter metrics((out / "metrics.jsonl").string(), !o.resume.empty());
  bool saved = false;
  run.run(metrics, o.until_epoch, [&](const DistillRun& r) {
    save_checkpoint(r.checkpoint(), ckpt);
    saved = true;
  });
  if (!saved) save_checkpoint(run.checkpoint(), ckpt);

  auto [ts, tt] = run.temperatures();
  nlohmann::ordered_json summary;
  summary["method"] = c.distill.method;
  summary["seed"] = c.seed;
  summary["epochs"] = run.epoch();
  summary["steps"] = run.step();
  summary["tau_s"] = ts;
  summary["tau_t"] = tt;
  summary["val_accuracy"] = run.last_val().accuracy;
  summary["val_loss"] = run.last_val().loss;
  if (run.last_test()) summary["test_accuracy"] = run.last_test()->accuracy;
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_grid_search(const Options& o) {
  ExperimentConfig c = resolve(o, Command::grid_search);
  TeacherParams teacher = load_teacher(c.teacher_path);
  Splits s = prepare_data(c.data);
  DistillRun probe(c, s, teacher, Method::kd);  // dataset/teacher compatibility
  std::size_t threads = worker_threads();
  prepare_out_dir(c.out_dir);

  GridResult g = grid_search(c, s, teacher, c.grid_tau_s, c.grid_tau_t, threads);
  fs::path out = c.out_dir;
  write_text(out / "grid.json", grid_to_json(g).dump(2) + "\n");
  std::string csv = "tau_s,tau_t,val_accuracy,val_loss,test_accuracy\n";
  for (const auto& cell : g.cells) {
    csv += fmt(cell.tau_s) + "," + fmt(cell.tau_t) + "," + fmt(cell.val_accuracy) + "," + fmt(cell.val_loss) + "," +
           (cell.test_accuracy ? fmt(*cell.test_accuracy) : "") + "\n";
  }
  write_text(out / "grid.csv", csv);

  std::printf("%8s %8s %10s\n", "tau_s", "tau_t", "val_acc");
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    const auto& cell = g.cells[i];
    std::printf("%8g %8g %10.4f%s\n", cell.tau_s, cell.tau_t, cell.val_accuracy, i == g.argmax ? "  *" : "");
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  auto rows = run_gradcheck_suite(o.trials);
  bool ok = true;
  for (const auto& r : rows) {
    std::printf("%-4s %-48s error %.3e  tol %.1e%s%s\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.error,
                r.tolerance, r.detail.empty() ? "" : "  ", r.detail.c_str());
    ok = ok && r.passed;
  }
  std::printf("%s: %zu checks\n", ok ? "all passed" : "FAILED", rows.size());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distillation with meta-learned temperatures"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "run seed (teacher.seed for train-teacher, train.seed otherwise)");
    sub->add_option("--out", o.out, "output directory");
  };

  auto* teacher = app.add_subcommand("train-teacher", "train a teacher with cross-entropy");
  add_common(teacher);

  auto* distill = app.add_subcommand("distill", "train a student with kd or mkd");
  add_common(distill);
  distill->add_option("--method", o.method, "kd | mkd")->check(CLI::IsMember({"kd", "mkd"}));
  distill->add_option("--teacher", o.teacher, "teacher checkpoint");
  distill->add_option("--meta-objective", o.meta_objective, "eq8 | ce")->check(CLI::IsMember({"eq8", "ce"}));
  distill->add_option("--meta-grad", o.meta_grad, "exact | fd")->check(CLI::IsMember({"exact", "fd"}));
  distill->add_option("--resume", o.resume, "continue from a student checkpoint")->check(CLI::ExistingFile);
  distill->add_option("--until-epoch", o.until_epoch, "stop after this many epochs (the schedule still spans all)");

  auto* grid = app.add_subcommand("grid-search", "fixed-temperature kd over a grid of temperatures");
  add_common(grid);
  grid->add_option("--teacher", o.teacher, "teacher checkpoint");
  grid->add_option("--tau-s", o.tau_s, "comma-separated student temperatures");
  grid->add_option("--tau-t", o.tau_t, "comma-separated teacher temperatures (omit for shared mode)");

  auto* check = app.add_subcommand("gradcheck", "finite-difference checks of every gradient path");
  check->add_option("--trials", o.trials, "random instances per primitive")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*teacher) return cmd_train_teacher(o);
    if (*distill) return cmd_distill(o);
    if (*grid) return cmd_grid_search(o);
    return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
