#pragma once

// Experiment configuration: INI-style files read with Boost.PropertyTree,
// strict key checking, and validation with section-qualified messages.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mkd/augment.hpp"
#include "mkd/data.hpp"
#include "mkd/meta.hpp"

namespace mkd {

struct OptimConfig {
  std::string optimizer = "sgd";  // sgd | adamw
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double min_lr = 0.0005;
  double momentum = 0.9;  // sgd only
  double weight_decay = 5e-4;
  std::size_t warmup_epochs = 0;
};

struct DataConfig {
  std::string source = "mixture";  // mixture | csv | idx
  std::string train_path;
  std::string train_labels;  // idx only
  std::string test_path;
  std::string test_labels;  // idx only
  std::size_t classes = 0;  // 0 infers from the labels
  double holdout = 0.10;
  std::uint64_t seed = 0;  // data generation and split
  MixtureSpec mixture;
  std::size_t test_n = 0;  // mixture test set size, 0 for none
};

struct DistillConfig {
  std::string method = "kd";  // kd | mkd
  double tau_init = 4.0;
  bool tau_squared = false;
  double teacher_scale = 1.0;  // multiplies the teacher logits
};

struct MetaConfig {
  std::string optimizer = "adamw";  // adamw | gd
  std::string schedule = "cosine";  // cosine | constant, over the active window
  double lr = 3e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  MetaObjective objective = MetaObjective::eq8;
  MetaGradMode grad = MetaGradMode::exact;
  double fd_eps = 0.0;  // 0 selects 0.01 / |v|
  std::size_t start_epoch = 0;
  std::size_t end_epoch = 0;  // exclusive; 0 means through the last epoch
  std::uint64_t init_seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  std::vector<std::size_t> teacher_hidden{256, 256};
  OptimConfig teacher_optim;
  std::uint64_t teacher_seed = 0;
  std::vector<std::size_t> student_hidden{32};
  OptimConfig student_optim;
  std::uint64_t seed = 0;
  AugmentConfig teacher_augment;
  AugmentConfig student_augment;
  DistillConfig distill;
  MetaConfig meta;
  std::vector<double> grid_tau_s{0.75, 1, 2, 3, 4, 6, 9};
  std::vector<double> grid_tau_t;  // empty selects shared-temperature mode
  std::string out_dir = "runs/default";
  std::string teacher_path;
};

inline const char* to_string(MetaObjective o) { return o == MetaObjective::eq8 ? "eq8" : "ce"; }
inline const char* to_string(MetaGradMode m) { return m == MetaGradMode::exact ? "exact" : "fd"; }

inline MetaObjective parse_objective(const std::string& s) {
  if (s == "eq8") return MetaObjective::eq8;
  if (s == "ce") return MetaObjective::ce;
  throw ConfigError("meta objective must be eq8 or ce, got '" + s + "'");
}

inline MetaGradMode parse_grad_mode(const std::string& s) {
  if (s == "exact") return MetaGradMode::exact;
  if (s == "fd") return MetaGradMode::fd;
  throw ConfigError("meta gradient mode must be exact or fd, got '" + s + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

inline double parse_double(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + raw + "'");
  }
  return v;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& raw, F&& one) {
  std::vector<T> out;
  std::string s = trim(raw);
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(one(key, item));
  return out;
}

}  // namespace detail

inline std::vector<double> parse_double_list(const std::string& key, const std::string& raw) {
  return detail::parse_list<double>(key, raw, detail::parse_double);
}

inline std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& raw) {
  return detail::parse_list<std::size_t>(key, raw, [](const std::string& k, const std::string& v) {
    return static_cast<std::size_t>(detail::parse_count(k, v));
  });
}

namespace detail {

// Binds "section.key" names to setters and rejects anything unknown.
class KeyTable {
 public:
  using Setter = std::function<void(const std::string& key, const std::string& value)>;

  void add(const std::string& name, Setter s) { setters_[name] = std::move(s); }

  void apply(const boost::property_tree::ptree& tree) {
    for (const auto& [section, body] : tree) {
      if (body.empty()) {
        throw ConfigError("'" + section + "' must appear inside a [section]");
      }
      for (const auto& [key, value] : body) {
        std::string name = section + "." + key;
        auto it = setters_.find(name);
        if (it == setters_.end()) throw ConfigError("unknown config key [" + section + "] " + key);
        it->second(name, value.data());
      }
    }
  }

 private:
  std::map<std::string, Setter> setters_;
};

inline void bind_optim(KeyTable& t, const std::string& sec, OptimConfig& o) {
  t.add(sec + ".optimizer", [&o](auto&, auto& v) { o.optimizer = trim(v); });
  t.add(sec + ".epochs", [&o](auto& k, auto& v) { o.epochs = parse_count(k, v); });
  t.add(sec + ".batch_size", [&o](auto& k, auto& v) { o.batch_size = parse_count(k, v); });
  t.add(sec + ".lr", [&o](auto& k, auto& v) { o.lr = parse_double(k, v); });
  t.add(sec + ".min_lr", [&o](auto& k, auto& v) { o.min_lr = parse_double(k, v); });
  t.add(sec + ".momentum", [&o](auto& k, auto& v) { o.momentum = parse_double(k, v); });
  t.add(sec + ".weight_decay", [&o](auto& k, auto& v) { o.weight_decay = parse_double(k, v); });
  t.add(sec + ".warmup_epochs", [&o](auto& k, auto& v) { o.warmup_epochs = parse_count(k, v); });
}

inline void bind_augment(KeyTable& t, const std::string& sec, AugmentConfig& a) {
  t.add(sec + ".crop_flip", [&a](auto& k, auto& v) { a.crop_flip = parse_bool(k, v); });
  t.add(sec + ".pad", [&a](auto& k, auto& v) { a.pad = parse_count(k, v); });
  t.add(sec + ".mixup", [&a](auto& k, auto& v) { a.mixup_alpha = parse_double(k, v); });
  t.add(sec + ".cutmix", [&a](auto& k, auto& v) { a.cutmix_alpha = parse_double(k, v); });
  t.add(sec + ".label_smoothing", [&a](auto& k, auto& v) { a.label_smoothing = parse_double(k, v); });
}

inline KeyTable key_table(ExperimentConfig& c) {
  KeyTable t;
  auto& d = c.data;
  t.add("data.source", [&d](auto&, auto& v) { d.source = trim(v); });
  t.add("data.train", [&d](auto&, auto& v) { d.train_path = trim(v); });
  t.add("data.train_labels", [&d](auto&, auto& v) { d.train_labels = trim(v); });
  t.add("data.test", [&d](auto&, auto& v) { d.test_path = trim(v); });
  t.add("data.test_labels", [&d](auto&, auto& v) { d.test_labels = trim(v); });
  t.add("data.classes", [&d](auto& k, auto& v) { d.classes = parse_count(k, v); });
  t.add("data.holdout", [&d](auto& k, auto& v) { d.holdout = parse_double(k, v); });
  t.add("data.seed", [&d](auto& k, auto& v) { d.seed = parse_count(k, v); });
  t.add("data.n", [&d](auto& k, auto& v) { d.mixture.n = parse_count(k, v); });
  t.add("data.dim", [&d](auto& k, auto& v) { d.mixture.d = parse_count(k, v); });
  t.add("data.mixture_classes", [&d](auto& k, auto& v) { d.mixture.classes = parse_count(k, v); });
  t.add("data.modes", [&d](auto& k, auto& v) { d.mixture.modes = parse_count(k, v); });
  t.add("data.center_scale", [&d](auto& k, auto& v) { d.mixture.center_scale = parse_double(k, v); });
  t.add("data.noise", [&d](auto& k, auto& v) { d.mixture.noise = parse_double(k, v); });
  t.add("data.label_noise", [&d](auto& k, auto& v) { d.mixture.label_noise = parse_double(k, v); });
  t.add("data.test_n", [&d](auto& k, auto& v) { d.test_n = parse_count(k, v); });

  t.add("teacher.hidden", [&c](auto& k, auto& v) { c.teacher_hidden = parse_count_list(k, v); });
  t.add("teacher.seed", [&c](auto& k, auto& v) { c.teacher_seed = parse_count(k, v); });
  bind_optim(t, "teacher", c.teacher_optim);

  t.add("student.hidden", [&c](auto& k, auto& v) { c.student_hidden = parse_count_list(k, v); });

  bind_optim(t, "train", c.student_optim);
  t.add("train.seed", [&c](auto& k, auto& v) { c.seed = parse_count(k, v); });

  bind_augment(t, "teacher_augment", c.teacher_augment);
  bind_augment(t, "student_augment", c.student_augment);

  auto& ds = c.distill;
  t.add("distill.method", [&ds](auto&, auto& v) { ds.method = trim(v); });
  t.add("distill.tau_init", [&ds](auto& k, auto& v) { ds.tau_init = parse_double(k, v); });
  t.add("distill.tau_squared", [&ds](auto& k, auto& v) { ds.tau_squared = parse_bool(k, v); });
  t.add("distill.teacher_scale", [&ds](auto& k, auto& v) { ds.teacher_scale = parse_double(k, v); });
  t.add("distill.teacher", [&c](auto&, auto& v) { c.teacher_path = trim(v); });

  auto& m = c.meta;
  t.add("meta.optimizer", [&m](auto&, auto& v) { m.optimizer = trim(v); });
  t.add("meta.schedule", [&m](auto&, auto& v) { m.schedule = trim(v); });
  t.add("meta.lr", [&m](auto& k, auto& v) { m.lr = parse_double(k, v); });
  t.add("meta.weight_decay", [&m](auto& k, auto& v) { m.weight_decay = parse_double(k, v); });
  t.add("meta.beta1", [&m](auto& k, auto& v) { m.beta1 = parse_double(k, v); });
  t.add("meta.beta2", [&m](auto& k, auto& v) { m.beta2 = parse_double(k, v); });
  t.add("meta.eps", [&m](auto& k, auto& v) { m.eps = parse_double(k, v); });
  t.add("meta.objective", [&m](auto&, auto& v) { m.objective = parse_objective(trim(v)); });
  t.add("meta.grad", [&m](auto&, auto& v) { m.grad = parse_grad_mode(trim(v)); });
  t.add("meta.fd_eps", [&m](auto& k, auto& v) { m.fd_eps = parse_double(k, v); });
  t.add("meta.start_epoch", [&m](auto& k, auto& v) { m.start_epoch = parse_count(k, v); });
  t.add("meta.end_epoch", [&m](auto& k, auto& v) { m.end_epoch = parse_count(k, v); });
  t.add("meta.init_seed", [&m](auto& k, auto& v) { m.init_seed = parse_count(k, v); });

  t.add("grid.tau_s", [&c](auto& k, auto& v) { c.grid_tau_s = parse_double_list(k, v); });
  t.add("grid.tau_t", [&c](auto& k, auto& v) { c.grid_tau_t = parse_double_list(k, v); });

  t.add("output.dir", [&c](auto&, auto& v) { c.out_dir = trim(v); });
  return t;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  detail::key_table(c).apply(tree);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

enum class Command { train_teacher, distill, grid_search };

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void validate_optim(const OptimConfig& o, const std::string& sec) {
  check(o.optimizer == "sgd" || o.optimizer == "adamw", sec + ".optimizer: must be sgd or adamw, got '" + o.optimizer + "'");
  check(o.batch_size >= 1, sec + ".batch_size: must be at least 1");
  check(o.lr > 0.0 && std::isfinite(o.lr), sec + ".lr: must be positive");
  check(o.min_lr >= 0.0 && o.min_lr <= o.lr, sec + ".min_lr: must lie in [0, lr]");
  check(o.momentum >= 0.0 && o.momentum < 1.0, sec + ".momentum: must lie in [0, 1)");
  check(o.weight_decay >= 0.0, sec + ".weight_decay: must be non-negative");
  check(o.warmup_epochs <= o.epochs, sec + ".warmup_epochs: exceeds epochs");
}

inline void validate_hidden(const std::vector<std::size_t>& h, const std::string& key) {
  for (auto w : h) check(w >= 1, key + ": every hidden width must be at least 1");
}

inline void validate_augment(const AugmentConfig& a, const std::string& sec, const std::string& source) {
  check(a.mixup_alpha >= 0.0, sec + ".mixup: must be non-negative");
  check(a.cutmix_alpha >= 0.0, sec + ".cutmix: must be non-negative");
  check(a.label_smoothing >= 0.0 && a.label_smoothing < 1.0, sec + ".label_smoothing: must lie in [0, 1)");
  bool image_ops = a.crop_flip || a.cutmix_alpha > 0.0;
  check(!image_ops || source == "idx", sec + ": crop_flip and cutmix need image data (data.source = idx)");
}

}  // namespace detail

/// Full validation for the given command; throws ConfigError naming the key.
inline void validate_config(const ExperimentConfig& c, Command cmd) {
  using detail::check;
  const auto& d = c.data;
  check(d.source == "mixture" || d.source == "csv" || d.source == "idx",
        "data.source: must be mixture, csv or idx, got '" + d.source + "'");
  check(d.holdout > 0.0 && d.holdout < 1.0, "data.holdout: must lie in (0, 1)");
  if (d.source == "mixture") {
    check(d.mixture.n >= 2, "data.n: need at least 2 samples");
    check(d.mixture.d >= 1, "data.dim: must be at least 1");
    check(d.mixture.classes >= 2, "data.mixture_classes: need at least 2 classes");
    check(d.mixture.modes >= 1, "data.modes: must be at least 1");
    check(d.mixture.noise >= 0.0, "data.noise: must be non-negative");
    check(d.mixture.label_noise >= 0.0 && d.mixture.label_noise <= 1.0, "data.label_noise: must lie in [0, 1]");
    check(d.classes == 0 || d.classes == d.mixture.classes, "data.classes: disagrees with data.mixture_classes");
  } else {
    check(!d.train_path.empty(), "data.train: required for source " + d.source);
    if (d.source == "idx") check(!d.train_labels.empty(), "data.train_labels: required for idx data");
    if (d.source == "idx" && !d.test_path.empty()) {
      check(!d.test_labels.empty(), "data.test_labels: required with an idx test set");
    }
  }

  detail::validate_augment(c.teacher_augment, "teacher_augment", d.source);
  detail::validate_augment(c.student_augment, "student_augment", d.source);

  if (cmd == Command::train_teacher) {
    detail::validate_hidden(c.teacher_hidden, "teacher.hidden");
    detail::validate_optim(c.teacher_optim, "teacher");
    return;
  }

  detail::validate_hidden(c.student_hidden, "student.hidden");
  detail::validate_optim(c.student_optim, "train");
  check(!c.teacher_path.empty(), "distill.teacher: a teacher checkpoint is required (--teacher PATH)");
  check(c.distill.method == "kd" || c.distill.method == "mkd",
        "distill.method: must be kd or mkd, got '" + c.distill.method + "'");
  check(c.distill.teacher_scale > 0.0 && std::isfinite(c.distill.teacher_scale),
        "distill.teacher_scale: must be positive");
  const auto& m = c.meta;
  if (cmd == Command::distill && c.distill.method == "mkd") {
    check(c.distill.tau_init > 0.5, "distill.tau_init: must exceed 0.5 for mkd");
  } else {
    check(c.distill.tau_init > 0.0, "distill.tau_init: must be positive");
  }
  check(m.optimizer == "adamw" || m.optimizer == "gd", "meta.optimizer: must be adamw or gd");
  check(m.schedule == "cosine" || m.schedule == "constant", "meta.schedule: must be cosine or constant");
  check(m.lr >= 0.0, "meta.lr: must be non-negative");
  check(m.weight_decay >= 0.0, "meta.weight_decay: must be non-negative");
  check(m.beta1 >= 0.0 && m.beta1 < 1.0, "meta.beta1: must lie in [0, 1)");
  check(m.beta2 >= 0.0 && m.beta2 < 1.0, "meta.beta2: must lie in [0, 1)");
  check(m.eps > 0.0, "meta.eps: must be positive");
  check(m.fd_eps >= 0.0, "meta.fd_eps: must be non-negative");
  check(m.end_epoch == 0 || m.start_epoch < m.end_epoch, "meta.end_epoch: window is empty");

  if (cmd == Command::grid_search) {
    check(!c.grid_tau_s.empty(), "grid.tau_s: needs at least one temperature");
    for (double t : c.grid_tau_s) check(t > 0.0, "grid.tau_s: temperatures must be positive");
    for (double t : c.grid_tau_t) check(t > 0.0, "grid.tau_t: temperatures must be positive");
  }
}

}  // namespace mkd
