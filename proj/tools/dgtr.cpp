// dgtr: data generation, training, evaluation and diagnostics.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dgtr/dgtr.hpp"

namespace {

using namespace dgtr;

std::string comment_lines(const std::string& text) {
  std::ostringstream os;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) os << "# " << line << '\n';
  return os.str();
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw Error("cannot open '" + out + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + out + "'");
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config c = path.empty() ? Config() : Config::load(path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    c.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  return c;
}

SyntheticBody load_body(const Config& c) {
  const std::string p = c.str("body.file");
  return SyntheticBody::load(p.empty() ? shipped_data_path("synthetic_body.bin") : p);
}

FeatureEmbedding load_embedding(const Config& c) {
  const std::string p = c.str("body.embedding");
  return FeatureEmbedding::load(p.empty() ? shipped_data_path("feature_embedding.bin") : p);
}

std::string env_data_dir() {
  const char* e = std::getenv("DGTR_DATA_DIR");
  return e ? std::string(e) : std::string();
}

/// data.dir, then $DGTR_DATA_DIR, else sequences generated from the data.* keys.
std::vector<Sequence> training_data(const Config& c) {
  std::string dir = c.str("data.dir");
  if (dir.empty()) dir = env_data_dir();
  if (!dir.empty()) {
    auto seqs = read_dataset(dir);
    if (seqs.empty()) throw Error("no .dgtr files in '" + dir + "'");
    return seqs;
  }
  return generate_dataset(dataset_spec(c), load_embedding(c));
}

template <class F>
auto with_precision(const std::string& precision, F&& f) {
  if (precision == "32") return f(float{});
  if (precision == "64") return f(double{});
  throw ConfigError("train.precision must be 32 or 64, got '" + precision + "'");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
}

template <class Real>
MetricReport train_and_report(const Config& cfg, bool write_outputs) {
  const ModelConfig mc = model_config(cfg);
  const TrainConfig tc = TrainConfig::from(cfg);
  const auto seqs = training_data(cfg);
  const SyntheticBody body = load_body(cfg);
  DgtrModel<Real> model(mc, tc.seed);
  const std::string echo = cfg.echo();
  const std::string ckpt = cfg.str("train.checkpoint");
  std::size_t epochs_seen = 0;
  TrainLog log = train(model, seqs, body, tc, [&](const EpochLog& e) {
    ++epochs_seen;
    std::cerr << "epoch " << e.epoch << " step " << e.step << " mpjpe " << e.metrics.mpjpe << " pa_mpjpe "
              << e.metrics.pa_mpjpe << '\n';
    if (write_outputs && !ckpt.empty()) make_checkpoint(model, echo, e.step).save(ckpt);
  });
  if (write_outputs) {
    write_text(cfg.str("train.log"), comment_lines(echo) + log.steps_csv());
    write_text(cfg.str("train.metrics_log"), comment_lines(echo) + log.epochs_csv());
  }
  MetricReport report = evaluate(model, seqs, body);
  warn(report.warnings);
  return report;
}

int cmd_gen_data(std::uint64_t seed, std::size_t sequences, std::size_t frames, const std::string& out,
                 double noise, const std::string& embedding) {
  if (frames < 3) throw ConfigError("--frames must be >= 3 (metrics use second differences)");
  if (out.empty()) throw ConfigError("--out is required");
  SyntheticDatasetSpec spec;
  spec.num_sequences = sequences;
  spec.seq_len = frames;
  spec.seed = seed;
  spec.noise = noise;
  const auto emb = FeatureEmbedding::load(embedding.empty() ? shipped_data_path("feature_embedding.bin") : embedding);
  const auto paths = write_dataset(generate_dataset(spec, emb), out);
  for (const auto& p : paths) std::cout << p << '\n';
  return 0;
}

int cmd_train(const Config& cfg, const std::string& out) {
  const MetricReport report = with_precision(cfg.str("train.precision"), [&](auto r) {
    return train_and_report<decltype(r)>(cfg, true);
  });
  emit(report.to_csv(cfg.echo()), out);
  return 0;
}

template <class Real>
MetricReport eval_checkpoint(const Checkpoint& ck, const Config& cfg, const std::vector<Sequence>& seqs,
                             std::optional<double> fps, bool gt_as_prediction) {
  const SyntheticBody body = load_body(cfg);
  const ModelConfig mc = model_config(cfg);
  if (gt_as_prediction) return evaluate(seqs, body, gt_predictor(), mc.seq_len, fps);
  DgtrModel<Real> model(mc, 0);
  restore(model, ck);
  return evaluate(model, seqs, body, fps);
}

int cmd_eval(const std::string& ckpt_path, std::string data, std::optional<double> fps, bool gt_as_prediction,
             const std::string& out) {
  if (data.empty()) data = env_data_dir();
  if (data.empty()) throw ConfigError("--data not given and DGTR_DATA_DIR unset");
  if (fps && !(*fps > 0.0)) throw ConfigError("--fps must be > 0");
  Checkpoint ck;
  Config cfg;
  if (!ckpt_path.empty()) {
    ck = Checkpoint::load(ckpt_path);
    cfg = ck.config();
  } else if (!gt_as_prediction) {
    throw ConfigError("--ckpt is required unless --gt-as-prediction is given");
  }
  const auto seqs = read_dataset(data);
  if (seqs.empty()) throw Error("no .dgtr files in '" + data + "'");
  const MetricReport report = with_precision(cfg.str("train.precision"), [&](auto r) {
    return eval_checkpoint<decltype(r)>(ck, cfg, seqs, fps, gt_as_prediction);
  });
  warn(report.warnings);
  emit(report.to_csv(cfg.echo()), out);
  return 0;
}

int cmd_grad_check(const std::vector<std::uint64_t>& seeds, double eps, double tol, const std::string& corrupt,
                   std::size_t width, std::size_t seq_len, const std::string& out) {
  const Config cfg;
  const SyntheticBody body = load_body(cfg);
  const FeatureEmbedding emb = load_embedding(cfg);
  std::ostringstream os;
  os << std::setprecision(6) << "seed,tensor,checked,max_rel,analytic,numeric,status\n";
  bool all_pass = true;
  for (auto seed : seeds) {
    DgtrModel<double> model(probe_model_config(width, seq_len), seed);
    const Sequence seq = gen_sequence(derive_seed(seed, 7), seq_len + 2, emb);
    GradCheckOptions opt;
    opt.eps = eps;
    opt.tolerance = tol;
    opt.seed = seed;
    opt.corrupt = corrupt;
    const std::size_t c = seq_len / 2;
    const GradCheckReport rep = grad_check(model, seq, {c, c + 1}, body, loss_weights(cfg), opt);
    for (const auto& t : rep.tensors) {
      os << seed << ',' << t.name << ',' << t.checked << ',' << t.max_rel << ',' << t.analytic << ','
         << t.numeric << ',' << (t.max_rel < tol ? "pass" : "FAIL") << '\n';
    }
    all_pass &= rep.pass();
  }
  emit(os.str(), out);
  if (!all_pass) {
    std::cerr << "dgtr: error: gradient check failed (relative error >= " << tol << ")\n";
    return 2;
  }
  return 0;
}

int cmd_receptive_field(const Config& cfg, std::uint64_t seed, const std::string& out) {
  ModelConfig base = model_config(cfg);
  const FeatureEmbedding emb = load_embedding(cfg);
  SyntheticDatasetSpec spec;
  const Sequence seq = gen_sequence(derive_seed(seed, 11), base.seq_len, emb, spec);
  const Tensor<double> window = gather_window<double>(seq, base.seq_len / 2, base.seq_len);
  std::ostringstream os;
  os << comment_lines(cfg.echo()) << std::setprecision(6) << "variant,frame,delta_norm,bitwise_equal\n";
  const std::pair<const char*, std::pair<bool, bool>> variants[] = {
      {"gma_only", {true, false}}, {"ldr_only", {false, true}}, {"full", {true, true}}};
  for (const auto& [name, use] : variants) {
    ModelConfig mc = base;
    mc.use_gma = use.first;
    mc.use_ldr = use.second;
    DgtrModel<double> model(mc, seed);
    Rng rng(derive_seed(seed, 12));
    for (const auto& r : frame_sensitivity(model, window, rng)) {
      os << name << ',' << r.frame << ',' << r.delta_norm << ',' << (r.bitwise_equal ? 1 : 0) << '\n';
    }
  }
  emit(os.str(), out);
  return 0;
}

int cmd_sweep(const Config& cfg, const std::vector<std::size_t>& values, const std::string& out) {
  std::ostringstream os;
  os << comment_lines(cfg.echo()) << std::setprecision(10) << "T,pa_mpjpe,mpjpe,mpvpe,acc_err\n";
  for (auto T : values) {
    Config c = cfg;
    c.set("model.seq_len", std::to_string(T));
    std::cerr << "sweep: T=" << T << '\n';
    const MetricReport r = with_precision(c.str("train.precision"), [&](auto p) {
      return train_and_report<decltype(p)>(c, false);
    });
    if (T < 3) std::cerr << "warning: ACC-ERR refused for T=" << T << " (needs >= 3 frames)\n";
    const auto& a = r.aggregate;
    os << T << ',' << a.pa_mpjpe << ',' << a.mpjpe << ',' << a.mpvpe << ',';
    if (std::isnan(a.acc_err)) os << "nan"; else os << a.acc_err;
    os << '\n';
  }
  emit(os.str(), out);
  return 0;
}

template <class Real>
std::vector<StitchRow> stitch_rows(const Checkpoint& ck, const Config& cfg, std::size_t reps, std::uint64_t seed) {
  DgtrModel<Real> model(model_config(cfg), 0);
  restore(model, ck);
  const Sequence seq = gen_stitched(seed, reps, model.config().seq_len, load_embedding(cfg));
  return stitched_deltas(model, seq, load_body(cfg));
}

int cmd_stitch_demo(const std::string& ckpt_path, std::size_t reps, std::uint64_t seed, const std::string& out) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  const Config cfg = ck.config();
  const auto rows = with_precision(cfg.str("train.precision"), [&](auto r) {
    return stitch_rows<decltype(r)>(ck, cfg, reps, seed);
  });
  emit(comment_lines(cfg.echo()) + stitch_csv(rows), out);
  return 0;
}

int cmd_profile(const Config& cfg, bool text, const std::string& out) {
  DgtrModel<float> model(model_config(cfg), 0);
  const CostTable t = profile(model);
  emit(text ? t.to_text() : comment_lines(cfg.echo()) + t.to_csv(), out);
  return 0;
}

std::vector<std::size_t> parse_values(const std::string& s) {
  std::vector<std::size_t> v;
  std::istringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) {
    std::size_t used = 0;
    unsigned long x = 0;
    try {
      x = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw ConfigError("--values: '" + tok + "' is not a positive integer");
    v.push_back(x);
  }
  if (v.empty()) throw ConfigError("--values is empty");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgtr: dual-branch temporal body regression on synthetic data"};
  app.require_subcommand(1);
  app.footer("Config keys (for --config files and --set):\n" + dgtr::Config::help());

  std::string config_path, out;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one config key, key=value (repeatable)");
  };

  std::uint64_t seed = 1;
  std::size_t sequences = 4, frames = 32;
  double noise = 0.01;
  std::string embedding;
  auto* gen = app.add_subcommand("gen-data", "write synthetic feature + ground-truth sequence files");
  gen->add_option("--seed", seed, "generation seed")->capture_default_str();
  gen->add_option("--sequences", sequences, "number of sequences")->capture_default_str();
  gen->add_option("--frames", frames, "frames per sequence (>= 3)")->capture_default_str();
  gen->add_option("--noise", noise, "feature noise standard deviation")->capture_default_str();
  gen->add_option("--embedding", embedding, "feature embedding file (default: shipped)");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint, loss log and metric log");
  add_config(tr);
  tr->add_option("--out", out, "final metric report path (default: stdout)");

  std::string ckpt, data;
  std::optional<double> fps;
  bool gt_pred = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a data directory");
  ev->add_option("--ckpt", ckpt, "checkpoint file");
  ev->add_option("--data", data, "directory of .dgtr files (default: $DGTR_DATA_DIR)");
  ev->add_option("--fps", fps, "frame rate; ACC-ERR reported per second squared");
  ev->add_flag("--gt-as-prediction", gt_pred, "score ground truth against itself");
  ev->add_option("--out", out, "report path (default: stdout)");

  std::vector<std::uint64_t> seeds{0, 1, 2};
  double eps = 1e-4, tol = 1e-4;
  std::string corrupt;
  std::size_t width = 32, seq_len = 8;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every parameter gradient");
  gc->add_option("--seed", seeds, "model seeds (repeatable)")->capture_default_str();
  gc->add_option("--eps", eps, "central-difference step")->capture_default_str();
  gc->add_option("--tolerance", tol, "maximum relative error")->capture_default_str();
  gc->add_option("--width", width, "branch width d = h")->capture_default_str();
  gc->add_option("--seq-len", seq_len, "window length T")->capture_default_str();
  gc->add_option("--corrupt", corrupt, "scale this tensor's analytic gradient by 1.01");
  gc->add_option("--out", out, "table path (default: stdout)");

  std::uint64_t rf_seed = 0;
  auto* rf = app.add_subcommand("receptive-field", "per-frame output sensitivity for each branch");
  add_config(rf);
  rf->add_option("--seed", rf_seed, "model and perturbation seed")->capture_default_str();
  rf->add_option("--out", out, "table path (default: stdout)");

  std::string values = "2,4,8,16,24,32";
  auto* sw = app.add_subcommand("sweep", "train and evaluate for each window length T");
  add_config(sw);
  sw->add_option("--values", values, "comma-separated window lengths")->capture_default_str();
  sw->add_option("--out", out, "table path (default: stdout)");

  std::size_t reps = 30;
  std::uint64_t st_seed = 3;
  auto* st = app.add_subcommand("stitch-demo", "prediction deltas across a two-frame stitched sequence");
  st->add_option("--ckpt", ckpt, "checkpoint file")->required();
  st->add_option("--reps", reps, "repetitions of each frame")->capture_default_str();
  st->add_option("--seed", st_seed, "seed of the two source frames")->capture_default_str();
  st->add_option("--out", out, "table path (default: stdout)");

  bool text = false;
  auto* pr = app.add_subcommand("profile", "parameter and FLOP counts per component");
  add_config(pr);
  pr->add_flag("--text", text, "aligned text instead of CSV");
  pr->add_option("--out", out, "table path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dgtr: error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(seed, sequences, frames, out, noise, embedding);
    if (*tr) return cmd_train(load_config(config_path, overrides), out);
    if (*ev) return cmd_eval(ckpt, data, fps, gt_pred, out);
    if (*gc) return cmd_grad_check(seeds, eps, tol, corrupt, width, seq_len, out);
    if (*rf) return cmd_receptive_field(load_config(config_path, overrides), rf_seed, out);
    if (*sw) return cmd_sweep(load_config(config_path, overrides), parse_values(values), out);
    if (*st) return cmd_stitch_demo(ckpt, reps, st_seed, out);
    if (*pr) return cmd_profile(load_config(config_path, overrides), text, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "dgtr: error: " << msg << '\n';
    return 1;
  }
  return 1;
}
