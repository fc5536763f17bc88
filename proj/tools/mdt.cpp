// mdt: command-line driver for training, evaluation, structure dumps,
// synthetic data, ablation grids and gradient checks.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdt/mdt.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace mdt::cli {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Keys consumed by the driver itself rather than the model or trainer.
struct RunConfig {
  std::string data;
  bool strict = true;
  bool trim = true;
  std::size_t trim_branching = 3;
  std::size_t trim_depth = 5;
  bool require_images = false;
  std::size_t run_folds = 0;  // 0 = all folds
  bool save_checkpoints = true;
};

template <class C, class V>
  requires std::same_as<std::remove_const_t<C>, RunConfig>
void visit_fields(C& c, V&& v) {
  v("data", c.data);
  v("strict", c.strict);
  v("trim", c.trim);
  v("trim_branching", c.trim_branching);
  v("trim_depth", c.trim_depth);
  v("require_images", c.require_images);
  v("run_folds", c.run_folds);
  v("save_checkpoints", c.save_checkpoints);
}

struct GradcheckConfig {
  std::size_t entries_per_param = 8;
  double tolerance = 1e-3;
  std::size_t comments = 4;
};

template <class C, class V>
  requires std::same_as<std::remove_const_t<C>, GradcheckConfig>
void visit_fields(C& c, V&& v) {
  v("entries_per_param", c.entries_per_param);
  v("tolerance", c.tolerance);
  v("comments", c.comments);
}

// Config file and --key=value overrides applied to every struct that knows
// the key. A key no struct knows is an error.
class Layering {
 public:
  Layering(std::string config_path, std::vector<std::string> extras)
      : config_path_(std::move(config_path)), extras_(std::move(extras)) {}

  KeyValues pairs() const {
    KeyValues kvs;
    if (!config_path_.empty()) kvs = read_key_values(config_path_);
    for (const auto& arg : extras_) {
      if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos)
        throw ConfigError("unexpected argument '" + arg + "' (overrides take the form --key=value)");
      const auto eq = arg.find('=');
      kvs.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    }
    return kvs;
  }

  template <class... Cfg>
  void apply(Cfg&... cfgs) const {
    const auto kvs = pairs();
    std::vector<std::set<std::string>> unknown;
    (unknown.push_back(keys_of(apply_key_values(cfgs, kvs))), ...);
    for (const auto& [k, v] : kvs) {
      bool known = false;
      for (const auto& u : unknown) known = known || !u.count(k);
      if (!known) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  static std::set<std::string> keys_of(const KeyValues& kvs) {
    std::set<std::string> s;
    for (const auto& kv : kvs) s.insert(kv.first);
    return s;
  }

  std::string config_path_;
  std::vector<std::string> extras_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

// Vocabulary size is refit from the training folds, so check the rest first.
void validate_model(ModelConfig mc) {
  mc.vocab_size = std::max<std::size_t>(mc.vocab_size, Tokenizer::kFirstCorpusId + 1);
  mc.validate();
}

std::string section(const char* name, const std::string& kv) { return std::string("# ") + name + "\n" + kv; }

Dataset load(const RunConfig& run, bool images) {
  if (run.data.empty()) throw ConfigError("no dataset given (--data or data=)");
  LoadOptions opt;
  opt.strict = run.strict;
  opt.trim = run.trim;
  opt.limits = {run.trim_branching, run.trim_depth};
  opt.require_images = run.require_images;
  opt.load_images = images;
  LoadReport report;
  auto ds = load_dataset(run.data, opt, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  if (ds.discussions.empty()) throw DataError(run.data + ": no discussions");
  return ds;
}

std::string join_tokens(const Tokenizer& tok) {
  std::string s;
  for (const auto& t : tok.tokens()) s += t + '\n';
  return s;
}

Tokenizer split_tokens(const std::string& s) {
  std::vector<std::string> tokens;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) tokens.push_back(line);
  return Tokenizer::from_tokens(std::move(tokens));
}

ordered_json report_json(const MetricsReport& r) {
  ordered_json j;
  j["total"] = r.total;
  j["acc"] = r.accuracy;
  j["pre"] = r.precision;
  j["rec"] = r.recall;
  j["f1"] = r.f1;
  j["confusion"] = {{r.confusion[0][0], r.confusion[0][1]}, {r.confusion[1][0], r.confusion[1][1]}};
  for (std::size_t c = 0; c < kClasses; ++c) {
    const auto& m = r.per_class[c];
    ordered_json pc;
    pc["precision"] = m.precision;
    pc["recall"] = m.recall;
    pc["f1"] = m.f1;
    pc["support"] = m.support;
    pc["predicted"] = m.predicted;
    pc["no_predictions"] = m.no_predictions;
    j["per_class"][label_name(static_cast<Label>(c))] = pc;
  }
  return j;
}

ordered_json epoch_json(std::size_t fold, const EpochReport& e) {
  ordered_json j;
  j["fold"] = fold;
  j["epoch"] = e.epoch;
  j["updates"] = e.updates;
  j["loss"] = e.mean_loss;
  if (e.train) j["train_acc"] = e.train->accuracy, j["train_f1"] = e.train->f1;
  if (e.val) j["val_acc"] = e.val->accuracy, j["val_f1"] = e.val->f1;
  return j;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 1;
  bool quiet = false;
};

int cmd_synth(const Common& c, const Layering& layers, std::size_t n) {
  SynthConfig sc;
  layers.apply(sc);
  sc.seed = c.seed;
  if (n) sc.discussions = n;
  sc.validate();
  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  const auto jsonl = write_synth(synth_generate(sc), out);
  write_text(out / "resolved.cfg", section("synth", to_key_values(sc)));
  if (!c.quiet) std::cerr << "wrote " << jsonl.string() << '\n';
  return kOk;
}

int cmd_structure(const Common& c, const Layering& layers, const std::string& only) {
  ModelConfig mc;
  RunConfig run;
  layers.apply(mc, run);
  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  const auto ds = load(run, false);
  std::string dump;
  bool found = only.empty();
  for (const auto& d : ds.discussions) {
    if (!only.empty() && d.id != only) continue;
    found = true;
    dump += format_structure(d.id, d.tree, structure_matrices(d.tree, mc.window, mc.root_parent_bonus));
  }
  if (!found) throw DataError("discussion '" + only + "' not in " + run.data);
  write_text(out / "structure.txt", dump);
  write_text(out / "resolved.cfg", section("model", to_key_values(mc)) + section("run", to_key_values(run)));
  if (!c.quiet) std::cout << dump;
  return kOk;
}

void log_epoch(bool quiet, std::size_t fold, const EpochReport& e) {
  if (quiet) return;
  std::cerr << "fold " << fold << " epoch " << e.epoch << " updates " << e.updates << " loss " << e.mean_loss;
  if (e.train) std::cerr << " train_acc " << e.train->accuracy;
  if (e.val) std::cerr << " val_f1 " << e.val->f1;
  std::cerr << '\n';
}

int cmd_train(const Common& c, const Layering& layers) {
  ModelConfig mc;
  TrainConfig tc;
  RunConfig run;
  layers.apply(mc, tc, run);
  tc.seed = c.seed;
  mc.init_seed = c.seed;
  tc.validate();
  validate_model(mc);
  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  const auto ds = load(run, mc.use_images);
  const std::string resolved =
      section("model", to_key_values(mc)) + section("train", to_key_values(tc)) + section("run", to_key_values(run));
  write_text(out / "resolved.cfg", resolved);

  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  ordered_json folds_json = ordered_json::array();
  ProtocolHooks hooks;
  hooks.run_folds = run.run_folds;
  hooks.on_epoch = [&](std::size_t fold, const EpochReport& e) {
    log << epoch_json(fold, e).dump() << '\n';
    log_epoch(c.quiet, fold, e);
  };
  hooks.on_fold = [&](const FoldOutcome& o, const MdtModel<float>& model) {
    metrics << fold_json(o.metrics()) << '\n';
    metrics.flush();
    ordered_json f;
    f["fold"] = o.plan.fold;
    for (auto [key, idx] : {std::pair{"train", &o.plan.train}, {"val", &o.plan.val}, {"test", &o.plan.test}}) {
      f[key] = ordered_json::array();
      for (auto i : *idx) f[key].push_back(ds.discussions[i].id);
    }
    folds_json.push_back(f);
    if (run.save_checkpoints) {
      const auto ck = make_checkpoint(model, {{"model_config", to_key_values(o.model_config)},
                                              {"vocab", join_tokens(o.tokenizer)},
                                              {"fold", std::to_string(o.plan.fold)},
                                              {"best_epoch", std::to_string(o.result.best_epoch)}});
      save_checkpoint(ck, out / ("fold" + std::to_string(o.plan.fold) + ".ckpt"));
    }
    if (!c.quiet)
      std::cerr << "fold " << o.plan.fold << (o.plan.test_is_train ? " train" : " test") << " acc "
                << o.test.accuracy << " f1 " << o.test.f1 << '\n';
  };
  const auto outcomes = cross_validate(ds, mc, tc, hooks);
  std::vector<FoldMetrics> fm;
  for (const auto& o : outcomes) fm.push_back(o.metrics());
  metrics << mean_json(mean_metrics(fm)) << '\n';
  write_text(out / "folds.json", folds_json.dump(1) + "\n");
  return kOk;
}

int cmd_eval(const Common& c, const Layering& layers, const std::string& checkpoint, bool dump_logits) {
  const auto ck = load_checkpoint(checkpoint);
  const auto* cfg_text = ck.find_meta("model_config");
  const auto* vocab = ck.find_meta("vocab");
  if (!cfg_text || !vocab) throw DataError(checkpoint + ": checkpoint lacks model_config or vocab metadata");
  ModelConfig mc;
  if (!apply_key_values(mc, parse_key_values(*cfg_text, checkpoint)).empty())
    throw DataError(checkpoint + ": unknown keys in stored model config");
  RunConfig run;
  layers.apply(mc, run);
  mc.validate();
  const auto tok = split_tokens(*vocab);
  if (tok.vocab_size() != mc.vocab_size) throw DataError(checkpoint + ": vocabulary does not match model config");
  MdtModel<float> model(mc);
  apply_checkpoint(model, ck);

  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  write_text(out / "resolved.cfg", section("model", to_key_values(mc)) + section("run", to_key_values(run)));
  const auto ds = load(run, mc.use_images);
  std::vector<int> y_true, y_pred;
  std::ostringstream dump;
  dump.precision(9);
  for (const auto& d : ds.discussions) {
    const auto in = make_input(d, tok, mc);
    const auto logits = model.forward(in);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const int pred = argmax2(logits.at(i, 0), logits.at(i, 1));
      if (in.targets[i] >= 0) {
        y_true.push_back(in.targets[i]);
        y_pred.push_back(pred);
      }
      dump << in.id << '\t' << in.comment_ids[i] << '\t' << logits.at(i, 0) << '\t' << logits.at(i, 1) << '\t'
           << label_name(static_cast<Label>(pred)) << '\n';
    }
  }
  if (dump_logits) write_text(out / "logits.tsv", dump.str());
  if (y_true.empty()) {
    if (!c.quiet) std::cerr << "no labeled comments; metrics skipped\n";
    return kOk;
  }
  const auto j = report_json(metrics(y_true, y_pred));
  write_text(out / "metrics.json", j.dump(1) + "\n");
  if (!c.quiet) std::cout << j.dump() << '\n';
  return kOk;
}

// ablate

struct AblationAxes {
  std::vector<std::size_t> bottleneck{1, 4, 8, 16, 32};
  std::vector<std::optional<std::size_t>> window{2, 5, std::nullopt};
  std::vector<std::size_t> fusion;  // total fusion layers N - K; empty keeps the base value
  std::vector<bool> images{true, false};
};

template <class T, class F>
std::vector<T> parse_list(const std::string& text, const char* axis, F&& parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim_ws(item);
    if (item.empty()) continue;
    out.push_back(parse(item));
  }
  if (out.empty()) throw ConfigError(std::string("ablation axis '") + axis + "' is empty");
  return out;
}

struct Cell {
  std::size_t bottleneck;
  std::optional<std::size_t> window;
  std::size_t fusion;
  bool images;

  std::string name() const {
    return "b" + std::to_string(bottleneck) + "_w" + format_window(window) + "_f" + std::to_string(fusion) + "_img" +
           (images ? "on" : "off");
  }
};

std::vector<double> read_fold_f1(const fs::path& metrics) {
  std::ifstream in(metrics);
  std::vector<double> f1;
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j["fold"].is_number()) f1.push_back(j["f1"].get<double>());
  }
  return f1;
}

ordered_json read_mean(const fs::path& metrics) {
  std::ifstream in(metrics);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return ordered_json::parse(last);
}

int cmd_ablate(const Common& c, const Layering& layers, const AblationAxes& axes) {
  ModelConfig base;
  TrainConfig tc;
  RunConfig run;
  layers.apply(base, tc, run);
  tc.seed = c.seed;
  base.init_seed = c.seed;
  tc.validate();
  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  write_text(out / "resolved.cfg",
             section("model", to_key_values(base)) + section("train", to_key_values(tc)) + section("run", to_key_values(run)));

  std::vector<Cell> cells;
  const auto fusion = axes.fusion.empty() ? std::vector<std::size_t>{base.layers - base.prefix_layers} : axes.fusion;
  for (auto b : axes.bottleneck)
    for (auto w : axes.window)
      for (auto f : fusion)
        for (bool img : axes.images) cells.push_back({b, w, f, img});

  // Validate every cell before spending time on any of them.
  auto cell_config = [&](const Cell& cell) {
    ModelConfig mc = base;
    mc.bottleneck = cell.bottleneck;
    mc.window = cell.window;
    if (cell.fusion == 0 || cell.fusion > mc.layers)
      throw ConfigError("fusion total " + std::to_string(cell.fusion) + " must be in [1, layers]");
    mc.prefix_layers = mc.layers - cell.fusion;
    mc.use_images = cell.images;
    validate_model(mc);
    return mc;
  };
  for (const auto& cell : cells) cell_config(cell);

  const auto ds_images = load(run, true);
  std::size_t computed = 0, reused = 0;
  for (const auto& cell : cells) {
    const fs::path dir = out / "cells" / cell.name();
    if (fs::exists(dir / "done")) {
      ++reused;
      continue;
    }
    prepare_out_dir(dir);
    const auto mc = cell_config(cell);
    write_text(dir / "resolved.cfg", section("model", to_key_values(mc)) + section("train", to_key_values(tc)) +
                                         section("run", to_key_values(run)));
    ProtocolHooks hooks;
    hooks.run_folds = run.run_folds;
    hooks.on_epoch = [&](std::size_t fold, const EpochReport& e) {
      if (!c.quiet) std::cerr << cell.name() << ' ';
      log_epoch(c.quiet, fold, e);
    };
    const auto outcomes = cross_validate(ds_images, mc, tc, hooks);
    std::string text;
    std::vector<FoldMetrics> fm;
    for (const auto& o : outcomes) {
      fm.push_back(o.metrics());
      text += fold_json(o.metrics()) + "\n";
    }
    text += mean_json(mean_metrics(fm)) + "\n";
    write_text(dir / "metrics.jsonl", text);
    write_text(dir / "done", "");
    ++computed;
  }

  // Combined table; paired t of per-fold F1 against the first cell.
  const auto ref_f1 = read_fold_f1(out / "cells" / cells.front().name() / "metrics.jsonl");
  std::ostringstream table;
  table << "bottleneck\twindow\tfusion\timages\tacc\tpre\trec\tf1\tt_vs_first\tdf\n";
  for (const auto& cell : cells) {
    const fs::path metrics = out / "cells" / cell.name() / "metrics.jsonl";
    const auto mean = read_mean(metrics);
    const auto f1 = read_fold_f1(metrics);
    table << cell.bottleneck << '\t' << format_window(cell.window) << '\t' << cell.fusion << '\t'
          << (cell.images ? "on" : "off") << '\t' << mean["acc"].get<double>() << '\t' << mean["pre"].get<double>()
          << '\t' << mean["rec"].get<double>() << '\t' << mean["f1"].get<double>() << '\t';
    if (f1.size() >= 2 && f1.size() == ref_f1.size() && f1 != ref_f1) {
      const auto t = paired_t(f1, ref_f1);
      table << t.t << '\t' << t.df << '\n';
    } else {
      table << "-\t-\n";
    }
  }
  write_text(out / "ablation.tsv", table.str());
  if (!c.quiet) {
    std::cout << table.str();
    std::cerr << "cells " << cells.size() << " computed " << computed << " reused " << reused << '\n';
  }
  return kOk;
}

// gradcheck

ModelConfig gradcheck_defaults() {
  ModelConfig m;
  m.layers = 4;
  m.prefix_layers = 1;
  m.fusion_layers_per_module = 1;
  m.graph_layers_per_module = 1;
  m.bottleneck = 2;
  m.hidden = 8;
  m.ffn_hidden = 16;
  m.heads_modality = 2;
  m.heads_graph = 2;
  m.window = std::nullopt;
  m.attention_dropout = m.activation_dropout = m.graph_dropout = 0.0;
  m.max_degree_table = 4;
  m.max_len = 6;
  m.image_size = 4;
  m.patch_size = 2;
  m.freeze_prefix = false;
  m.freeze_embeddings = false;
  return m;
}

int cmd_gradcheck(const Common& c, const Layering& layers) {
  ModelConfig mc = gradcheck_defaults();
  GradcheckConfig gc;
  layers.apply(mc, gc);
  mc.init_seed = c.seed;
  if (gc.comments == 0) throw ConfigError("gradcheck: comments must be at least 1");

  // A chain-and-fan discussion with random words and one image on the root.
  const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "eps"};
  const auto tok = Tokenizer::from_tokens(words);
  mc.vocab_size = tok.vocab_size();
  mc.validate();
  Rng rng(c.seed);
  std::vector<CommentRecord> recs;
  for (std::size_t i = 0; i < gc.comments; ++i) {
    CommentRecord r;
    r.id = "c" + std::to_string(i);
    if (i) r.parent_id = "c" + std::to_string(rng.below(i));
    for (std::size_t w = 0; w < 3; ++w) r.text += (w ? " " : "") + words[rng.below(words.size())];
    if (i) r.label = rng.bernoulli(0.5) ? Label::Hateful : Label::Neutral;
    recs.push_back(r);
  }
  Discussion d;
  d.id = "gradcheck";
  d.tree = build_tree(recs);
  d.images.resize(d.tree.size());
  PixelGrid g;
  g.height = g.width = mc.image_size;
  for (std::size_t i = 0; i < mc.image_size * mc.image_size * 3; ++i) g.values.push_back(static_cast<float>(rng.uniform()));
  d.images[0] = g;

  MdtModel<double> model(mc);
  const auto in = make_input(d, tok, mc);
  const std::vector<double> weights{1.0, 1.5};
  const std::function<Tensor<double>()> loss = [&] {
    return weighted_cross_entropy_sum(model.forward(in), in.targets, weights);
  };

  std::map<std::string, ParamList<double>> groups;
  for (const auto& p : model.params()) groups[p.name.substr(0, p.name.find('.'))].push_back(p);
  GradCheckOptions opt;
  opt.max_entries_per_param = gc.entries_per_param;
  opt.sample_seed = c.seed;
  ordered_json j;
  double worst = 0.0;
  for (auto& [group, params] : groups) {
    const auto r = grad_check(loss, params, opt);
    if (!r.entries_checked) continue;
    j["groups"][group] = {{"max_rel_error", r.max_rel_error}, {"worst_param", r.worst_param},
                          {"entries", r.entries_checked}};
    worst = std::max(worst, r.max_rel_error);
  }
  j["max_rel_error"] = worst;
  j["tolerance"] = gc.tolerance;
  j["pass"] = worst < gc.tolerance;

  const fs::path out = c.out_dir;
  prepare_out_dir(out);
  write_text(out / "gradcheck.json", j.dump(1) + "\n");
  write_text(out / "resolved.cfg", section("model", to_key_values(mc)) + section("gradcheck", to_key_values(gc)));
  if (!c.quiet)
    for (const auto& [group, r] : j["groups"].items())
      std::cout << group << '\t' << r["max_rel_error"].get<double>() << '\n';
  if (worst >= gc.tolerance) {
    std::cerr << "gradient check failed: max relative error " << worst << " >= " << gc.tolerance << '\n';
    return kNumeric;
  }
  return kOk;
}

int main_impl(int argc, char** argv) {
  CLI::App app{"Multi-modal discussion transformer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  auto add_common = [&](CLI::App* s, bool needs_out) {
    s->add_option("--config", common.config, "flat key=value config file")->check(CLI::ExistingFile);
    auto* o = s->add_option("--out-dir", common.out_dir, "output directory");
    if (needs_out) o->required();
    s->add_option("--seed", common.seed, "seed for every random stream")->capture_default_str();
    s->add_flag("--quiet", common.quiet, "suppress progress output");
    s->allow_extras();
    s->footer("Any config key may be overridden with --key=value.");
  };

  std::string data, checkpoint, discussion;
  std::size_t synth_n = 0;
  bool dump_logits = false;
  std::string ax_b = "1,4,8,16,32", ax_w = "2,5,inf", ax_f, ax_img = "on,off";

  auto* train = app.add_subcommand("train", "cross-validated training with checkpoints and metrics");
  add_common(train, true);
  train->add_option("--data", data, "discussions JSONL");
  auto* eval = app.add_subcommand("eval", "score a dataset with a checkpoint");
  add_common(eval, true);
  eval->add_option("--data", data, "discussions JSONL");
  eval->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
  eval->add_flag("--dump-logits", dump_logits, "write logits.tsv (discussion, comment, logits, prediction)");
  auto* structure = app.add_subcommand("structure", "dump structure encodings");
  add_common(structure, true);
  structure->add_option("--data", data, "discussions JSONL");
  structure->add_option("--discussion", discussion, "only this discussion id");
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted labels");
  add_common(synth, true);
  synth->add_option("--n", synth_n, "number of discussions");
  auto* ablate = app.add_subcommand("ablate", "grid over bottleneck, window, fusion layers and images");
  add_common(ablate, true);
  ablate->add_option("--data", data, "discussions JSONL");
  ablate->add_option("--bottleneck", ax_b, "comma-separated b values")->capture_default_str();
  ablate->add_option("--window", ax_w, "comma-separated windows (inf = unbounded)")->capture_default_str();
  ablate->add_option("--fusion", ax_f, "comma-separated fusion-layer totals N-K (default: base config)");
  ablate->add_option("--images", ax_img, "comma-separated on/off")->capture_default_str();
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check per parameter group");
  add_common(gradcheck, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  auto extras = cmd->remaining();
  if (!data.empty()) extras.push_back("--data=" + data);
  const Layering layers(common.config, extras);

  try {
    if (cmd == synth) return cmd_synth(common, layers, synth_n);
    if (cmd == structure) return cmd_structure(common, layers, discussion);
    if (cmd == train) return cmd_train(common, layers);
    if (cmd == eval) return cmd_eval(common, layers, checkpoint, dump_logits);
    if (cmd == gradcheck) return cmd_gradcheck(common, layers);
    AblationAxes axes;
    auto size_item = [](const std::string& s) { return detail::parse_integer<std::size_t>("ablate", s); };
    axes.bottleneck = parse_list<std::size_t>(ax_b, "bottleneck", size_item);
    axes.window = parse_list<std::optional<std::size_t>>(ax_w, "window", [](const std::string& s) {
      std::optional<std::size_t> w;
      detail::from_text("window", s, w);
      return w;
    });
    if (!ax_f.empty()) axes.fusion = parse_list<std::size_t>(ax_f, "fusion", size_item);
    axes.images = parse_list<bool>(ax_img, "images", [](const std::string& s) {
      bool b = false;
      detail::from_text("images", s, b);
      return b;
    });
    return cmd_ablate(common, layers, axes);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace mdt::cli

int main(int argc, char** argv) { return mdt::cli::main_impl(argc, argv); }
