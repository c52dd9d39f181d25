// Command-line front end: dataset synthesis, W_0 pre-training, DOC
// fine-tuning, template extraction, scoring, protocol evaluation and the
// gradient-check harness.
//
// Every command resolves one key=value configuration (built-in defaults,
// then --config file, then flags), echoes it into each artifact it writes
// and saves it next to the main output as <out>.config.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doc/doc.hpp"

namespace {

using doc::RunConfig;

enum ExitCode : int { kOk = 0, kInternal = 1, kValidation = 2, kIo = 3, kNumeric = 4 };

struct Field {
  std::string key;
  std::string fallback;  // empty: unset unless given
  std::string help;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<Field> fields;
  std::function<int(const RunConfig&)> run;
};

const std::vector<Field> kModelFields = {
    {"image_channels", "1", "channels when reading image directories"},
    {"image_height", "28", "height images are resized to"},
    {"image_width", "28", "width images are resized to"},
    {"feature_width", "64", "width k of the feature layer g(x)"},
    {"conv1_channels", "8", "filters in the first conv block"},
    {"conv2_channels", "16", "filters in the second conv block"},
    {"frozen_layers", "1", "leading parameterized layers kept frozen during DOC"},
};

const std::vector<Field> kTrainFields = {
    {"lambda", "0.1", "compactness weight"},
    {"learning_rate", "5e-5", "SGD step size"},
    {"weight_decay", "5e-4", "L2 weight decay"},
    {"iterations", "700", "fixed iteration budget"},
    {"batch_size_target", "32", "target batch size (>= 2)"},
    {"batch_size_reference", "32", "reference batch size"},
    {"variant", "two-branch", "two-branch | memeff"},
    {"memeff_weighting", "match-joint", "match-joint | convex-average"},
    {"objective", "composite", "composite | compactness-only"},
    {"loss_tap", "features", "features | logits"},
    {"shuffle", "reshuffle", "reshuffle | once"},
    {"reference_fraction", "1.0", "stratified fraction of the reference set to use"},
    {"remove_overlap", "true", "drop reference classes that share a name with the target"},
};

const std::vector<Field> kPretrainFields = {
    {"pretrain_epochs", "10", "cross-entropy epochs over the reference set"},
    {"pretrain_learning_rate", "0.05", "pre-training SGD step size"},
    {"pretrain_weight_decay", "5e-4", "pre-training weight decay"},
    {"pretrain_batch_size", "32", "pre-training batch size"},
};

std::vector<Field> concat(std::initializer_list<std::vector<Field>> parts) {
  std::vector<Field> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::string dashed(std::string key) {
  for (auto& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

// ---------------------------------------------------------------------------
// Config -> library types
// ---------------------------------------------------------------------------

doc::ImageShape image_shape(const RunConfig& c) {
  return {c.count("image_channels"), c.count("image_height"), c.count("image_width")};
}

doc::Dataset load_data(const RunConfig& c, const std::string& field) {
  return doc::load_any_dataset(c.text(field), image_shape(c));
}

doc::Model fresh_model(const RunConfig& c, const doc::Dataset& reference, std::uint64_t seed) {
  const auto layers = doc::desk_backbone(reference.class_count(), c.count("feature_width"), c.count("conv1_channels"),
                                         c.count("conv2_channels"));
  return doc::Model::build(layers, reference.shape, seed, c.count("frozen_layers"));
}

doc::TrainConfig train_config(const RunConfig& c) {
  doc::TrainConfig t;
  t.lambda = c.real("lambda");
  t.learning_rate = c.real("learning_rate");
  t.weight_decay = c.real("weight_decay");
  t.iterations = c.count("iterations");
  t.batch_size_target = c.count("batch_size_target");
  t.batch_size_reference = c.count("batch_size_reference");
  t.seed = c.u64("seed");
  t.variant = static_cast<doc::Variant>(c.choice("variant", {"two-branch", "memeff"}));
  t.memeff_weighting = static_cast<doc::MemeffWeighting>(c.choice("memeff_weighting", {"match-joint", "convex-average"}));
  t.objective = static_cast<doc::Objective>(c.choice("objective", {"composite", "compactness-only"}));
  t.loss_tap = static_cast<doc::LossTap>(c.choice("loss_tap", {"features", "logits"}));
  t.shuffle = static_cast<doc::ShufflePolicy>(c.choice("shuffle", {"reshuffle", "once"}));
  t.validate();
  return t;
}

doc::PretrainConfig pretrain_config(const RunConfig& c, const std::string& prefix) {
  doc::PretrainConfig p;
  p.epochs = c.count(prefix + "epochs");
  p.learning_rate = c.real(prefix + "learning_rate");
  p.weight_decay = c.real(prefix + "weight_decay");
  p.batch_size = c.count(prefix + "batch_size");
  p.seed = c.u64("seed");
  return p;
}

doc::MatchOptions match_options(const RunConfig& c) {
  doc::MatchOptions m;
  m.rule = static_cast<doc::MatchRule>(c.choice("match_rule", {"nearest", "mean-of-k"}));
  m.k = c.count("match_k");
  m.l2_normalize = c.flag("l2_normalize");
  if (m.k == 0) throw doc::ValueError("field 'match_k' must be positive");
  return m;
}

std::vector<std::size_t> count_list(const RunConfig& c, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& item : c.list(key)) {
    RunConfig one;
    one.set(key, item);
    out.push_back(one.count(key));
  }
  return out;
}

// Samples of the target class: the named class, or the only class present.
doc::Dataset target_samples(const RunConfig& c, const doc::Dataset& data) {
  const auto name = c.text_or("target_class", "");
  if (name.empty()) {
    if (data.class_count() != 1) {
      throw doc::ValueError("missing required field 'target_class' (target dataset has " +
                            std::to_string(data.class_count()) + " classes)");
    }
    return data;
  }
  return data.subset(data.indices_of(data.class_index(name)));
}

// Reference set after overlap removal against the target class names.
doc::Dataset prepared_reference(const RunConfig& c, doc::Dataset reference) {
  if (!c.flag("remove_overlap") || c.text_or("target", "").empty()) return reference;
  const auto target = load_data(c, "target");
  const auto name = c.text_or("target_class", "");
  return doc::filter_overlap(reference, name.empty() ? target.class_names : std::vector<std::string>{name});
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw doc::IoError("cannot write " + path);
  out << text;
  if (!out) throw doc::IoError("failed writing " + path);
}

std::string commented(const std::string& echo) {
  std::string out;
  std::size_t start = 0;
  while (start < echo.size()) {
    const auto end = echo.find('\n', start);
    out += "# " + echo.substr(start, end - start) + "\n";
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c) {
  auto data = doc::synth_shapes(c.count("classes"), c.count("per_class"), c.count("image_size"), c.real("noise"),
                                c.u64("seed"));
  const auto keep = c.list("select");
  if (!keep.empty()) {
    std::vector<std::size_t> idx;
    for (const auto& name : keep) idx.push_back(data.class_index(name));
    data = data.select_classes(idx);
  }
  doc::save_dataset(data, c.text("out"));
  std::cout << "wrote " << data.size() << " images of " << data.class_count() << " classes to " << c.text("out")
            << '\n';
  return kOk;
}

int cmd_pretrain(const RunConfig& c) {
  const auto reference = prepared_reference(c, load_data(c, "reference"));
  auto model = fresh_model(c, reference, c.u64("seed"));
  auto result = doc::pretrain_reference(std::move(model), reference, pretrain_config(c, "pretrain_"), c.echo());
  const auto out = c.text("out");
  doc::save_checkpoint(result.model, out);
  write_text(out + ".log.csv", result.log.to_csv());
  std::cout << "pre-trained on " << reference.size() << " images / " << reference.class_count()
            << " classes; accuracy " << doc::accuracy(result.model, reference) << "; hash "
            << hex(result.model.hash()) << '\n';
  return kOk;
}

int cmd_train(const RunConfig& c) {
  const auto cfg = train_config(c);
  const auto target = target_samples(c, load_data(c, "target"));
  doc::Dataset reference;
  if (cfg.objective == doc::Objective::composite) {
    reference = doc::subsample(prepared_reference(c, load_data(c, "reference")), c.real("reference_fraction"),
                               doc::derive_seed(cfg.seed, 12));
  }
  auto w0 = doc::load_checkpoint(c.text("model"));
  if (cfg.lambda == 0.0 && cfg.objective == doc::Objective::composite) {
    std::cerr << "note: lambda=0 leaves l = l_D; the compactness-only collapse ablation is "
                 "objective=compactness-only\n";
  }
  auto result = doc::train(std::move(w0), reference, target, cfg, c.echo());

  // Collapse diagnostics on the whole target set.
  const auto features = doc::extract_features(result.model, target);
  std::vector<double> flat;
  std::size_t dead = 0;
  for (std::size_t j = 0; j < result.model.feature_dim(); ++j) {
    bool alive = false;
    for (const auto& f : features) alive = alive || f[j] != 0.0;
    dead += alive ? 0 : 1;
  }
  for (const auto& f : features) flat.insert(flat.end(), f.begin(), f.end());
  const double lc = doc::compactness_forward(doc::FeatureBatch(features.size(), result.model.feature_dim(), flat));
  const bool collapsed = lc < 1e-3;
  result.log.notes.push_back("target_l_C=" + std::to_string(lc));
  result.log.notes.push_back("dead_features=" + std::to_string(dead) + "/" +
                             std::to_string(result.model.feature_dim()));
  result.log.notes.push_back(std::string("collapsed=") + (collapsed ? "yes" : "no"));
  result.log.notes.push_back("model_hash=" + hex(result.model.hash()));

  const auto out = c.text("out");
  doc::save_checkpoint(result.model, out);
  write_text(out + ".log.csv", result.log.to_csv());
  const auto& last = result.log.records.empty() ? doc::TrainRecord{} : result.log.records.back();
  std::cout << "trained " << cfg.iterations << " iterations; final l_D " << last.loss.descriptive << " l_C "
            << last.loss.compactness << " l " << last.loss.total << "; target l_C " << lc
            << (collapsed ? " (collapsed)" : "") << "; hash " << hex(result.model.hash()) << '\n';
  return kOk;
}

int cmd_templates(const RunConfig& c) {
  const auto model = doc::load_checkpoint(c.text("model"));
  const auto target = target_samples(c, load_data(c, "target"));
  auto set = doc::generate_templates(model, target, c.count("template_count"), c.u64("seed"));
  set.config = c.echo();
  doc::save_templates(set, c.text("out"));
  std::cout << "wrote " << set.size() << " templates of dimension " << set.dim() << " for model "
            << hex(set.model_hash) << '\n';
  return kOk;
}

int cmd_score(const RunConfig& c) {
  const auto model = doc::load_checkpoint(c.text("model"));
  const auto templates = doc::load_templates(c.text("templates"));
  const auto data = load_data(c, "data");
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto scores = doc::score_samples(model, templates, data, all, match_options(c));
  const bool decide = !c.text_or("threshold", "").empty();
  const double delta = decide ? c.real("threshold") : 0.0;

  std::ostringstream csv;
  csv << commented(c.echo()) << std::setprecision(17) << "id,class,score" << (decide ? ",decision" : "") << '\n';
  for (std::size_t i = 0; i < scores.size(); ++i) {
    csv << data.samples[i].id << ',' << data.class_names[data.samples[i].label] << ',' << scores[i];
    if (decide) csv << ',' << doc::classify(scores[i], delta);
    csv << '\n';
  }
  write_text(c.text("out"), csv.str());
  std::cout << "scored " << scores.size() << " samples\n";
  return kOk;
}

int cmd_evaluate(const RunConfig& c) {
  const auto data = load_data(c, "data");
  const auto reference = load_data(c, "reference");
  doc::ProtocolConfig p;
  p.classes = c.list("classes");
  p.train_fraction = c.real("train_fraction");
  p.template_count = c.count("template_count");
  p.template_sweep = count_list(c, "template_sweep");
  p.repeats = c.count("repeats");
  p.seed = c.u64("seed");
  p.remove_overlap = c.flag("remove_overlap");
  p.reference_fraction = c.real("reference_fraction");
  p.match = match_options(c);

  doc::ModelRecipe recipe;
  recipe.train = train_config(c);
  recipe.method = static_cast<doc::Method>(c.choice("method", {"doc", "pretrained", "compactness-only"}));
  const auto w0_path = c.text_or("model", "");
  const auto pc = pretrain_config(c, "pretrain_");
  recipe.make_base = [&c, w0_path, pc](const doc::Dataset& ref, std::uint64_t seed) {
    if (!w0_path.empty()) return doc::load_checkpoint(w0_path);
    doc::PretrainConfig run_pc = pc;
    run_pc.seed = seed;
    return doc::pretrain_reference(fresh_model(c, ref, seed), ref, run_pc).model;
  };

  const auto report = doc::run_protocol(data, reference, recipe, p, c.echo());
  const auto out = c.text("out");
  write_text(out, report.to_csv());
  write_text(out + ".roc.csv", commented(c.echo()) + report.roc_csv());
  if (!p.template_sweep.empty()) write_text(out + ".sweep.csv", commented(c.echo()) + report.sweep_csv());
  std::cout << report.table();
  return kOk;
}

int cmd_gradcheck(const RunConfig& c) {
  doc::GradcheckOptions o;
  o.seed = c.u64("seed");
  o.trials = c.count("trials");
  o.gradient_tolerance = c.real("tolerance");
  o.perturb = c.real("perturb");
  const auto report = doc::run_gradcheck(o);
  const auto text = report.to_text();
  std::cout << text;
  if (!c.text_or("out", "").empty()) write_text(c.text("out"), commented(c.echo()) + text);
  return report.passed() ? kOk : kNumeric;
}

int cmd_desk(const RunConfig& c) {
  doc::DeskTaskConfig task;
  task.template_sweep = count_list(c, "template_sweep");
  const auto seeds = c.count("seeds");
  const auto base = c.u64("seed");
  std::ostringstream csv;
  csv << commented(c.echo()) << std::setprecision(17) << "seed,target,alien,method,auc,eer,l_C\n";
  std::vector<double> w0, doc_auc, abl;
  for (std::uint64_t s = base; s < base + seeds; ++s) {
    const auto r = doc::run_desk_seed(task, s);
    for (const auto* rep : {&r.pretrained, &r.doc, &r.ablation}) {
      const auto& run = rep->runs.front();
      const char* method = rep == &r.pretrained ? "pretrained" : rep == &r.doc ? "doc" : "compactness-only";
      csv << s << ',' << r.split.target << ',' << r.split.alien << ',' << method << ',' << run.auc << ','
          << run.eer << ',' << run.compactness << '\n';
    }
    w0.push_back(r.pretrained.auc.mean);
    doc_auc.push_back(r.doc.auc.mean);
    abl.push_back(r.ablation.auc.mean);
    std::cout << "seed " << s << ": W0 " << w0.back() << "  DOC " << doc_auc.back() << "  compactness-only "
              << abl.back() << std::endl;
  }
  std::cout << "mean AUC: W0 " << doc::mean_std(w0).mean << "  DOC " << doc::mean_std(doc_auc).mean
            << "  compactness-only " << doc::mean_std(abl).mean << '\n';
  write_text(c.text("out"), csv.str());
  return kOk;
}

std::vector<Command> commands() {
  std::vector<Command> out;
  out.push_back({"synth",
                 "write a synthetic shapes dataset container",
                 {{"out", "synth.docdata", "output dataset container"},
                  {"classes", "10", "number of shape classes"},
                  {"per_class", "200", "images per class"},
                  {"image_size", "16", "square image side"},
                  {"noise", "1.2", "nuisance strength"},
                  {"select", "", "comma-separated class names to keep"}},
                 cmd_synth});
  out.push_back({"pretrain",
                 "train W_0 on the reference classes with cross-entropy",
                 concat({{{"out", "w0.ckpt", "output checkpoint"},
                          {"reference", "", "reference dataset (container or image directory)"},
                          {"target", "", "target dataset, used for overlap removal"},
                          {"target_class", "", "target class name within --target"},
                          {"remove_overlap", "true", "drop reference classes named like the target"}},
                         kModelFields,
                         kPretrainFields}),
                 cmd_pretrain});
  out.push_back({"train",
                 "DOC fine-tuning of a W_0 checkpoint",
                 concat({{{"out", "doc.ckpt", "output checkpoint"},
                          {"model", "", "W_0 checkpoint"},
                          {"target", "", "target dataset"},
                          {"target_class", "", "target class name within --target"},
                          {"reference", "", "reference dataset"}},
                         kModelFields,
                         kTrainFields}),
                 cmd_train});
  out.push_back({"templates",
                 "extract template features from target training images",
                 concat({{{"out", "templates.doctmpl", "output template file"},
                          {"model", "", "trained checkpoint"},
                          {"target", "", "target dataset"},
                          {"target_class", "", "target class name within --target"},
                          {"template_count", "40", "number of templates"}},
                         kModelFields}),
                 cmd_templates});
  out.push_back({"score",
                 "matched score S_y for every image of a dataset",
                 concat({{{"out", "scores.csv", "output CSV"},
                          {"model", "", "trained checkpoint"},
                          {"templates", "", "template file from the same model"},
                          {"data", "", "dataset to score"},
                          {"threshold", "", "decision threshold delta; adds a decision column"},
                          {"match_rule", "nearest", "nearest | mean-of-k"},
                          {"match_k", "1", "k for mean-of-k"},
                          {"l2_normalize", "false", "compare unit-length features"}},
                         kModelFields}),
                 cmd_score});
  out.push_back({"evaluate",
                 "one-class protocol: each class positive in turn against equal-size aliens",
                 concat({{{"out", "report.csv", "report CSV; ROC points go to <out>.roc.csv"},
                          {"data", "", "evaluation dataset"},
                          {"reference", "", "reference dataset"},
                          {"model", "", "optional shared W_0 checkpoint; otherwise pre-trained per run"},
                          {"method", "doc", "doc | pretrained | compactness-only"},
                          {"classes", "", "comma-separated positive classes (default all)"},
                          {"train_fraction", "0.5", "per-class train share"},
                          {"template_count", "40", "templates per run"},
                          {"template_sweep", "", "extra template counts, e.g. 1,5,10,20,30,40"},
                          {"repeats", "1", "repeats per class"},
                          {"match_rule", "nearest", "nearest | mean-of-k"},
                          {"match_k", "1", "k for mean-of-k"},
                          {"l2_normalize", "false", "compare unit-length features"}},
                         kModelFields,
                         kTrainFields,
                         kPretrainFields}),
                 cmd_evaluate});
  out.push_back({"gradcheck",
                 "loss identities and finite-difference gradient checks",
                 {{"out", "", "optional report file"},
                  {"trials", "5", "random batches per compactness cell"},
                  {"tolerance", "1e-6", "relative gradient tolerance"},
                  {"perturb", "0", "test hook: corrupt analytic gradients by this amount"}},
                 cmd_gradcheck});
  out.push_back({"desk",
                 "synthetic desk task: W_0 vs DOC vs compactness-only over several seeds",
                 {{"out", "desk.csv", "output CSV"},
                  {"seeds", "5", "number of consecutive seeds"},
                  {"template_sweep", "", "extra template counts"}},
                 cmd_desk});
  return out;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const doc::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumeric;
  } catch (const doc::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const doc::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const doc::ValueError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kValidation;
  } catch (const doc::ShapeError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep one-class feature learning"};
  app.require_subcommand(1);

  const auto table = commands();
  struct Bound {
    CLI::App* sub;
    std::string config_path;
    std::map<std::string, std::string> values;
  };
  std::vector<Bound> bound(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& cmd = table[i];
    auto& b = bound[i];
    b.sub = app.add_subcommand(cmd.name, cmd.help);
    b.sub->add_option("--config", b.config_path, "key=value configuration file");
    b.sub->add_option("--seed", b.values["seed"], "master seed (default 0)");
    for (const auto& f : cmd.fields) {
      std::string help = f.help;
      if (!f.fallback.empty()) help += " (default " + f.fallback + ")";
      b.sub->add_option("--" + dashed(f.key), b.values[f.key], help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!bound[i].sub->parsed()) continue;
    const auto& cmd = table[i];
    auto& b = bound[i];
    return run_guarded([&] {
      RunConfig cfg = b.config_path.empty() ? RunConfig{} : RunConfig::from_file(b.config_path);
      for (const auto& [key, value] : b.values) {
        if (b.sub->count("--" + dashed(key)) > 0) cfg.set(key, value);
      }
      cfg.set("command", cmd.name);
      cfg.set_default("seed", "0");
      for (const auto& f : cmd.fields) cfg.set_default(f.key, f.fallback);
      const auto out = cfg.text_or("out", "");
      const int code = cmd.run(cfg);
      if (!out.empty() && code == kOk) write_text(out + ".config", cfg.echo());
      return code;
    });
  }
  return kInternal;
}
