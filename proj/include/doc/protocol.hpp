#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "doc/classifier.hpp"
#include "doc/data.hpp"
#include "doc/errors.hpp"
#include "doc/losses.hpp"
#include "doc/metrics.hpp"
#include "doc/model.hpp"
#include "doc/random.hpp"
#include "doc/trainer.hpp"

namespace doc {

// What is evaluated for each positive class.
enum class Method {
  doc,                  // DOC fine-tuning from W_0
  pretrained_features,  // W_0 features used as-is
  compactness_only,     // fine-tuning on l_C alone
};

struct ModelRecipe {
  // Produces W_0 for a (filtered) reference dataset; called once per run.
  std::function<Model(const Dataset& reference, std::uint64_t seed)> make_base;
  TrainConfig train;
  Method method = Method::doc;
};

struct ProtocolConfig {
  std::vector<std::string> classes;  // positive classes; empty = every class of the dataset
  double train_fraction = 0.5;
  std::size_t template_count = 40;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  bool remove_overlap = true;
  double reference_fraction = 1.0;
  MatchOptions match;
  // Extra template counts scored with the same model; draws are nested, so
  // a smaller set is a prefix of a larger one.
  std::vector<std::size_t> template_sweep;
};

struct SweepPoint {
  std::size_t template_count = 0;
  double auc = 0.0;
  double eer = 0.0;
};

struct ClassRun {
  std::string class_name;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double auc = 0.0;
  double eer = 0.0;
  std::size_t positives = 0;
  std::size_t aliens = 0;
  std::uint64_t model_hash = 0;
  double compactness = 0.0;  // l_C of the final features over the whole target training set
  std::vector<RocPoint> roc;
  std::vector<ScoredOutcome> outcomes;
  std::vector<SweepPoint> sweep;
  TrainLog log;
  Model model;
};

struct ProtocolReport {
  std::vector<ClassRun> runs;
  MeanStd auc;
  MeanStd eer;
  std::string std_axis;  // which runs the standard deviation is taken over
  std::string config;

  std::string to_csv() const {
    std::ostringstream out;
    std::istringstream lines(config);
    for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
    out << "# std_axis=" << std_axis << '\n';
    out << "class,repeat,seed,positives,aliens,model_hash,l_C,auc,eer\n" << std::setprecision(17);
    for (const auto& r : runs) {
      out << r.class_name << ',' << r.repeat << ',' << r.seed << ',' << r.positives << ',' << r.aliens << ','
          << std::hex << r.model_hash << std::dec << ',' << r.compactness << ',' << r.auc << ',' << r.eer << '\n';
    }
    out << "mean,,,,,,," << auc.mean << ',' << eer.mean << '\n';
    out << "std,,,,,,," << auc.std << ',' << eer.std << '\n';
    return out.str();
  }

  std::string sweep_csv() const {
    std::ostringstream out;
    out << "class,repeat,templates,auc,eer\n" << std::setprecision(17);
    for (const auto& r : runs) {
      for (const auto& p : r.sweep) {
        out << r.class_name << ',' << r.repeat << ',' << p.template_count << ',' << p.auc << ',' << p.eer << '\n';
      }
    }
    return out.str();
  }

  std::string roc_csv() const {
    std::ostringstream out;
    out << "class,repeat,threshold,fpr,tpr\n" << std::setprecision(17);
    for (const auto& r : runs) {
      for (const auto& p : r.roc) {
        out << r.class_name << ',' << r.repeat << ',' << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
      }
    }
    return out.str();
  }

  std::string table() const {
    std::ostringstream out;
    out << std::left << std::setw(20) << "class" << std::setw(8) << "repeat" << std::setw(10) << "AUC" << "EER\n";
    out << std::fixed << std::setprecision(4);
    for (const auto& r : runs) {
      out << std::setw(20) << r.class_name << std::setw(8) << r.repeat << std::setw(10) << r.auc << r.eer << '\n';
    }
    out << "AUC " << auc.mean << " (" << auc.std << ")  EER " << eer.mean << " (" << eer.std
        << ")  std over " << std_axis << '\n';
    return out.str();
  }
};

// One positive class at a time: stratified split, overlap removal on the
// reference set, training per the recipe, templates from the positive
// training half, and scoring of the positive test half against an
// equally sized, seeded sample of alien test images.
inline ProtocolReport run_protocol(const Dataset& data, const Dataset& reference, const ModelRecipe& recipe,
                                   const ProtocolConfig& cfg, const std::string& config_echo = {}) {
  if (data.class_count() < 2) throw ValueError("protocol needs a dataset with at least 2 classes");
  if (!recipe.make_base) throw ValueError("model recipe has no base-model factory");
  if (cfg.repeats == 0) throw ValueError("repeats must be positive");
  std::vector<std::size_t> positives_to_run;
  if (cfg.classes.empty()) {
    for (std::size_t c = 0; c < data.class_count(); ++c) positives_to_run.push_back(c);
  } else {
    for (const auto& name : cfg.classes) positives_to_run.push_back(data.class_index(name));
  }

  Dataset ref = cfg.remove_overlap ? filter_overlap(reference, data.class_names) : reference;

  ProtocolReport report;
  report.config = config_echo;
  for (const auto positive : positives_to_run) {
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      ClassRun run;
      run.class_name = data.class_names[positive];
      run.repeat = rep;
      run.seed = derive_seed(cfg.seed, positive * 1000 + rep);

      const auto [train_half, test_half] = split(data, cfg.train_fraction, derive_seed(run.seed, 10));
      const Dataset target_train = train_half.subset(train_half.indices_of(positive));
      std::vector<std::size_t> pos_test = test_half.indices_of(positive);
      std::vector<std::size_t> alien_pool;
      for (std::size_t i = 0; i < test_half.size(); ++i) {
        if (test_half.samples[i].label != positive) alien_pool.push_back(i);
      }
      if (alien_pool.empty()) throw ValueError("no alien samples available for class '" + run.class_name + "'");
      Rng alien_rng(derive_seed(run.seed, 11));
      alien_rng.shuffle(std::span(alien_pool));
      alien_pool.resize(std::min(alien_pool.size(), pos_test.size()));
      std::sort(alien_pool.begin(), alien_pool.end());

      const Dataset run_reference = subsample(ref, cfg.reference_fraction, derive_seed(run.seed, 12));
      Model model = recipe.make_base(run_reference, run.seed);
      if (recipe.method != Method::pretrained_features) {
        TrainConfig tc = recipe.train;
        tc.seed = derive_seed(run.seed, 13);
        if (recipe.method == Method::compactness_only) tc.objective = Objective::compactness_only;
        auto trained = train(std::move(model), run_reference, target_train, tc);
        model = std::move(trained.model);
        run.log = std::move(trained.log);
      }
      run.model_hash = model.hash();
      if (target_train.size() >= 2) {
        const auto features = extract_features(model, target_train);
        std::vector<double> flat;
        for (const auto& f : features) flat.insert(flat.end(), f.begin(), f.end());
        run.compactness = compactness_forward(FeatureBatch(features.size(), model.feature_dim(), std::move(flat)));
      }

      auto score_with = [&](std::size_t count) {
        const auto templates = generate_templates(model, target_train, count, derive_seed(run.seed, 14));
        std::vector<ScoredOutcome> outcomes;
        for (double s : score_samples(model, templates, test_half, pos_test, cfg.match)) outcomes.push_back({s, 1});
        for (double s : score_samples(model, templates, test_half, alien_pool, cfg.match)) outcomes.push_back({s, 0});
        return outcomes;
      };
      run.outcomes = score_with(cfg.template_count);
      run.positives = pos_test.size();
      run.aliens = alien_pool.size();
      run.auc = auc(run.outcomes);
      run.eer = eer(run.outcomes);
      run.roc = roc(run.outcomes);
      for (const auto count : cfg.template_sweep) {
        const auto outcomes = score_with(count);
        run.sweep.push_back({count, auc(outcomes), eer(outcomes)});
      }
      run.model = std::move(model);
      report.runs.push_back(std::move(run));
    }
  }

  std::vector<double> aucs, eers;
  for (const auto& r : report.runs) {
    aucs.push_back(r.auc);
    eers.push_back(r.eer);
  }
  report.auc = mean_std(aucs);
  report.eer = mean_std(eers);
  if (cfg.repeats == 1) {
    report.std_axis = "classes";
  } else if (positives_to_run.size() == 1) {
    report.std_axis = "repeats";
  } else {
    report.std_axis = "classes x repeats";
  }
  return report;
}

}  // namespace doc
