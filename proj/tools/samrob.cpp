// samrob: scheme generation, phantom synthesis, training, evaluation and
// SH fitting from the command line.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "samrob/samrob.hpp"

namespace fs = std::filesystem;
using namespace samrob;

namespace {

void require_input(const std::string& path, const char* what) {
  if (path.empty())
    throw UsageError(std::string("missing ") + what + " path");
  if (!fs::is_regular_file(path))
    throw UsageError(std::string(what) + " not found: " + path);
}

void require_output(const std::string& path, const char* what) {
  if (path.empty())
    throw UsageError(std::string("missing ") + what + " path");
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent))
    throw UsageError(std::string(what) + " directory does not exist: " + parent.string());
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  try {
    while (std::getline(ss, item, ',')) {
      if (item.empty())
        continue;
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(item));
        continue;
      }
      const std::uint64_t lo = std::stoull(item.substr(0, dash)), hi = std::stoull(item.substr(dash + 1));
      if (hi < lo || hi - lo > 100000)
        throw UsageError("bad seed range '" + item + "'");
      for (std::uint64_t s = lo; s <= hi; ++s)
        seeds.push_back(s);
    }
  } catch (const std::logic_error& e) {
    if (const auto* u = dynamic_cast<const UsageError*>(&e))
      throw *u;
    throw UsageError("cannot parse seeds '" + text + "'");
  }
  if (seeds.empty())
    throw UsageError("no seeds given");
  return seeds;
}

void parse_dims(const std::string& text, std::size_t& h, std::size_t& w) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos)
      throw std::invalid_argument("");
    std::size_t used = 0;
    h = std::stoul(text.substr(0, x), &used);
    if (used != x)
      throw std::invalid_argument("");
    w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1)
      throw std::invalid_argument("");
  } catch (const std::logic_error&) {
    throw UsageError("dims must look like HxW, e.g. 64x64");
  }
}

std::string log_csv(const std::vector<EpochRecord>& log) {
  std::string s = "epoch,loss,l_r,l_u,l_ru\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.terms.random, r.terms.uniform,
                  r.terms.consistency);
    s += buf;
  }
  return s;
}

void report_epoch(const EpochRecord& r, std::size_t total) {
  if (r.epoch == 1 || r.epoch == total || r.epoch % 10 == 0)
    std::fprintf(stderr, "epoch %zu/%zu  loss %.6g  (L_r %.4g  L_u %.4g  L_ru %.4g)\n", r.epoch, total, r.loss,
                 r.terms.random, r.terms.uniform, r.terms.consistency);
}

// Matches each direction of `subset` (per b-shell) to an index of the dataset scheme.
SubsampleSelection match_subset(const MultiShellScheme& full, const MultiShellScheme& subset) {
  SubsampleSelection sel;
  sel.indices.resize(full.shell_count());
  for (const auto& sh : subset.shells()) {
    std::size_t s = 0;
    while (s < full.shell_count() && std::abs(full.shell(s).b_value - sh.b_value) > 1e-6 * sh.b_value)
      ++s;
    if (s == full.shell_count())
      throw UsageError("subset b-value " + format_double(sh.b_value) + " is not in the dataset");
    for (const auto& d : sh.directions) {
      std::size_t hit = full.shell(s).size();
      for (std::size_t i = 0; i < full.shell(s).size(); ++i) {
        const auto& g = full.shell(s).directions[i].vec();
        if ((g - d.vec()).norm() < 1e-6 || (g + d.vec()).norm() < 1e-6) {
          hit = i;
          break;
        }
      }
      if (hit == full.shell(s).size())
        throw UsageError("subset direction not found in dataset shell b=" + format_double(sh.b_value));
      sel.indices[s].push_back(hit);
    }
  }
  for (const auto& idx : sel.indices)
    if (idx.empty())
      throw UsageError("subset must cover every dataset shell");
  return sel;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"q-space sampling-robust NODDI toolkit"};
  app.require_subcommand(1);

  // gen-scheme
  auto* gen = app.add_subcommand("gen-scheme", "electrostatically uniform multi-shell scheme");
  std::vector<std::size_t> n_per_shell;
  std::vector<double> b_values;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n-per-shell", n_per_shell, "directions per shell, e.g. 30,30")->required()->delimiter(',');
  gen->add_option("--b-values", b_values, "b-values in s/mm^2, e.g. 1000,2000")->required()->delimiter(',');
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "output scheme file")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize a NODDI phantom dataset");
  std::string synth_scheme, synth_dims = "64x64", synth_out;
  double synth_noise = kDefaultNoiseSigma;
  std::uint64_t synth_seed = 0;
  synth->add_option("--scheme", synth_scheme, "scheme text file")->required();
  synth->add_option("--dims", synth_dims, "grid size HxW");
  synth->add_option("--noise", synth_noise, "Rician noise sigma");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--out", synth_out, "output dataset container")->required();

  // train
  auto* tr = app.add_subcommand("train", "train an estimator with sampling augmentation");
  std::string tr_dataset, tr_config, tr_model, tr_log, tr_loss, tr_features;
  std::size_t tr_epochs = 0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--dataset", tr_dataset, "training dataset container");
  tr->add_option("--config", tr_config, "JSON run config");
  tr->add_option("--out-model", tr_model, "output model file");
  tr->add_option("--log", tr_log, "per-epoch loss CSV");
  auto* tr_loss_opt = tr->add_option("--loss-mode", tr_loss, "lr, lu, lr+lu or consis");
  auto* tr_feat_opt = tr->add_option("--features", tr_features, "sh or raw");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "override epoch count");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "override training seed");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a model under a test protocol");
  std::string ev_model, ev_dataset, ev_protocol, ev_seeds = "0", ev_csv, ev_train, ev_config;
  std::size_t ev_epochs = 0;
  ev->add_option("--model", ev_model, "model file (not used by ablation)");
  ev->add_option("--dataset", ev_dataset, "test dataset container")->required();
  ev->add_option("--protocol", ev_protocol, "ss, rs, sweep, flexible or ablation")->required();
  ev->add_option("--seeds", ev_seeds, "comma list and ranges, e.g. 0-9");
  ev->add_option("--out-csv", ev_csv, "output CSV report")->required();
  ev->add_option("--train-dataset", ev_train, "training dataset (ablation)");
  ev->add_option("--config", ev_config, "JSON run config (ablation training settings)");
  auto* ev_epochs_opt = ev->add_option("--epochs", ev_epochs, "override epoch count (ablation)");

  // fit-sh
  auto* fit = app.add_subcommand("fit-sh", "fit SH coefficients for every voxel");
  std::string fit_ds_path, fit_subset, fit_out;
  double fit_lambda = kDefaultShLambda;
  int fit_order = kDefaultShOrder;
  fit->add_option("--dataset", fit_ds_path, "dataset container")->required();
  fit->add_option("--scheme-subset", fit_subset, "scheme file listing the directions to use");
  fit->add_option("--out", fit_out, "output coefficient file")->required();
  fit->add_option("--lambda", fit_lambda, "Laplace-Beltrami weight");
  fit->add_option("--order", fit_order, "even SH order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      require_output(gen_out, "output");
      write_scheme(gen_out, generate_uniform_scheme(n_per_shell, b_values, gen_seed));
    } else if (*synth) {
      require_input(synth_scheme, "scheme");
      require_output(synth_out, "output");
      std::size_t h = 0, w = 0;
      parse_dims(synth_dims, h, w);
      const MultiShellScheme scheme = read_scheme(synth_scheme);
      write_dataset(synth_out, generate_phantom(h, w, scheme, synth_noise, synth_seed));
    } else if (*tr) {
      RunConfig cfg;
      if (!tr_config.empty()) {
        require_input(tr_config, "config");
        cfg = read_run_config(tr_config);
      }
      if (tr_dataset.empty())
        tr_dataset = cfg.dataset_path;
      if (tr_model.empty())
        tr_model = cfg.model_path;
      if (tr_log.empty())
        tr_log = cfg.log_path;
      if (*tr_loss_opt)
        cfg.train.loss_mode = parse_loss_mode(tr_loss);
      if (*tr_feat_opt)
        cfg.train.features = parse_feature_kind(tr_features);
      if (*tr_epochs_opt)
        cfg.train.epochs = tr_epochs;
      if (*tr_seed_opt)
        cfg.train.seed = tr_seed;
      require_input(tr_dataset, "dataset");
      require_output(tr_model, "model");
      if (!tr_log.empty())
        require_output(tr_log, "log");
      const PhantomDataset ds = read_dataset(tr_dataset);
      const std::size_t total = cfg.train.epochs;
      const TrainResult r = train(ds, cfg.train, [total](const EpochRecord& rec) { report_epoch(rec, total); });
      write_model(tr_model, r.estimator);
      if (!tr_log.empty())
        write_file_atomically(tr_log, log_csv(r.log));
    } else if (*ev) {
      ExperimentSpec spec;
      RunConfig cfg;
      if (!ev_config.empty()) {
        require_input(ev_config, "config");
        cfg = read_run_config(ev_config);
        spec = cfg.experiment;
      }
      spec.protocol = parse_protocol(ev_protocol);
      spec.seeds = parse_seeds(ev_seeds);
      require_input(ev_dataset, "dataset");
      require_output(ev_csv, "report");
      MetricReport rep;
      if (spec.protocol == Protocol::Ablation) {
        if (ev_train.empty())
          ev_train = cfg.dataset_path;
        require_input(ev_train, "training dataset");
        if (*ev_epochs_opt)
          cfg.train.epochs = ev_epochs;
        const PhantomDataset train_ds = read_dataset(ev_train);
        const PhantomDataset test_ds = read_dataset(ev_dataset);
        rep = run_ablation(spec, cfg.train, train_ds, test_ds);
      } else {
        require_input(ev_model, "model");
        const Estimator est = read_model(ev_model);
        const PhantomDataset ds = read_dataset(ev_dataset);
        rep = run_protocol(spec, est, ds);
      }
      write_file_atomically(ev_csv, rep.to_csv());
      std::cout << summary_text(rep);
    } else if (*fit) {
      require_input(fit_ds_path, "dataset");
      if (!fit_subset.empty())
        require_input(fit_subset, "scheme subset");
      require_output(fit_out, "output");
      check_sh_order(fit_order);
      const PhantomDataset ds = read_dataset(fit_ds_path);
      const SubsampleSelection sel =
          fit_subset.empty() ? SubsampleSelection::identity(ds.scheme) : match_subset(ds.scheme, read_scheme(fit_subset));
      write_coefficients(fit_out, fit_dataset(ds, sel, fit_order, fit_lambda));
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
