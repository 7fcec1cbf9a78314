// pgn: train models, craft and evaluate transfer attacks, plot loss
// surfaces, sweep hyper-parameters and run whole experiments.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgn/bench.hpp"
#include "pgn/flatness.hpp"
#include "pgn/io.hpp"

namespace fs = std::filesystem;
using namespace pgn;

namespace {

void log_stage(const std::string& line) { std::cerr << "[pgn] " << line << "\n"; }

struct DataFlags {
  std::string images, labels;
  std::string split = "test";
  bench::ExperimentConfig synthetic;
  int count = 0;  // 0 = all

  void add(CLI::App* cmd) {
    cmd->add_option("--images", images, "IDX image file (synthetic data when omitted)");
    cmd->add_option("--labels", labels, "IDX label file");
    cmd->add_option("--split", split, "Synthetic split to use")
        ->check(CLI::IsMember({"train", "test"}));
    cmd->add_option("--n-classes", synthetic.n_classes, "Synthetic classes");
    cmd->add_option("--side", synthetic.side, "Synthetic image side");
    cmd->add_option("--train-per-class", synthetic.train_per_class, "Synthetic training images per class");
    cmd->add_option("--test-per-class", synthetic.test_per_class, "Synthetic test images per class");
    cmd->add_option("--noise-sd", synthetic.noise_sd, "Synthetic pixel noise");
    cmd->add_option("--data-seed", synthetic.data_seed, "Synthetic data seed");
    cmd->add_option("--count", count, "Use the first N examples (0 = all)");
  }

  Dataset load() const {
    if (images.empty() != labels.empty()) throw UsageError("--images and --labels go together");
    if (count < 0) throw UsageError("--count must be >= 0");
    Dataset d;
    if (!images.empty()) {
      d = load_idx(images, labels, split == "train" ? Split::Train : Split::Test);
    } else {
      auto [train, test] = bench::load_data(synthetic);
      d = split == "train" ? std::move(train) : std::move(test);
    }
    return count > 0 ? d.head(static_cast<std::size_t>(count)) : d;
  }
};

struct AttackFlags {
  bench::ExperimentConfig cfg;  // attack fields only
  std::string method = "pgn";
  double eps_255 = -1.0;
  double fd_step = 0.0;

  void add(CLI::App* cmd, bool with_method) {
    if (with_method) {
      cmd->add_option("--method", method, "Attack method")
          ->check(CLI::IsMember({"ifgsm", "mifgsm", "nifgsm", "vmi", "emi", "pgn", "reg-ifgsm",
                                 "reg-mifgsm"}));
    }
    auto* eps = cmd->add_option("--eps", cfg.eps, "L-inf budget in [0,1] pixel units (16/255)");
    cmd->add_option("--eps-255", eps_255, "Budget in 0..255 pixel units")->excludes(eps);
    cmd->add_option("--steps", cfg.steps, "Iterations T");
    cmd->add_option("--mu", cfg.mu, "Momentum decay");
    cmd->add_option("--delta", cfg.delta, "PGN balanced coefficient");
    cmd->add_option("--zeta-factor", cfg.zeta_factor, "PGN sampling radius in units of eps");
    cmd->add_option("--samples", cfg.samples, "PGN sampled examples N");
    cmd->add_option("--fd-step", fd_step, "Finite-difference step (default eps/T)");
    cmd->add_option("--transform", cfg.transform, "Input transform")
        ->check(CLI::IsMember({"none", "dim", "sim"}));
    cmd->add_option("--dim-prob", cfg.dim_prob, "DIM transform probability");
    cmd->add_option("--dim-ratio", cfg.dim_ratio, "DIM smallest resize ratio");
    cmd->add_option("--sim-copies", cfg.sim_copies, "SIM scale copies");
    cmd->add_option("--reg-lambda", cfg.reg_lambda, "Gradient-norm penalty of reg-* attacks");
    cmd->add_option("--reg-zeta-factor", cfg.reg_zeta_factor, "reg-* sampling radius in units of eps");
    cmd->add_option("--vmi-samples", cfg.vmi_samples, "VMI neighbourhood samples");
    cmd->add_option("--vmi-beta", cfg.vmi_beta, "VMI radius in units of eps");
    cmd->add_option("--emi-samples", cfg.emi_samples, "EMI sampled points");
    cmd->add_option("--emi-eta", cfg.emi_eta, "EMI interval in units of the step size");
  }

  void finish(CLI::App* cmd) {
    if (cmd->count("--eps-255")) cfg.eps = eps_255 / 255.0;
    if (cmd->count("--fd-step")) cfg.fd_step = fd_step;
  }

  AttackSpec spec() const {
    auto s = cfg.attack_spec(parse_method(method));
    s.validate();
    return s;
  }
};

std::vector<Classifier<float>> load_models(const std::string& list) {
  std::vector<Classifier<float>> out;
  for (const auto& path : bench::split_list(list)) out.push_back(load(path));
  if (out.empty()) throw UsageError("no model files given");
  return out;
}

std::vector<const Classifier<float>*> pointers(const std::vector<Classifier<float>>& models) {
  std::vector<const Classifier<float>*> out;
  for (const auto& m : models) out.push_back(&m);
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
}

std::string timestamp_dir(const std::string& parent) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "run-%Y%m%d-%H%M%S", &tm);
  fs::path dir = fs::path(parent) / buf;
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path(parent) / (std::string(buf) + "-" + std::to_string(k));
  return dir.string();
}

int run(int argc, char** argv) {
  CLI::App app{"Penalized-gradient-norm transfer attacks: train, attack, evaluate, report"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a zoo architecture and write a PGNW file");
  DataFlags train_data;
  train_data.split = "train";
  train_data.add(train_cmd);
  std::string arch = "mlp-a";
  TrainConfig tc;
  std::string train_out = "model.pgnw";
  train_cmd->add_option("--arch", arch, "Architecture")->check(CLI::IsMember({"mlp-a", "mlp-b", "cnn-a"}));
  train_cmd->add_option("--epochs", tc.epochs, "Epochs");
  train_cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", tc.learning_rate, "Learning rate");
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum (0 = plain SGD)");
  train_cmd->add_option("--seed", tc.seed, "Initialization and shuffling seed");
  train_cmd->add_option("--out", train_out, "Output weight file");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Craft adversarial examples, one PGNA file each");
  DataFlags attack_data;
  attack_data.add(attack_cmd);
  AttackFlags attack;
  attack.add(attack_cmd, true);
  std::string ensemble;
  std::uint64_t attack_seed = 2023;
  std::string attack_out = "advs";
  int attack_jobs = 1;
  attack_cmd->add_option("--ensemble,--model", ensemble, "Surrogate weight file(s), comma separated")
      ->required();
  attack_cmd->add_option("--seed", attack_seed, "Master seed; example i uses stream i");
  attack_cmd->add_option("--out", attack_out, "Output directory");
  attack_cmd->add_option("--jobs", attack_jobs, "Worker threads (0 = all cores)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Transfer success of PGNA files on target models");
  std::string eval_advs, eval_models, eval_surrogates, eval_row = "attack", eval_out;
  eval_cmd->add_option("--advs", eval_advs, "Directory of PGNA files")->required();
  eval_cmd->add_option("--models", eval_models, "Target weight files, comma separated")->required();
  eval_cmd->add_option("--white-box", eval_surrogates, "Target files that were surrogates");
  eval_cmd->add_option("--row", eval_row, "Row label");
  eval_cmd->add_option("--out", eval_out, "CSV output (stdout when omitted)");

  // surface
  auto* surface_cmd = app.add_subcommand("surface", "Loss on a 2-D random slice around an image");
  DataFlags surface_data;
  surface_data.add(surface_cmd);
  std::string surface_model, surface_adv, surface_out = "surface.csv";
  int surface_index = 0, grid = 41;
  double range = 0.1;
  std::uint64_t surface_seed = 2023;
  surface_cmd->add_option("--model", surface_model, "Weight file")->required();
  surface_cmd->add_option("--adv", surface_adv, "Center on this PGNA adversarial example");
  surface_cmd->add_option("--index", surface_index, "Dataset example to center on");
  surface_cmd->add_option("--grid", grid, "Points per axis (odd)");
  surface_cmd->add_option("--range", range, "Half-width of the slice");
  surface_cmd->add_option("--seed", surface_seed, "Direction seed");
  surface_cmd->add_option("--out", surface_out, "CSV output");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "PGN transfer as one hyper-parameter varies");
  std::string sweep_config, sweep_param = "delta", sweep_values = "0,0.25,0.5,0.75,1",
                            sweep_out = "sweep";
  int sweep_jobs = 1, sweep_replicates = 1;
  std::uint64_t sweep_seed = 2023;
  sweep_cmd->add_option("--config", sweep_config, "Experiment JSON (defaults when omitted)");
  sweep_cmd->add_option("--param", sweep_param, "Swept parameter")
      ->check(CLI::IsMember({"delta", "zeta_factor", "samples", "fd_step"}));
  sweep_cmd->add_option("--values", sweep_values, "Comma separated values");
  sweep_cmd->add_option("--replicates", sweep_replicates, "Seed replicates");
  sweep_cmd->add_option("--seed", sweep_seed, "Master seed");
  sweep_cmd->add_option("--jobs", sweep_jobs, "Worker threads (0 = all cores)");
  sweep_cmd->add_option("--out", sweep_out, "Output directory");

  // bench-hvp
  auto* hvp_cmd = app.add_subcommand("bench-hvp", "Explicit Hessian versus finite-difference product");
  DataFlags hvp_data;
  hvp_data.count = 20;
  hvp_data.add(hvp_cmd);
  AttackFlags hvp_attack;
  hvp_attack.add(hvp_cmd, false);
  std::string hvp_model, hvp_targets, hvp_out = "timing.csv";
  std::uint64_t hvp_seed = 2023;
  hvp_cmd->add_option("--model", hvp_model, "Surrogate weight file")->required();
  hvp_cmd->add_option("--targets", hvp_targets, "Target weight files, comma separated");
  hvp_cmd->add_option("--seed", hvp_seed, "Sampling seed");
  hvp_cmd->add_option("--out", hvp_out, "CSV output");

  // run
  auto* run_cmd = app.add_subcommand("run", "Full experiment into a timestamped report directory");
  std::string run_config, run_out = "runs";
  bool run_exact = false;
  int run_jobs = 1;
  run_cmd->add_option("--config", run_config, "Flat experiment JSON or a previous manifest.json");
  run_cmd->add_option("--out", run_out, "Parent directory for the report");
  run_cmd->add_flag("--exact-out", run_exact, "Write into --out itself, no timestamped subdirectory");
  run_cmd->add_option("--jobs", run_jobs, "Worker threads (0 = all cores); never changes output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (train_cmd->parsed()) {
    if (tc.momentum == 0.0) tc.optimizer = Optimizer::Sgd;
    const Dataset data = train_data.load();
    auto test_flags = train_data;
    test_flags.split = "test";
    test_flags.count = 0;
    const Dataset test = train_data.images.empty() ? test_flags.load() : Dataset{};
    log_stage("training " + arch + " on " + std::to_string(data.size()) + " images");
    const auto model = train(architecture_by_name(arch, data.image_shape, data.n_classes), data,
                             tc, test.size() ? &test : nullptr);
    save(model, train_out);
    std::printf("train_accuracy=%.4f test_accuracy=%.4f\n", model.metadata().train_accuracy,
                model.metadata().test_accuracy);
    return 0;
  }

  if (attack_cmd->parsed()) {
    attack.finish(attack_cmd);
    const AttackSpec spec = attack.spec();
    const auto models = load_models(ensemble);
    const Dataset data = attack_data.load();
    log_stage("attacking " + std::to_string(data.size()) + " images with " + attack.method);
    const auto advs = bench::attack_set(spec, pointers(models), data, attack_seed, attack_jobs);
    ensure_dir(attack_out);
    for (std::size_t i = 0; i < advs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%05zu.pgna", i);
      bench::save_adv(advs[i], (fs::path(attack_out) / name).string());
    }
    std::size_t fooled = 0;
    for (const auto& a : advs) fooled += predict(models.front(), a.adversarial) != a.label;
    std::printf("images=%zu white_box_success=%.4f\n", advs.size(),
                advs.empty() ? 0.0 : 100.0 * static_cast<double>(fooled) / advs.size());
    return 0;
  }

  if (eval_cmd->parsed()) {
    const auto advs = bench::load_adv_dir(eval_advs);
    if (advs.empty()) throw UsageError(eval_advs + ": no .pgna files");
    std::vector<bench::NamedModel> targets;
    for (const auto& path : bench::split_list(eval_models)) {
      targets.push_back({fs::path(path).stem().string(), load(path)});
    }
    std::vector<std::string> white;
    for (const auto& path : bench::split_list(eval_surrogates)) {
      white.push_back(fs::path(path).stem().string());
    }
    std::vector<std::pair<std::string, std::vector<AdvResult<float>>>> rows;
    rows.emplace_back(eval_row, advs);
    const std::string csv = bench::transfer_csv(bench::transfer_eval(rows, targets, white));
    if (eval_out.empty()) {
      std::fputs(csv.c_str(), stdout);
    } else {
      io::write_file(eval_out, csv);
    }
    return 0;
  }

  if (surface_cmd->parsed()) {
    const auto model = load(surface_model);
    Tensor<float> center;
    std::uint32_t label = 0;
    if (!surface_adv.empty()) {
      const auto adv = bench::load_adv(surface_adv);
      center = adv.adversarial;
      label = adv.label;
    } else {
      const Dataset data = surface_data.load();
      if (surface_index < 0 || static_cast<std::size_t>(surface_index) >= data.size()) {
        throw UsageError("--index " + std::to_string(surface_index) + " outside the dataset of " +
                         std::to_string(data.size()));
      }
      center = data.images[static_cast<std::size_t>(surface_index)];
      label = data.labels[static_cast<std::size_t>(surface_index)];
    }
    const Classifier<double> m64 = model.cast<double>();
    const ClassifierObjective<double> objective(m64, label);
    const auto surface =
        loss_surface(objective, center.cast<double>().data(), surface_seed, range, grid);
    io::write_file(surface_out, surface_csv(surface));
    std::printf("rows=%d center_loss=%s\n", grid * grid, format_sig9(surface.center_loss).c_str());
    return 0;
  }

  if (sweep_cmd->parsed()) {
    auto cfg = sweep_config.empty() ? bench::ExperimentConfig{}
                                    : bench::ExperimentConfig::from_json(io::read_file(sweep_config));
    if (sweep_cmd->count("--seed") || sweep_config.empty()) cfg.seed = sweep_seed;
    if (sweep_cmd->count("--replicates") || sweep_config.empty()) cfg.replicates = sweep_replicates;
    cfg.jobs = sweep_jobs;
    cfg.sweep_param = sweep_param;
    cfg.sweep_values = sweep_values;
    cfg.validate();
    std::vector<double> values;
    for (const auto& v : bench::split_list(sweep_values)) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw UsageError("sweep value '" + v + "' is not a number");
      }
    }
    const auto [train, test] = bench::load_data(cfg);
    std::vector<bench::Replicate> reps;
    for (int r = 0; r < cfg.replicates; ++r) {
      log_stage("replicate " + std::to_string(r) + ": training zoo");
      reps.push_back(bench::build_replicate(cfg, r, train, test));
    }
    log_stage("sweeping " + sweep_param);
    const auto report = bench::sweep(sweep_param, values, cfg, reps);
    ensure_dir(sweep_out);
    io::write_file((fs::path(sweep_out) / ("sweep_" + sweep_param + ".csv")).string(), report.csv());
    std::fputs(report.csv().c_str(), stdout);
    return 0;
  }

  if (hvp_cmd->parsed()) {
    hvp_attack.finish(hvp_cmd);
    const auto model = load(hvp_model);
    std::vector<bench::NamedModel> targets;
    for (const auto& path : bench::split_list(hvp_targets)) {
      targets.push_back({fs::path(path).stem().string(), load(path)});
    }
    const Dataset data = hvp_data.load();
    const auto spec = hvp_attack.cfg.attack_spec(Method::IFgsm);
    spec.validate();
    log_stage("timing three arms on " + std::to_string(data.size()) + " images");
    const auto report =
        bench::timing_compare(model, data, spec.budget, spec.reg, targets, hvp_seed);
    io::write_file(hvp_out, report.csv());
    std::fputs(report.csv().c_str(), stdout);
    return 0;
  }

  if (run_cmd->parsed()) {
    auto cfg = run_config.empty() ? bench::ExperimentConfig{}
                                  : bench::ExperimentConfig::from_json(io::read_file(run_config));
    if (run_cmd->count("--jobs")) cfg.jobs = run_jobs;
    cfg.validate();
    const std::string dir = run_exact ? run_out : timestamp_dir(run_out);
    log_stage("writing report to " + dir);
    const auto bundle = bench::run_experiment(cfg, dir);
    std::fputs(bench::transfer_csv(bundle.transfer).c_str(), stdout);
    std::printf("report=%s\n", dir.c_str());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << e.code() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal: " << e.what() << "\n";
    return 2;
  }
}
