#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgn/attacks.hpp"
#include "pgn/data.hpp"
#include "pgn/models.hpp"

namespace pgn::bench {

// ---------------------------------------------------------------------------
// "PGNA" adversarial record, version 1, little-endian:
//   "PGNA" | u32 version | f64 eps | u32 steps | f64 decay | f64 clamp_min |
//   f64 clamp_max | u32 label | u32 rank | u32 dims... |
//   f32 original[size] | f32 adversarial[size]
// Method tags and iteration records are not persisted.
inline constexpr std::uint32_t kAdvVersion = 1;

std::string encode_adv(const AdvResult<float>& adv);
AdvResult<float> decode_adv(std::string_view bytes);
void save_adv(const AdvResult<float>& adv, const std::string& path);
AdvResult<float> load_adv(const std::string& path);

/// Every *.pgna file in `dir`, in lexicographic filename order.
std::vector<AdvResult<float>> load_adv_dir(const std::string& dir);

// ---------------------------------------------------------------------------

struct NamedModel {
  std::string name;
  Classifier<float> model;
};

/// Percentage of adversarial examples the target does not classify as their
/// label.
double success_rate(std::span<const AdvResult<float>> advs, const Classifier<float>& target);

/// Attack-method x target-model success rates. With several replicates the
/// cells hold the mean and the sample standard deviation.
struct TransferMatrix {
  std::vector<std::string> methods;
  std::vector<std::string> models;
  std::vector<bool> white_box;      // per model: target was a surrogate
  std::vector<std::size_t> samples;  // per method, examples per replicate
  Matrix<double> rates;              // percent
  Matrix<double> sd;
  std::string surrogate;
  std::vector<std::uint64_t> seeds;
  AttackBudget budget;

  double rate(std::string_view method, std::string_view model) const;
  /// Mean over the columns not flagged white-box.
  double black_box_mean(std::string_view method) const;
};

/// One row per (method, adversarial set). All sets must share one budget.
TransferMatrix transfer_eval(
    const std::vector<std::pair<std::string, std::vector<AdvResult<float>>>>& rows,
    std::span<const NamedModel> targets, std::span<const std::string> surrogates);

/// Cell-wise mean and sample standard deviation over replicate matrices with
/// identical rows and columns.
TransferMatrix aggregate(std::span<const TransferMatrix> replicates);

/// `method,samples,<model>,<model>_sd,...`; white-box columns carry a '*'.
std::string transfer_csv(const TransferMatrix& m);

// ---------------------------------------------------------------------------

/// Flat experiment configuration; every key has a default and mirrors a CLI
/// flag. Unknown keys are rejected by from_json.
struct ExperimentConfig {
  std::uint64_t seed = 2023;
  int replicates = 5;
  int jobs = 1;

  // data
  std::uint32_t n_classes = 4;
  int side = 16;
  int train_per_class = 500;
  int test_per_class = 150;
  double noise_sd = 0.15;
  std::uint64_t data_seed = 1;
  std::string train_images, train_labels, test_images, test_labels;  // IDX, optional
  int eval_images = 200;

  // zoo
  std::string surrogate = "mlp-a";  // comma list = ensemble
  std::string targets = "mlp-b,cnn-a";
  int epochs = 10;
  int batch_size = 32;
  double lr = 0.01;
  double train_momentum = 0.9;

  // attacks
  std::string methods = "mifgsm,pgn,reg-mifgsm";
  double eps = 16.0 / 255.0;
  int steps = 10;
  double mu = 1.0;
  double delta = 0.5;
  double zeta_factor = 3.0;
  int samples = 20;
  std::optional<double> fd_step;
  std::string transform = "none";
  double dim_prob = 0.5;
  double dim_ratio = 0.875;
  int sim_copies = 5;
  double reg_lambda = 0.5 * (16.0 / 255.0) / 10.0;
  double reg_zeta_factor = 3.0;
  int vmi_samples = 20;
  double vmi_beta = 1.5;
  int emi_samples = 11;
  double emi_eta = 7.0;

  // optional studies
  std::string sweep_param;   // delta | zeta_factor | samples | fd_step
  std::string sweep_values;  // comma list
  bool timing = false;
  int timing_images = 20;
  bool save_advs = true;

  void validate() const;
  AttackSpec attack_spec(Method method) const;
  std::vector<std::string> surrogate_names() const;
  std::vector<std::string> target_names() const;
  std::vector<Method> method_list() const;

  /// Canonical JSON (sorted keys, every field present).
  std::string to_json() const;
  /// Accepts a flat object, or a manifest whose "config" member is one.
  static ExperimentConfig from_json(std::string_view text);
  std::uint64_t hash() const;
};

std::vector<std::string> split_list(std::string_view text);

/// Data, trained zoo and evaluation subset for one replicate.
struct Replicate {
  int index = 0;
  std::uint64_t seed = 0;
  Dataset train;
  Dataset test;
  Dataset eval;  // first eval_images test examples every zoo model gets right
  std::vector<NamedModel> zoo;

  const Classifier<float>& model(std::string_view name) const;
  std::vector<const Classifier<float>*> models(std::span<const std::string> names) const;
};

/// Training and test data from the config (synthetic unless IDX paths set).
std::pair<Dataset, Dataset> load_data(const ExperimentConfig& cfg);

Replicate build_replicate(const ExperimentConfig& cfg, int index, const Dataset& train,
                          const Dataset& test);

/// Attacks every example of `data` against `surrogates`. Example i draws from
/// stream (master_seed, i), so the output is independent of `jobs`.
std::vector<AdvResult<float>> attack_set(const AttackSpec& spec,
                                         std::span<const Classifier<float>* const> surrogates,
                                         const Dataset& data, std::uint64_t master_seed,
                                         int jobs);

// ---------------------------------------------------------------------------

struct SweepReport {
  std::string param;
  std::vector<double> values;
  std::vector<TransferMatrix> matrices;  // one per value, aggregated over replicates

  /// `<param>,black_box_mean,<model>...` one row per value.
  std::string csv() const;
  std::vector<double> black_box_curve() const;
  static std::string format_value(double v);  // %.9g
};

/// PGN transfer for each value of `param` (delta, zeta_factor, samples or
/// fd_step) with everything else held at `cfg`.
SweepReport sweep(const std::string& param, std::span<const double> values,
                  const ExperimentConfig& cfg, std::span<const Replicate> replicates);

// ---------------------------------------------------------------------------

struct TimingArm {
  std::string name;
  double wall_seconds = 0.0;
  std::size_t gradient_evals = 0;
  std::size_t images = 0;
  std::size_t memory_bytes = 0;
  std::string memory_estimator;
  std::vector<std::pair<std::string, double>> transfer;  // target -> percent

  std::size_t evals_per_image() const { return images ? gradient_evals / images : 0; }
  double transfer_mean() const;
};

struct TimingReport {
  std::size_t input_dim = 0;
  int steps = 0;
  std::vector<TimingArm> arms;  // ifgsm, ifgsm+hessian, ifgsm+fdm

  const TimingArm& arm(std::string_view name) const;
  std::string csv() const;
};

/// I-FGSM, I-FGSM with the gradient-norm penalty via an explicit Hessian,
/// and the same penalty via the finite-difference product, on one batch in
/// 64-bit. Each regularized step samples x' in the zeta-ball of the iterate
/// and uses grad J(x') - lambda H(x') g'/|g'|_2.
TimingReport timing_compare(const Classifier<float>& model, const Dataset& batch,
                            const AttackBudget& budget, const RegParams& reg,
                            std::span<const NamedModel> targets, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct ReportBundle {
  std::string directory;
  std::vector<std::string> files;  // relative to directory
  TransferMatrix transfer;
  std::optional<SweepReport> sweep;
  std::optional<TimingReport> timing;
};

/// End to end: data, zoo, attacks, evaluation, reports. Writes manifest.json,
/// transfer.csv, optional sweep_<param>.csv and timing.csv, and advs/.
ReportBundle run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

inline constexpr std::string_view kVersion = "1.0.0";

}  // namespace pgn::bench
