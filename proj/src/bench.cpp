#include "pgn/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "pgn/io.hpp"
#include "pgn/random.hpp"

namespace pgn::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kAttackStream = 0x61747461636bULL;  // "attack"

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Runs fn(i) for i < n on up to `jobs` threads; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs)
                                 : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t column(const TransferMatrix& m, std::string_view model) {
  for (std::size_t j = 0; j < m.models.size(); ++j) {
    if (m.models[j] == model) return j;
  }
  throw UsageError("no target model '" + std::string(model) + "' in transfer matrix");
}

std::size_t row(const TransferMatrix& m, std::string_view method) {
  for (std::size_t i = 0; i < m.methods.size(); ++i) {
    if (m.methods[i] == method) return i;
  }
  throw UsageError("no method '" + std::string(method) + "' in transfer matrix");
}

}  // namespace

// --- PGNA ---------------------------------------------------------------------

std::string encode_adv(const AdvResult<float>& adv) {
  if (adv.adversarial.shape() != adv.original.shape()) {
    throw DimensionError("adversarial and original shapes differ");
  }
  io::ByteWriter w(io::Endian::Little);
  w.bytes("PGNA");
  w.u32(kAdvVersion);
  w.f64(adv.budget.eps);
  w.u32(static_cast<std::uint32_t>(adv.budget.steps));
  w.f64(adv.budget.decay);
  w.f64(adv.budget.clamp_min);
  w.f64(adv.budget.clamp_max);
  w.u32(adv.label);
  w.u32(static_cast<std::uint32_t>(adv.original.rank()));
  for (Index d : adv.original.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (Index i = 0; i < adv.original.size(); ++i) w.f32(adv.original.data()[i]);
  for (Index i = 0; i < adv.adversarial.size(); ++i) w.f32(adv.adversarial.data()[i]);
  return w.take();
}

AdvResult<float> decode_adv(std::string_view bytes) {
  io::ByteReader r(bytes, io::Endian::Little, "PGNA");
  const auto magic = r.bytes(4);
  if (magic != "PGNA") throw FormatError("PGNA: bad magic '" + std::string(magic) + "'");
  const auto version = r.u32();
  if (version != kAdvVersion) {
    throw UnsupportedVersionError("PGNA: unsupported version " + std::to_string(version) +
                                  " (this build reads " + std::to_string(kAdvVersion) + ")");
  }
  AdvResult<float> out;
  out.budget.eps = r.f64();
  out.budget.steps = static_cast<int>(r.u32());
  out.budget.decay = r.f64();
  out.budget.clamp_min = r.f64();
  out.budget.clamp_max = r.f64();
  try {
    out.budget.validate();
  } catch (const UsageError& e) {
    throw ConsistencyError(std::string("PGNA: invalid budget: ") + e.what());
  }
  out.label = r.u32();
  const auto rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("PGNA: implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
  std::size_t count = 1;
  for (auto d : shape) {
    const auto dim = static_cast<std::size_t>(d);
    if (dim != 0 && count > r.remaining() / 8 / dim) {
      throw LengthError("PGNA: shape " + shape_string(shape) + " exceeds the remaining " +
                        std::to_string(r.remaining()) + " bytes");
    }
    count *= dim;
  }
  const auto n = static_cast<Index>(count);
  Vector<float> original(n), adversarial(n);
  for (Index i = 0; i < n; ++i) original[i] = r.f32();
  for (Index i = 0; i < n; ++i) adversarial[i] = r.f32();
  if (!r.at_end()) {
    throw FormatError("PGNA: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  for (Index i = 0; i < n; ++i) {
    const double d = std::abs(static_cast<double>(adversarial[i]) - original[i]);
    if (!(d <= out.budget.eps)) {
      throw ConsistencyError("PGNA: value " + std::to_string(i) + " moved " + std::to_string(d) +
                             ", budget is " + std::to_string(out.budget.eps));
    }
  }
  out.original = Tensor<float>(shape, std::move(original));
  out.adversarial = Tensor<float>(std::move(shape), std::move(adversarial));
  return out;
}

void save_adv(const AdvResult<float>& adv, const std::string& path) {
  io::write_file(path, encode_adv(adv));
}

AdvResult<float> load_adv(const std::string& path) {
  try {
    return decode_adv(io::read_file(path));
  } catch (const IoError&) {
    throw;
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<AdvResult<float>> load_adv_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir, "not a directory");
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgna") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<AdvResult<float>> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_adv(p));
  return out;
}

// --- transfer -----------------------------------------------------------------

double success_rate(std::span<const AdvResult<float>> advs, const Classifier<float>& target) {
  if (advs.empty()) throw UsageError("success rate of an empty adversarial set");
  std::size_t fooled = 0;
  for (const auto& a : advs) {
    if (predict(target, a.adversarial) != a.label) ++fooled;
  }
  return 100.0 * static_cast<double>(fooled) / static_cast<double>(advs.size());
}

double TransferMatrix::rate(std::string_view method, std::string_view model) const {
  return rates(static_cast<Index>(row(*this, method)), static_cast<Index>(column(*this, model)));
}

double TransferMatrix::black_box_mean(std::string_view method) const {
  const auto i = static_cast<Index>(row(*this, method));
  double sum = 0.0;
  int count = 0;
  for (std::size_t j = 0; j < models.size(); ++j) {
    if (white_box[j]) continue;
    sum += rates(i, static_cast<Index>(j));
    ++count;
  }
  if (count == 0) throw UsageError("transfer matrix has no black-box column");
  return sum / count;
}

TransferMatrix transfer_eval(
    const std::vector<std::pair<std::string, std::vector<AdvResult<float>>>>& rows,
    std::span<const NamedModel> targets, std::span<const std::string> surrogates) {
  if (rows.empty() || targets.empty()) throw UsageError("transfer_eval needs methods and targets");
  TransferMatrix m;
  m.budget = rows.front().second.empty() ? AttackBudget{} : rows.front().second.front().budget;
  m.rates.resize(static_cast<Index>(rows.size()), static_cast<Index>(targets.size()));
  m.sd = Matrix<double>::Zero(m.rates.rows(), m.rates.cols());
  for (const auto& t : targets) {
    m.models.push_back(t.name);
    m.white_box.push_back(std::find(surrogates.begin(), surrogates.end(), t.name) !=
                          surrogates.end());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [method, advs] = rows[i];
    for (const auto& a : advs) {
      if (!(a.budget == m.budget)) {
        throw ConsistencyError("transfer_eval: '" + method + "' was run under a different budget");
      }
    }
    m.methods.push_back(method);
    m.samples.push_back(advs.size());
    for (std::size_t j = 0; j < targets.size(); ++j) {
      m.rates(static_cast<Index>(i), static_cast<Index>(j)) =
          success_rate(advs, targets[j].model);
    }
  }
  for (std::size_t k = 0; k < surrogates.size(); ++k) {
    m.surrogate += (k ? "+" : "") + surrogates[k];
  }
  return m;
}

TransferMatrix aggregate(std::span<const TransferMatrix> replicates) {
  if (replicates.empty()) throw UsageError("aggregate of zero replicates");
  TransferMatrix out = replicates.front();
  const auto n = static_cast<double>(replicates.size());
  out.rates.setZero();
  out.seeds.clear();
  for (const auto& r : replicates) {
    if (r.methods != out.methods || r.models != out.models) {
      throw ConsistencyError("aggregate: replicate matrices have different rows or columns");
    }
    out.rates += r.rates;
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  out.rates /= n;
  out.sd.setZero();
  if (replicates.size() > 1) {
    for (const auto& r : replicates) out.sd.array() += (r.rates - out.rates).array().square();
    out.sd = (out.sd / (n - 1.0)).cwiseSqrt();
  }
  return out;
}

std::string transfer_csv(const TransferMatrix& m) {
  std::string out = "method,samples";
  for (std::size_t j = 0; j < m.models.size(); ++j) {
    const std::string name = m.models[j] + (m.white_box[j] ? "*" : "");
    out += "," + name + "," + name + "_sd";
  }
  out += "\n";
  for (std::size_t i = 0; i < m.methods.size(); ++i) {
    out += m.methods[i] + "," + std::to_string(m.samples[i]);
    for (std::size_t j = 0; j < m.models.size(); ++j) {
      out += "," + fixed4(m.rates(static_cast<Index>(i), static_cast<Index>(j)));
      out += "," + fixed4(m.sd(static_cast<Index>(i), static_cast<Index>(j)));
    }
    out += "\n";
  }
  return out;
}

// --- config -------------------------------------------------------------------

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    auto item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

namespace {

template <typename Config, typename Visitor>
void visit_fields(Config& c, Visitor&& v) {
  v("seed", c.seed);
  v("replicates", c.replicates);
  v("jobs", c.jobs);
  v("n_classes", c.n_classes);
  v("side", c.side);
  v("train_per_class", c.train_per_class);
  v("test_per_class", c.test_per_class);
  v("noise_sd", c.noise_sd);
  v("data_seed", c.data_seed);
  v("train_images", c.train_images);
  v("train_labels", c.train_labels);
  v("test_images", c.test_images);
  v("test_labels", c.test_labels);
  v("eval_images", c.eval_images);
  v("surrogate", c.surrogate);
  v("targets", c.targets);
  v("epochs", c.epochs);
  v("batch_size", c.batch_size);
  v("lr", c.lr);
  v("train_momentum", c.train_momentum);
  v("methods", c.methods);
  v("eps", c.eps);
  v("steps", c.steps);
  v("mu", c.mu);
  v("delta", c.delta);
  v("zeta_factor", c.zeta_factor);
  v("samples", c.samples);
  v("fd_step", c.fd_step);
  v("transform", c.transform);
  v("dim_prob", c.dim_prob);
  v("dim_ratio", c.dim_ratio);
  v("sim_copies", c.sim_copies);
  v("reg_lambda", c.reg_lambda);
  v("reg_zeta_factor", c.reg_zeta_factor);
  v("vmi_samples", c.vmi_samples);
  v("vmi_beta", c.vmi_beta);
  v("emi_samples", c.emi_samples);
  v("emi_eta", c.emi_eta);
  v("sweep_param", c.sweep_param);
  v("sweep_values", c.sweep_values);
  v("timing", c.timing);
  v("timing_images", c.timing_images);
  v("save_advs", c.save_advs);
}

template <typename T>
void read_field(const json& j, const char* key, T& field) {
  try {
    if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (j.is_null()) {
        field.reset();
      } else {
        field = j.get<double>();
      }
    } else if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
      field = j.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw UsageError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_unsigned()) {
          field = j.get<T>();
        } else {
          throw UsageError("");
        }
      } else {
        field = j.get<T>();
      }
    } else {
      if (!j.is_number()) throw UsageError("");
      field = j.get<T>();
    }
  } catch (const std::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (replicates < 1) throw UsageError("replicates must be >= 1");
  if (jobs < 0) throw UsageError("jobs must be >= 0 (0 = all cores)");
  if (n_classes < 2) throw UsageError("n_classes must be >= 2");
  if (side < 8) throw UsageError("side must be >= 8");
  if (train_per_class < 1 || test_per_class < 1) throw UsageError("per-class counts must be >= 1");
  if (!(noise_sd >= 0.0)) throw UsageError("noise_sd must be >= 0");
  const int idx_paths = !train_images.empty() + !train_labels.empty() + !test_images.empty() +
                        !test_labels.empty();
  if (idx_paths != 0 && idx_paths != 4) {
    throw UsageError("IDX data needs all of train_images, train_labels, test_images, test_labels");
  }
  if (eval_images < 1) throw UsageError("eval_images must be >= 1");
  if (epochs < 1 || batch_size < 1) throw UsageError("epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(train_momentum >= 0.0 && train_momentum < 1.0)) {
    throw UsageError("train_momentum must lie in [0, 1)");
  }
  const auto surrogates = surrogate_names();
  if (surrogates.empty()) throw UsageError("at least one surrogate model is required");
  std::set<std::string> seen;
  for (const auto& name : surrogates) {
    if (!seen.insert(name).second) throw UsageError("surrogate '" + name + "' listed twice");
    architecture_by_name(name, {side, side, 1}, n_classes);
  }
  for (const auto& name : target_names()) architecture_by_name(name, {side, side, 1}, n_classes);
  const auto methods_ = method_list();
  if (methods_.empty()) throw UsageError("at least one attack method is required");
  for (auto m : methods_) attack_spec(m).validate();
  if (!sweep_param.empty()) {
    static const std::set<std::string> params{"delta", "zeta_factor", "samples", "fd_step"};
    if (!params.contains(sweep_param)) {
      throw UsageError("sweep_param must be one of delta, zeta_factor, samples, fd_step; got '" +
                       sweep_param + "'");
    }
    if (split_list(sweep_values).empty()) throw UsageError("sweep_values is empty");
  }
  if (timing_images < 1) throw UsageError("timing_images must be >= 1");
}

AttackSpec ExperimentConfig::attack_spec(Method method) const {
  AttackSpec s;
  s.method = method;
  s.budget.eps = eps;
  s.budget.steps = steps;
  s.budget.decay = mu;
  s.pgn = {delta, zeta_factor, samples};
  s.baseline = {vmi_samples, vmi_beta, emi_samples, emi_eta};
  s.reg = {reg_lambda, reg_zeta_factor};
  s.fd_step = fd_step;
  s.transform.kind = parse_transform(transform);
  s.transform.dim_probability = dim_prob;
  s.transform.dim_resize_ratio = dim_ratio;
  s.transform.sim_copies = sim_copies;
  return s;
}

std::vector<std::string> ExperimentConfig::surrogate_names() const { return split_list(surrogate); }

std::vector<std::string> ExperimentConfig::target_names() const { return split_list(targets); }

std::vector<Method> ExperimentConfig::method_list() const {
  std::vector<Method> out;
  for (const auto& name : split_list(methods)) out.push_back(parse_method(name));
  return out;
}

std::string ExperimentConfig::to_json() const {
  json j = json::object();
  visit_fields(*this, [&](const char* key, const auto& field) {
    using T = std::decay_t<decltype(field)>;
    // Worker count never changes results, so it stays out of the fingerprint.
    if (std::string_view(key) == "jobs") return;
    if constexpr (std::is_same_v<T, std::optional<double>>) {
      j[key] = field ? json(*field) : json(nullptr);
    } else {
      j[key] = field;
    }
  });
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  ExperimentConfig cfg;
  std::set<std::string> known;
  visit_fields(cfg, [&](const char* key, auto& field) {
    known.insert(key);
    if (auto it = j.find(key); it != j.end()) read_field(*it, key, field);
  });
  std::vector<std::string> unknown;
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) unknown.push_back(item.key());
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw UsageError("unknown config keys: " + list);
  }
  return cfg;
}

std::uint64_t ExperimentConfig::hash() const { return io::fnv1a(to_json()); }

// --- replicates ---------------------------------------------------------------

const Classifier<float>& Replicate::model(std::string_view name) const {
  for (const auto& m : zoo) {
    if (m.name == name) return m.model;
  }
  throw UsageError("no model '" + std::string(name) + "' in the zoo");
}

std::vector<const Classifier<float>*> Replicate::models(std::span<const std::string> names) const {
  std::vector<const Classifier<float>*> out;
  for (const auto& n : names) out.push_back(&model(n));
  return out;
}

std::pair<Dataset, Dataset> load_data(const ExperimentConfig& cfg) {
  if (!cfg.train_images.empty()) {
    Dataset train = load_idx(cfg.train_images, cfg.train_labels, Split::Train);
    Dataset test = load_idx(cfg.test_images, cfg.test_labels, Split::Test);
    if (train.image_shape != test.image_shape) {
      throw ConsistencyError("train and test images have different shapes");
    }
    train.n_classes = test.n_classes = std::max(train.n_classes, test.n_classes);
    return {std::move(train), std::move(test)};
  }
  return {gen_synthetic(cfg.n_classes, cfg.side, static_cast<std::size_t>(cfg.train_per_class),
                        cfg.noise_sd, cfg.data_seed, Split::Train),
          gen_synthetic(cfg.n_classes, cfg.side, static_cast<std::size_t>(cfg.test_per_class),
                        cfg.noise_sd, derive_seed(cfg.data_seed, 1), Split::Test)};
}

namespace {

std::vector<std::string> zoo_names(const ExperimentConfig& cfg) {
  std::vector<std::string> names = cfg.surrogate_names();
  for (const auto& t : cfg.target_names()) {
    if (std::find(names.begin(), names.end(), t) == names.end()) names.push_back(t);
  }
  return names;
}

}  // namespace

Replicate build_replicate(const ExperimentConfig& cfg, int index, const Dataset& train,
                          const Dataset& test) {
  Replicate rep;
  rep.index = index;
  rep.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
  rep.train = train;
  rep.test = test;
  const auto names = zoo_names(cfg);
  rep.zoo.resize(names.size());
  parallel_for(names.size(), cfg.jobs, [&](std::size_t m) {
    TrainConfig tc;
    tc.epochs = static_cast<std::size_t>(cfg.epochs);
    tc.batch_size = static_cast<std::size_t>(cfg.batch_size);
    tc.learning_rate = cfg.lr;
    tc.momentum = cfg.train_momentum;
    if (cfg.train_momentum == 0.0) tc.optimizer = Optimizer::Sgd;
    tc.seed = derive_seed(rep.seed, 1 + m);
    const auto arch = architecture_by_name(names[m], train.image_shape, train.n_classes);
    rep.zoo[m] = {names[m], pgn::train(arch, train, tc, &test)};
  });
  rep.eval = Dataset{test.image_shape, {}, {}, test.n_classes, Split::Test};
  for (std::size_t i = 0; i < test.size() && rep.eval.size() < static_cast<std::size_t>(cfg.eval_images);
       ++i) {
    bool all_correct = true;
    for (const auto& m : rep.zoo) {
      if (predict(m.model, test.images[i]) != test.labels[i]) {
        all_correct = false;
        break;
      }
    }
    if (all_correct) {
      rep.eval.images.push_back(test.images[i]);
      rep.eval.labels.push_back(test.labels[i]);
    }
  }
  if (rep.eval.size() == 0) {
    throw ConsistencyError("replicate " + std::to_string(index) +
                           ": no test image is classified correctly by every zoo model");
  }
  return rep;
}

std::vector<AdvResult<float>> attack_set(const AttackSpec& spec,
                                         std::span<const Classifier<float>* const> surrogates,
                                         const Dataset& data, std::uint64_t master_seed,
                                         int jobs) {
  spec.validate();
  std::vector<AdvResult<float>> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    Rng rng = stream_rng(master_seed, i);
    out[i] = run_attack<float>(spec, surrogates, data.images[i], data.labels[i], rng);
  });
  return out;
}

// --- sweep --------------------------------------------------------------------

std::string SweepReport::csv() const {
  std::string out = param + ",black_box_mean";
  if (!matrices.empty()) {
    for (std::size_t j = 0; j < matrices.front().models.size(); ++j) {
      out += "," + matrices.front().models[j] + (matrices.front().white_box[j] ? "*" : "");
    }
  }
  out += "\n";
  for (std::size_t v = 0; v < values.size(); ++v) {
    const auto& m = matrices[v];
    out += format_value(values[v]) + "," + fixed4(m.black_box_mean(m.methods.front()));
    for (Index j = 0; j < m.rates.cols(); ++j) out += "," + fixed4(m.rates(0, j));
    out += "\n";
  }
  return out;
}

std::string SweepReport::format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<double> SweepReport::black_box_curve() const {
  std::vector<double> out;
  for (const auto& m : matrices) out.push_back(m.black_box_mean(m.methods.front()));
  return out;
}

SweepReport sweep(const std::string& param, std::span<const double> values,
                  const ExperimentConfig& cfg, std::span<const Replicate> replicates) {
  if (values.empty()) throw UsageError("sweep needs at least one value");
  if (replicates.empty()) throw UsageError("sweep needs at least one replicate");
  SweepReport report;
  report.param = param;
  const auto surrogates = cfg.surrogate_names();
  for (double v : values) {
    AttackSpec spec = cfg.attack_spec(Method::Pgn);
    if (param == "delta") {
      spec.pgn.delta = v;
    } else if (param == "zeta_factor") {
      spec.pgn.zeta_factor = v;
    } else if (param == "samples") {
      if (v < 1.0 || v != std::floor(v)) throw UsageError("samples sweep values must be integers >= 1");
      spec.pgn.samples = static_cast<int>(v);
    } else if (param == "fd_step") {
      spec.fd_step = v;
    } else {
      throw UsageError("unknown sweep parameter '" + param + "'");
    }
    std::vector<TransferMatrix> per_rep;
    for (const auto& rep : replicates) {
      const auto models = rep.models(surrogates);
      auto advs = attack_set(spec, models, rep.eval, derive_seed(rep.seed, kAttackStream), cfg.jobs);
      std::vector<std::pair<std::string, std::vector<AdvResult<float>>>> rows;
      rows.emplace_back("pgn", std::move(advs));
      per_rep.push_back(transfer_eval(rows, rep.zoo, surrogates));
      per_rep.back().seeds = {rep.seed};
    }
    report.values.push_back(v);
    report.matrices.push_back(aggregate(per_rep));
  }
  return report;
}

// --- timing -------------------------------------------------------------------

double TimingArm::transfer_mean() const {
  if (transfer.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [name, rate] : transfer) s += rate;
  return s / static_cast<double>(transfer.size());
}

const TimingArm& TimingReport::arm(std::string_view name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  throw UsageError("no timing arm '" + std::string(name) + "'");
}

std::string TimingReport::csv() const {
  std::string out =
      "arm,images,steps,input_dim,wall_seconds,gradient_evals,evals_per_image,memory_bytes,"
      "memory_estimator,transfer_mean";
  if (!arms.empty()) {
    for (const auto& [name, rate] : arms.front().transfer) out += "," + name;
  }
  out += "\n";
  for (const auto& a : arms) {
    char wall[64];
    std::snprintf(wall, sizeof wall, "%.6f", a.wall_seconds);
    out += a.name + "," + std::to_string(a.images) + "," + std::to_string(steps) + "," +
           std::to_string(input_dim) + "," + wall + "," + std::to_string(a.gradient_evals) + "," +
           std::to_string(a.evals_per_image()) + "," + std::to_string(a.memory_bytes) + "," +
           a.memory_estimator + "," + fixed4(a.transfer_mean());
    for (const auto& [name, rate] : a.transfer) out += "," + fixed4(rate);
    out += "\n";
  }
  return out;
}

TimingReport timing_compare(const Classifier<float>& model, const Dataset& batch,
                            const AttackBudget& budget, const RegParams& reg,
                            std::span<const NamedModel> targets, std::uint64_t seed) {
  budget.validate();
  reg.validate();
  if (batch.size() == 0) throw UsageError("timing batch is empty");
  const Classifier<double> m64 = model.cast<double>();
  const auto n = static_cast<std::size_t>(m64.architecture().input_size());
  const double zeta = reg.zeta_factor * budget.eps;
  const FdConfig fd{budget.step_size(), DirectionNorm::L2};
  TimingReport report;
  report.input_dim = n;
  report.steps = budget.steps;
  const std::size_t vec = n * sizeof(double);
  const std::string estimator = "analytic-live-buffers";

  enum class Kind { Plain, Hessian, Fdm };
  const std::pair<const char*, Kind> kinds[] = {
      {"ifgsm", Kind::Plain}, {"ifgsm+hessian", Kind::Hessian}, {"ifgsm+fdm", Kind::Fdm}};
  for (const auto& [name, kind] : kinds) {
    TimingArm arm;
    arm.name = name;
    arm.images = batch.size();
    arm.memory_estimator = estimator;
    // iterate: x, adv, box bounds, gradient; regularized arms add x', g',
    // the shifted gradient and the product; the Hessian arm adds n x n.
    arm.memory_bytes = kind == Kind::Plain     ? 5 * vec
                       : kind == Kind::Fdm     ? 9 * vec
                                               : 9 * vec + n * vec + 2 * vec;
    std::vector<AdvResult<float>> advs;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ClassifierObjective<double> objective(m64, batch.labels[i]);
      CountingObjective<double> counted(objective);
      const Tensor<double> x = batch.images[i].cast<double>();
      Rng rng = stream_rng(seed, i);
      AdvResult<double> r;
      if (kind == Kind::Plain) {
        r = ifgsm(counted, x, batch.labels[i], budget);
      } else {
        r = detail::iterate(counted, x, batch.labels[i], budget, Method::RegIFgsm, false,
                            [&](const Vector<double>& adv, const Vector<double>&) {
                              const Vector<double> sample =
                                  detail::sample_linf_ball(adv, zeta, rng);
                              return kind == Kind::Hessian
                                         ? reg_objective_gradient_hessian(counted, sample, sample,
                                                                          reg.lambda)
                                               .gradient
                                         : reg_objective_gradient(counted, sample, sample,
                                                                  reg.lambda, fd)
                                               .gradient;
                            });
      }
      arm.gradient_evals += counted.gradient_evals();
      AdvResult<float> f;
      f.adversarial = r.adversarial.cast<float>();
      f.original = batch.images[i];
      f.label = r.label;
      f.budget = budget;
      advs.push_back(std::move(f));
    }
    arm.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& t : targets) arm.transfer.emplace_back(t.name, success_rate(advs, t.model));
    report.arms.push_back(std::move(arm));
  }
  return report;
}

// --- experiment ---------------------------------------------------------------

ReportBundle run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  ReportBundle bundle;
  bundle.directory = out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir, "cannot create directory: " + ec.message());

  const auto [train, test] = load_data(cfg);
  const auto surrogates = cfg.surrogate_names();
  const auto methods = cfg.method_list();

  json manifest = json::object();
  manifest["version"] = std::string(kVersion);
  manifest["config"] = json::parse(cfg.to_json());
  manifest["config_hash"] = io::hex64(cfg.hash());
  manifest["seed"] = cfg.seed;
  manifest["data"] = {{"train_size", train.size()},
                      {"test_size", test.size()},
                      {"image_shape", train.image_shape},
                      {"n_classes", train.n_classes}};
  json reps = json::array();

  std::vector<Replicate> replicates;
  std::vector<TransferMatrix> matrices;
  for (int r = 0; r < cfg.replicates; ++r) {
    replicates.push_back(build_replicate(cfg, r, train, test));
    const Replicate& rep = replicates.back();
    const auto models = rep.models(surrogates);
    std::vector<std::pair<std::string, std::vector<AdvResult<float>>>> rows;
    json rep_json = {{"index", r}, {"seed", rep.seed}, {"eval_images", rep.eval.size()}};
    json zoo = json::array();
    for (const auto& m : rep.zoo) {
      const auto& meta = m.model.metadata();
      zoo.push_back({{"name", m.name},
                     {"seed", meta.seed},
                     {"train_config_hash", io::hex64(meta.train_config_hash)},
                     {"train_accuracy", meta.train_accuracy},
                     {"test_accuracy", meta.test_accuracy},
                     {"weights_hash", io::hex64(io::fnv1a(encode_weights(m.model)))}});
    }
    rep_json["zoo"] = zoo;
    json adv_hashes = json::object();
    for (auto method : methods) {
      const std::string name(method_name(method));
      auto advs = attack_set(cfg.attack_spec(method), models, rep.eval,
                             derive_seed(rep.seed, kAttackStream), cfg.jobs);
      std::uint64_t combined = 0;
      if (cfg.save_advs) {
        const std::string dir = "advs/r" + std::to_string(r) + "/" + name;
        fs::create_directories(fs::path(out_dir) / dir, ec);
        if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
        for (std::size_t i = 0; i < advs.size(); ++i) {
          char file[32];
          std::snprintf(file, sizeof file, "%05zu.pgna", i);
          const std::string bytes = encode_adv(advs[i]);
          combined = io::fnv1a(io::hex64(combined) + bytes);
          io::write_file((fs::path(out_dir) / dir / file).string(), bytes);
        }
        adv_hashes[name] = io::hex64(combined);
      }
      rows.emplace_back(name, std::move(advs));
    }
    if (cfg.save_advs) rep_json["adv_hashes"] = adv_hashes;
    reps.push_back(rep_json);
    matrices.push_back(transfer_eval(rows, rep.zoo, surrogates));
    matrices.back().seeds = {rep.seed};
  }
  manifest["replicates"] = reps;

  bundle.transfer = aggregate(matrices);
  json files = json::object();
  auto emit = [&](const std::string& name, const std::string& contents, bool deterministic) {
    io::write_file((fs::path(out_dir) / name).string(), contents);
    bundle.files.push_back(name);
    if (deterministic) files[name] = io::hex64(io::fnv1a(contents));
  };
  emit("transfer.csv", transfer_csv(bundle.transfer), true);

  if (!cfg.sweep_param.empty()) {
    std::vector<double> values;
    for (const auto& v : split_list(cfg.sweep_values)) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw UsageError("sweep value '" + v + "' is not a number");
      }
    }
    bundle.sweep = sweep(cfg.sweep_param, values, cfg, replicates);
    emit("sweep_" + cfg.sweep_param + ".csv", bundle.sweep->csv(), true);
  }

  if (cfg.timing) {
    const Replicate& rep = replicates.front();
    if (surrogates.size() != 1) throw UsageError("timing comparison needs a single surrogate");
    const Dataset batch = rep.eval.head(static_cast<std::size_t>(cfg.timing_images));
    bundle.timing = timing_compare(rep.model(surrogates.front()), batch,
                                   cfg.attack_spec(Method::IFgsm).budget,
                                   {cfg.reg_lambda, cfg.reg_zeta_factor}, rep.zoo,
                                   derive_seed(rep.seed, kAttackStream));
    // Wall times vary run to run; the file is listed but not fingerprinted.
    emit("timing.csv", bundle.timing->csv(), false);
    manifest["measured_files"] = json::array({"timing.csv"});
  }
  manifest["files"] = files;
  const std::string manifest_text = manifest.dump(2) + "\n";
  io::write_file((fs::path(out_dir) / "manifest.json").string(), manifest_text);
  bundle.files.push_back("manifest.json");
  return bundle;
}

}  // namespace pgn::bench
