// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Runs the full desk protocol, so it takes a few minutes.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pgn/bench.hpp"
#include "pgn/flatness.hpp"
#include "pgn/io.hpp"

using namespace pgn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Runs one criterion; an exception counts as a failure with its message.
void check(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

double max_rel(const Vector<double>& a, const Vector<double>& ref) {
  if (a.size() == 0) return 0.0;
  const double scale = ref.cwiseAbs().maxCoeff();
  const double err = (a - ref).cwiseAbs().maxCoeff();
  return scale > 0.0 ? err / scale : err;
}

double cosine(const Vector<double>& a, const Vector<double>& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

bool same_bytes(const void* a, const void* b, std::size_t n) { return std::memcmp(a, b, n) == 0; }

bool same_records(const std::vector<IterationRecord>& a, const std::vector<IterationRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (!same_bytes(&a[t].loss, &b[t].loss, sizeof(double)) ||
        !same_bytes(&a[t].update_l1, &b[t].update_l1, sizeof(double)) ||
        !same_bytes(&a[t].momentum_l1, &b[t].momentum_l1, sizeof(double)) ||
        a[t].degenerate != b[t].degenerate) {
      return false;
    }
  }
  return true;
}

/// Every regular file below `root`, relative path -> contents.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), root).string()] = io::read_file(e.path().string());
    }
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PGN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// --- shared desk state --------------------------------------------------------

struct Desk {
  bench::ExperimentConfig cfg;
  Dataset train, test;
  std::vector<bench::Replicate> reps;
  fs::path work;
  fs::path run_dir;  // default-protocol report written by criterion 7
};

// --- criteria -------------------------------------------------------------------

void gradient_correctness() {
  const auto start = Clock::now();
  const char* archs[] = {"mlp-a", "mlp-b", "cnn-a"};
  const int pairs = 60;
  double worst_input = 0.0, worst_param = 0.0;
  for (int p = 0; p < pairs; ++p) {
    Rng rng(derive_seed(101, static_cast<std::uint64_t>(p)));
    auto model = Classifier<double>::initialize(
        architecture_by_name(archs[p % 3], {16, 16, 1}, 4), derive_seed(102, p));
    std::normal_distribution<double> gauss(0.0, 0.1);
    for (auto& t : model.parameters()) {
      if (t.rank() == 1) {
        for (Index i = 0; i < t.size(); ++i) t.data()[i] = gauss(rng);
      }
    }
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> label(0, 3);
    std::vector<Tensor<double>> images;
    std::vector<std::uint32_t> labels;
    for (int b = 0; b < 3; ++b) {
      Tensor<double> x(Shape{16, 16, 1});
      for (Index i = 0; i < x.size(); ++i) x.data()[i] = pixel(rng);
      images.push_back(std::move(x));
      labels.push_back(label(rng));
    }

    // Input gradient, every coordinate.
    const ClassifierObjective<double> obj(model, labels[0]);
    const Vector<double> g = grad_input(model, images[0], labels[0]).data();
    Vector<double> fd(g.size());
    Vector<double> probe = images[0].data();
    for (Index i = 0; i < probe.size(); ++i) {
      const double keep = probe[i];
      probe[i] = keep + 1e-5;
      const double up = obj.value(probe);
      probe[i] = keep - 1e-5;
      const double down = obj.value(probe);
      probe[i] = keep;
      fd[i] = (up - down) / 2e-5;
    }
    worst_input = std::max(worst_input, max_rel(g, fd));

    // Parameter gradients on the batch, 24 seeded coordinates per tensor.
    const auto pg = grad_params<double>(model, images, labels);
    auto batch_loss = [&]() {
      Graph<double> graph;
      const auto params = model.bind(graph, false);
      Tensor<double> batch(Shape{3, 16, 16, 1});
      for (int b = 0; b < 3; ++b) batch.data().segment(b * 256, 256) = images[b].data();
      const NodeId logits = model.forward(graph, graph.leaf(batch, false), params);
      return graph.value(graph.softmax_cross_entropy(logits, labels)).item();
    };
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
      auto& t = model.parameters()[k];
      std::uniform_int_distribution<Index> pick(0, t.size() - 1);
      Vector<double> analytic(24), numeric(24);
      for (int s = 0; s < 24; ++s) {
        const Index i = pick(rng);
        const double keep = t.data()[i];
        t.data()[i] = keep + 1e-5;
        const double up = batch_loss();
        t.data()[i] = keep - 1e-5;
        const double down = batch_loss();
        t.data()[i] = keep;
        numeric[s] = (up - down) / 2e-5;
        analytic[s] = pg.grads[k].data()[i];
      }
      worst_param = std::max(worst_param, max_rel(analytic, numeric));
    }
  }
  const double elapsed = seconds_since(start);
  const bool pass = worst_input <= 1e-5 && worst_param <= 1e-5 && elapsed < 30.0;
  report(1, "gradient-correctness", pass,
         fmt("pairs=%d max_rel_input=%.3e max_rel_param=%.3e (limit 1e-5) time=%.1fs (limit 30s)",
             pairs, worst_input, worst_param, elapsed));
}

void quadratic_exactness() {
  Rng rng(202);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst_hvp = 0.0, worst_hessian = 0.0;
  const int trials = 25;
  for (int trial = 0; trial < trials; ++trial) {
    const Index n = 4 + 2 * trial;
    Matrix<double> m(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) m(i, j) = gauss(rng);
    const Matrix<double> a = 0.5 * (m + m.transpose());
    Vector<double> x(n), v(n);
    for (Index i = 0; i < n; ++i) {
      x[i] = gauss(rng);
      v[i] = gauss(rng);
    }
    const QuadraticObjective<double> obj(a);
    const Vector<double> expect = a * v;
    const auto hv = fdm_hvp<double>(obj, x, v, FdConfig{});
    worst_hvp = std::max(worst_hvp, (hv.product - expect).norm() / expect.norm());
    const auto h = full_hessian<double>(obj, x);
    worst_hessian = std::max(worst_hessian, (h.hessian - a).norm() / a.norm());
  }
  report(2, "quadratic-exactness", worst_hvp <= 1e-8 && worst_hessian <= 1e-6,
         fmt("pairs=%d fdm_hvp_rel=%.3e (limit 1e-8) full_hessian_rel=%.3e (limit 1e-6)", trials,
             worst_hvp, worst_hessian));
}

template <typename Scalar>
bool interpolation_identities(const Classifier<Scalar>& model, const Dataset& eval, double zeta,
                              const FdConfig& fd, int images) {
  bool ok = true;
  for (int i = 0; i < images; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const ClassifierObjective<Scalar> obj(model, eval.labels[idx]);
    Rng rng(derive_seed(303, idx));
    const Vector<Scalar> xs =
        detail::sample_linf_ball<Scalar>(eval.images[idx].template cast<Scalar>().data(), zeta, rng);
    // Reference gradients built here, independently of pgn_gradient.
    const Vector<Scalar> g = obj.gradient(xs);
    const Scalar norm = g.template lpNorm<1>();
    const Vector<Scalar> predicted = xs - (static_cast<Scalar>(fd.fd_step) / norm) * g;
    const Vector<Scalar> gstar = obj.gradient(predicted);
    const Vector<Scalar> mean = ((g.array() + gstar.array()) * Scalar(0.5)).matrix();
    ok = ok && bit_equal(pgn_gradient(obj, xs, 0.0, fd).gradient, g);
    ok = ok && bit_equal(pgn_gradient(obj, xs, 1.0, fd).gradient, gstar);
    ok = ok && bit_equal(pgn_gradient(obj, xs, 0.5, fd).gradient, mean);
  }
  return ok;
}

void pgn_identities(const Desk& desk) {
  const auto& rep = desk.reps.front();
  const auto spec = desk.cfg.attack_spec(Method::Pgn);
  const double zeta = spec.pgn.zeta(spec.budget);
  const int images = 50;
  const bool f32 = interpolation_identities<float>(rep.model("mlp-a"), rep.eval, zeta,
                                                   spec.fd_config(), images);
  const bool f64 = interpolation_identities<double>(rep.model("mlp-a").cast<double>(), rep.eval,
                                                    zeta, spec.fd_config(), images);
  report(3, "interpolation-identities", f32 && f64,
         fmt("images=%d float32=%s float64=%s (delta 0, 1, 0.5 compared bitwise)", images,
             f32 ? "exact" : "MISMATCH", f64 ? "exact" : "MISMATCH"));
}

void reduction_equivalence(const Desk& desk) {
  const auto& rep = desk.reps.front();
  auto pgn_spec = desk.cfg.attack_spec(Method::Pgn);
  pgn_spec.pgn.zeta_factor = 0.0;
  pgn_spec.pgn.delta = 0.0;
  pgn_spec.pgn.samples = 1;
  const auto mi_spec = desk.cfg.attack_spec(Method::MiFgsm);
  const Classifier<float>* model[] = {&rep.model("mlp-a")};
  const std::size_t images = std::min<std::size_t>(40, rep.eval.size());
  std::size_t identical = 0;
  for (std::size_t i = 0; i < images; ++i) {
    Rng r1 = stream_rng(404, i), r2 = stream_rng(404, i);
    const auto a = run_attack<float>(pgn_spec, model, rep.eval.images[i], rep.eval.labels[i], r1);
    const auto b = run_attack<float>(mi_spec, model, rep.eval.images[i], rep.eval.labels[i], r2);
    identical += bench::encode_adv(a) == bench::encode_adv(b) &&
                 same_records(a.iterations, b.iterations);
  }
  report(4, "reduction-equivalence", images >= 20 && identical == images,
         fmt("byte-identical trajectories %zu/%zu (need >= 20, all)", identical, images));
}

void budget_invariants() {
  const auto start = Clock::now();
  const std::vector<Method> methods = {Method::IFgsm,   Method::MiFgsm,  Method::NiFgsm,
                                       Method::VmiFgsm, Method::EmiFgsm, Method::Pgn,
                                       Method::RegIFgsm, Method::RegMiFgsm};
  const Classifier<float> models[] = {Classifier<float>::initialize(mlp_b({8, 8, 1}, 3), 1),
                                      Classifier<float>::initialize(cnn_a({8, 8, 1}, 3), 2)};
  Rng rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int configs = 1000;
  std::size_t runs = 0, violations = 0;
  double worst_excess = -1.0;
  for (int c = 0; c < configs; ++c) {
    AttackSpec spec;
    spec.budget.eps = u(rng) < 0.1 ? 0.0 : uniform(0.0, 0.5);
    spec.budget.steps = integer(1, 5);
    spec.budget.decay = uniform(0.0, 2.0);
    spec.budget.clamp_min = uniform(-0.5, 0.5);
    spec.budget.clamp_max = spec.budget.clamp_min + uniform(0.01, 1.5);
    spec.pgn = {u(rng), uniform(0.0, 4.0), integer(1, 3)};
    spec.baseline = {integer(1, 3), uniform(0.0, 3.0), integer(1, 4), uniform(0.0, 10.0)};
    spec.reg = {uniform(0.0, 0.1), uniform(0.0, 4.0)};
    if (u(rng) < 0.3) spec.fd_step = std::pow(10.0, uniform(-6.0, -1.0));
    spec.transform.kind = static_cast<TransformKind>(integer(0, 2));
    spec.transform.dim_probability = u(rng);
    spec.transform.dim_resize_ratio = uniform(0.5, 1.0);
    spec.transform.sim_copies = integer(1, 3);
    const Classifier<float>* model[] = {&models[c % 2]};
    Tensor<float> x(Shape{8, 8, 1});
    for (Index i = 0; i < x.size(); ++i) {
      x.data()[i] = static_cast<float>(uniform(spec.budget.clamp_min, spec.budget.clamp_max));
    }
    // Keep the clean image inside the clamp range after rounding to float.
    for (Index i = 0; i < x.size(); ++i) {
      while (x.data()[i] < spec.budget.clamp_min) x.data()[i] = std::nextafter(x.data()[i], 2.0f);
      while (x.data()[i] > spec.budget.clamp_max) x.data()[i] = std::nextafter(x.data()[i], -2.0f);
    }
    const auto y = static_cast<std::uint32_t>(integer(0, 2));
    for (auto m : methods) {
      spec.method = m;
      Rng attack_rng = stream_rng(506, static_cast<std::uint64_t>(c));
      const auto r = run_attack<float>(spec, model, x, y, attack_rng);
      const Vector<double> adv = r.adversarial.data().cast<double>();
      const Vector<double> clean = x.data().cast<double>();
      const double linf = (adv - clean).cwiseAbs().maxCoeff();
      worst_excess = std::max(worst_excess, linf - spec.budget.eps);
      const bool ok = adv.allFinite() && linf <= spec.budget.eps + 1e-9 &&
                      adv.minCoeff() >= spec.budget.clamp_min &&
                      adv.maxCoeff() <= spec.budget.clamp_max;
      violations += !ok;
      ++runs;
    }
  }
  report(5, "budget-invariants", violations == 0,
         fmt("configs=%d methods=%zu runs=%zu violations=%zu max(linf-eps)=%.3e time=%.1fs",
             configs, methods.size(), runs, violations, worst_excess, seconds_since(start)));
}

void fdm_fidelity(const Desk& desk) {
  const auto& rep = desk.reps.front();
  const auto spec = desk.cfg.attack_spec(Method::Pgn);
  const Classifier<double> model = rep.model("mlp-a").cast<double>();
  const FdConfig fd = spec.fd_config();
  const double delta = spec.pgn.delta, zeta = spec.pgn.zeta(spec.budget);
  double sum_update = 0.0, sum_hvp = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < rep.eval.size(); ++i) {
    const ClassifierObjective<double> obj(model, rep.eval.labels[i]);
    Rng rng = stream_rng(606, i);
    const Vector<double> xs =
        detail::sample_linf_ball<double>(rep.eval.images[i].cast<double>().data(), zeta, rng);
    const auto pg = pgn_gradient(obj, xs, delta, fd);
    if (pg.degenerate) continue;
    const double norm = pg.sampled.lpNorm<1>();
    const Vector<double> dir = pg.sampled / norm;
    const Vector<double> hv = exact_hvp_oracle(obj, xs, dir).product;
    // The predicted-point gradient to first order: g' - a H g'/|g'|_1.
    const Vector<double> oracle_update = pg.sampled - delta * fd.fd_step * hv;
    sum_update += cosine(pg.gradient, oracle_update);
    // The curvature term alone, for reference.
    sum_hvp += cosine((pg.sampled - pg.predicted) / fd.fd_step, hv);
    ++count;
  }
  const double mean = count ? sum_update / static_cast<double>(count) : 0.0;
  report(6, "fdm-fidelity", count >= 100 && mean >= 0.85,
         fmt("images=%zu mean_cosine_update=%.4f (floor 0.85) mean_cosine_hvp_term=%.4f", count,
             mean, count ? sum_hvp / static_cast<double>(count) : 0.0));
}

void transfer_direction(Desk& desk) {
  const auto start = Clock::now();
  desk.run_dir = desk.work / "desk_run";
  const auto bundle = bench::run_experiment(desk.cfg, desk.run_dir.string());
  const double elapsed = seconds_since(start);
  const auto& m = bundle.transfer;
  const double mi = m.black_box_mean("mifgsm");
  const double pgn = m.black_box_mean("pgn");
  const double reg = m.black_box_mean("reg-mifgsm");
  std::string per_model;
  for (std::size_t i = 0; i < m.methods.size(); ++i) {
    per_model += " " + m.methods[i] + "[";
    for (std::size_t j = 0; j < m.models.size(); ++j) {
      const auto r = static_cast<Index>(i), c = static_cast<Index>(j);
      per_model += fmt("%s%s=%.2f+-%.2f", j ? " " : "", m.models[j].c_str(), m.rates(r, c),
                       m.sd(r, c));
    }
    per_model += "]";
  }
  const bool pass = pgn >= mi + 5.0 && reg >= mi + 2.0 && elapsed < 600.0;
  report(7, "transfer-direction", pass,
         fmt("replicates=%d images/replicate=%zu black-box mean: mifgsm=%.2f pgn=%.2f (%+.2f, need "
             "+5) reg-mifgsm=%.2f (%+.2f, need +2) time=%.1fs;",
             desk.cfg.replicates, m.samples.front(), mi, pgn, pgn - mi, reg, reg - mi, elapsed) +
             per_model);
}

void flatness_direction(const Desk& desk) {
  const auto& rep = desk.reps.front();
  const auto mi = bench::load_adv_dir((desk.run_dir / "advs/r0/mifgsm").string());
  const auto pg = bench::load_adv_dir((desk.run_dir / "advs/r0/pgn").string());
  if (mi.size() != pg.size() || mi.empty()) throw ConsistencyError("adversarial sets differ");
  const Classifier<double> model = rep.model("mlp-a").cast<double>();
  const double zeta = 3.0 * desk.cfg.eps;
  std::size_t flatter = 0;
  double sum_mi = 0.0, sum_pgn = 0.0;
  for (std::size_t i = 0; i < mi.size(); ++i) {
    const ClassifierObjective<double> obj(model, mi[i].label);
    // Same sampling offsets at both points.
    Rng a = stream_rng(808, i), b = stream_rng(808, i);
    const double at_mi =
        max_grad_norm_in_ball<double>(obj, mi[i].adversarial.cast<double>().data(), zeta, 32, a)
            .value;
    const double at_pgn =
        max_grad_norm_in_ball<double>(obj, pg[i].adversarial.cast<double>().data(), zeta, 32, b)
            .value;
    flatter += at_pgn < at_mi;
    sum_mi += at_mi;
    sum_pgn += at_pgn;
  }
  const double share = static_cast<double>(flatter) / static_cast<double>(mi.size());
  const auto n = static_cast<double>(mi.size());
  report(8, "flatness-direction", share >= 0.70,
         fmt("images=%zu pgn_lower=%zu (%.1f%%, need >= 70%%) mean_max_grad_norm mifgsm=%.4f "
             "pgn=%.4f",
             mi.size(), flatter, 100.0 * share, sum_mi / n, sum_pgn / n));
}

void complexity_ablation(const Desk& desk) {
  const auto& rep = desk.reps.front();
  std::vector<bench::NamedModel> targets;
  for (const auto& m : rep.zoo) {
    if (m.name != "mlp-a") targets.push_back(m);
  }
  const auto budget = desk.cfg.attack_spec(Method::IFgsm).budget;
  const auto batch = rep.eval.head(100);
  const auto report_ = bench::timing_compare(rep.model("mlp-a"), batch, budget,
                                             {desk.cfg.reg_lambda, desk.cfg.reg_zeta_factor},
                                             targets, 909);
  const auto& hess = report_.arm("ifgsm+hessian");
  const auto& fdm = report_.arm("ifgsm+fdm");
  const std::size_t n = report_.input_dim;
  const auto t = static_cast<std::size_t>(budget.steps);
  const double ratio = hess.wall_seconds / fdm.wall_seconds;
  const bool counters = fdm.gradient_evals == 2 * t * batch.size() &&
                        hess.gradient_evals == (2 * n + 1) * t * batch.size();
  const double gap = std::abs(fdm.transfer_mean() - hess.transfer_mean());
  report(9, "complexity-ablation", n == 256 && ratio >= 5.0 && counters && gap <= 3.0,
         fmt("n=%zu images=%zu wall hessian=%.2fs fdm=%.3fs ratio=%.1f (need >= 5) evals/image "
             "fdm=%zu (2T=%zu) hessian=%zu ((2n+1)T=%zu) transfer hessian=%.2f fdm=%.2f gap=%.2f "
             "(limit 3)",
             n, batch.size(), hess.wall_seconds, fdm.wall_seconds, ratio, fdm.evals_per_image(),
             2 * t, hess.evals_per_image(), (2 * n + 1) * t, hess.transfer_mean(),
             fdm.transfer_mean(), gap));
}

std::string curve_text(const bench::SweepReport& r) {
  std::string out;
  const auto curve = r.black_box_curve();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out += fmt("%s%s=%.2f", i ? " " : "", bench::SweepReport::format_value(r.values[i]).c_str(),
               curve[i]);
  }
  return out;
}

void sweep_directions(const Desk& desk) {
  const auto start = Clock::now();
  const double deltas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  const auto d = bench::sweep("delta", deltas, desk.cfg, desk.reps);
  const double samples[] = {1.0, 8.0};
  const auto s = bench::sweep("samples", samples, desk.cfg, desk.reps);
  const double steps[] = {desk.cfg.eps / desk.cfg.steps, 1e-4, 1e-5};
  const auto f = bench::sweep("fd_step", steps, desk.cfg, desk.reps);
  const auto dc = d.black_box_curve(), sc = s.black_box_curve(), fc = f.black_box_curve();
  const bool delta_ok = dc[2] >= dc[0];
  const bool samples_ok = sc[1] > sc[0];
  const bool fd_ok = fc[1] <= fc[0] && fc[2] <= fc[0];
  report(10, "sweep-directions", delta_ok && samples_ok && fd_ok,
         fmt("delta{%s} %s; samples{%s} %s; fd_step{%s} %s; time=%.1fs", curve_text(d).c_str(),
             delta_ok ? "ok" : "0.5 below 0", curve_text(s).c_str(),
             samples_ok ? "ok" : "N=8 not above N=1", curve_text(f).c_str(),
             fd_ok ? "ok" : "small step improves", seconds_since(start)));
}

void formats(const Desk& desk) {
  std::vector<std::string> problems;
  // IDX: quantized synthetic data through bytes, memory and files.
  const auto data = gen_synthetic(4, 16, 25, 0.15, 1111);
  const auto images = encode_idx_images(data), labels = encode_idx_labels(data);
  const auto parsed = parse_idx(images, labels);
  if (encode_idx_images(parsed) != images || encode_idx_labels(parsed) != labels) {
    problems.push_back("idx bytes");
  }
  const auto img_path = (desk.work / "round.idx3").string();
  const auto lbl_path = (desk.work / "round.idx1").string();
  write_idx(parsed, img_path, lbl_path);
  const auto reloaded = load_idx(img_path, lbl_path);
  if (io::read_file(img_path) != images || encode_idx_images(reloaded) != images) {
    problems.push_back("idx files");
  }
  // PGNW: every trained model of every replicate.
  std::size_t weights = 0;
  for (const auto& rep : desk.reps) {
    for (const auto& m : rep.zoo) {
      const auto bytes = encode_weights(m.model);
      const auto path = (desk.work / "w.pgnw").string();
      save(m.model, path);
      if (encode_weights(decode_weights(bytes)) != bytes || io::read_file(path) != bytes ||
          encode_weights(load(path)) != bytes) {
        problems.push_back("pgnw " + m.name);
      }
      ++weights;
    }
  }
  // PGNA: every file the desk run wrote.
  std::size_t advs = 0;
  for (const auto& e : fs::recursive_directory_iterator(desk.run_dir / "advs")) {
    if (!e.is_regular_file()) continue;
    const auto bytes = io::read_file(e.path().string());
    if (bench::encode_adv(bench::decode_adv(bytes)) != bytes) problems.push_back("pgna");
    ++advs;
  }
  // Surface grid: G^2 rows, centre cell equal to the centre loss.
  const auto& rep = desk.reps.front();
  const Classifier<double> m64 = rep.model("mlp-a").cast<double>();
  const ClassifierObjective<double> obj(m64, rep.eval.labels[0]);
  const auto grid = loss_surface(obj, rep.eval.images[0].cast<double>().data(), 2023, 0.1, 41);
  const auto csv = surface_csv(grid);
  const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
  const bool centre = std::memcmp(&grid.values(20, 20), &grid.center_loss, sizeof(double)) == 0 &&
                      csv.find("\n0,0," + format_sig9(grid.center_loss) + "\n") != std::string::npos;
  if (rows != 41u * 41u || !centre) problems.push_back("surface");
  // Rerun the desk protocol from its manifest through the CLI.
  const auto rerun = desk.work / "desk_rerun";
  const int code = run_cli("run --config " + (desk.run_dir / "manifest.json").string() +
                           " --exact-out --out " + rerun.string());
  const auto a = snapshot(desk.run_dir);
  const auto b = code == 0 ? snapshot(rerun) : std::map<std::string, std::string>{};
  if (code != 0 || a != b) problems.push_back("manifest rerun");
  std::string detail = fmt(
      "idx ok=%s pgnw=%zu pgna=%zu surface rows=%zu centre=%s rerun files=%zu identical=%s",
      images.size() ? "yes" : "no", weights, advs, rows, centre ? "exact" : "MISMATCH", a.size(),
      a == b ? "yes" : "no");
  for (const auto& p : problems) detail += " problem:" + p;
  report(11, "formats", problems.empty(), detail);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  Desk desk;
  desk.work = fs::temp_directory_path() / "pgn_acceptance";
  fs::remove_all(desk.work);
  fs::create_directories(desk.work);

  std::printf("acceptance: desk protocol, %d replicates, surrogate %s, targets %s\n",
              desk.cfg.replicates, desk.cfg.surrogate.c_str(), desk.cfg.targets.c_str());
  std::fflush(stdout);

  check(1, "gradient-correctness", gradient_correctness);
  check(2, "quadratic-exactness", quadratic_exactness);
  check(5, "budget-invariants", budget_invariants);
  try {
    std::tie(desk.train, desk.test) = bench::load_data(desk.cfg);
    for (int r = 0; r < desk.cfg.replicates; ++r) {
      desk.reps.push_back(bench::build_replicate(desk.cfg, r, desk.train, desk.test));
    }
  } catch (const std::exception& e) {
    std::printf("desk setup failed: %s\n", e.what());
    return 1;
  }
  for (const auto& rep : desk.reps) {
    std::printf("replicate %d: eval=%zu", rep.index, rep.eval.size());
    for (const auto& m : rep.zoo) {
      std::printf(" %s test_acc=%.4f", m.name.c_str(), m.model.metadata().test_accuracy);
    }
    std::printf("\n");
  }
  std::fflush(stdout);
  check(3, "interpolation-identities", [&] { pgn_identities(desk); });
  check(4, "reduction-equivalence", [&] { reduction_equivalence(desk); });
  check(6, "fdm-fidelity", [&] { fdm_fidelity(desk); });
  check(7, "transfer-direction", [&] { transfer_direction(desk); });
  check(8, "flatness-direction", [&] { flatness_direction(desk); });
  check(9, "complexity-ablation", [&] { complexity_ablation(desk); });
  check(10, "sweep-directions", [&] { sweep_directions(desk); });
  check(11, "formats", [&] { formats(desk); });

  std::printf("acceptance: %d of 11 criteria failed, %.1fs\n", failures, seconds_since(start));
  fs::remove_all(desk.work);
  return failures == 0 ? 0 : 1;
}
