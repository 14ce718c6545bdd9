// Command line front end: memorize, verify, train, approximate, trace.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "reluforge/approximate.hpp"
#include "reluforge/io.hpp"
#include "reluforge/norms.hpp"
#include "reluforge/train.hpp"

namespace rf = reluforge;
using nlohmann::json;

namespace {

std::uint64_t env_seed() {
  const char* e = std::getenv("RELU_FORGE_SEED");
  if (!e) return 0;
  try {
    return std::stoull(e);
  } catch (const std::exception&) {
    throw rf::ParseError("RELU_FORGE_SEED is not a number");
  }
}

std::size_t scalar_class_count(const rf::LabeledDataset& ds) {
  if (ds.kind == rf::LabelKind::Vector) {
    std::set<rf::Vec> distinct(ds.vector_labels.begin(),
                               ds.vector_labels.end());
    return distinct.size();
  }
  std::set<double> distinct(ds.labels.begin(), ds.labels.end());
  return distinct.size();
}

std::vector<rf::NetworkStage> stages_of(const rf::ConstructionTrace& trace) {
  std::vector<rf::NetworkStage> out;
  for (const auto& s : trace.stages)
    out.push_back({s.name, s.first_layer, s.last_layer});
  return out;
}

int run_memorize(const std::string& input, bool signed_labels,
                 std::uint64_t seed, const std::string& out_path) {
  const rf::LabeledDataset ds = rf::load_dataset(input, signed_labels);
  rf::Network net;
  rf::NetworkMeta meta;
  meta.seed = seed;
  if (ds.kind == rf::LabelKind::Vector) {
    net = rf::build_vector_memorizer(ds, seed);
    meta.construction = "memorize_vector";
  } else if (ds.kind == rf::LabelKind::Class) {
    auto [n, trace] = rf::build_memorizer(ds, seed);
    net = std::move(n);
    meta.construction = "memorize";
    meta.stages = stages_of(trace);
  } else {
    rf::ConstructionTrace trace;
    net = rf::build_signed_memorizer(ds, seed, &trace);
    meta.construction = "memorize_signed";
    meta.stages = stages_of(trace);
  }
  const rf::MemorizationReport rep = rf::verify_memorization(net, ds);
  const rf::NormReport norms = rf::triple_norm(net);
  json j;
  j["n"] = ds.size();
  j["m"] = scalar_class_count(ds);
  j["depth"] = net.depth();
  j["width"] = net.width();
  j["max_abs_error"] = rep.max_abs_error;
  j["l2_norm"] = norms.l2;
  j["linf_norm"] = norms.linf;
  std::cout << j.dump() << "\n";
  if (!out_path.empty()) rf::save_network(out_path, net, meta);
  return rep.failures.empty() ? 0 : 1;
}

int run_verify(const std::string& net_path, const std::string& data_path,
               double tol) {
  const rf::Network net = rf::load_network(net_path).first;
  const rf::LabeledDataset ds = rf::load_dataset(data_path, true);
  const rf::MemorizationReport rep = rf::verify_memorization(net, ds, tol);
  json j;
  j["max_abs_error"] = rep.max_abs_error;
  j["failures"] = rep.failures;
  j["tol"] = tol;
  std::cout << j.dump() << "\n";
  return rep.failures.empty() ? 0 : 1;
}

int run_train(const std::string& input, bool signed_labels, double lambda,
              double eps, const std::string& loss_name, int restarts,
              std::uint64_t seed, int iters, double lr,
              const std::string& log_path) {
  const rf::LabeledDataset ds = rf::load_dataset(input, signed_labels);
  rf::Network init;
  if (ds.kind == rf::LabelKind::Vector)
    init = rf::build_vector_memorizer(ds, seed);
  else if (ds.kind == rf::LabelKind::Class)
    init = rf::build_memorizer(ds, seed).first;
  else
    init = rf::build_signed_memorizer(ds, seed);

  rf::TrainConfig cfg;
  cfg.lambda = lambda;
  cfg.loss = loss_name == "logistic" ? rf::LossKind::BinaryLogistic
                                     : rf::LossKind::SquaredL2;
  cfg.learning_rate = lr;
  cfg.max_iters = iters;
  cfg.restarts = restarts;
  cfg.seed = seed;

  const double cert = rf::certificate(init, ds, lambda);
  const rf::TrainResult res = rf::train_gd(init, ds, cfg);
  const double j_trained = res.history.back();
  const double norm_term = lambda * res.norm_sq_history.back();

  if (!log_path.empty()) {
    std::ofstream log(log_path);
    if (!log) throw rf::ParseError("cannot write " + log_path);
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      json line;
      line["iter"] = i;
      line["j"] = res.history[i];
      line["norm2_term"] = lambda * res.norm_sq_history[i];
      line["loss_term"] = res.history[i] - lambda * res.norm_sq_history[i];
      log << line.dump() << "\n";
    }
  }

  json j;
  j["certificate"] = cert;
  j["j_trained"] = j_trained;
  j["loss_term"] = j_trained - norm_term;
  j["norm2_term"] = norm_term;
  j["iterations"] = res.history.size() - 1;
  if (eps > 0.0) j["smoothed_bound"] = rf::smoothed_objective_bound(init, ds, lambda, eps);
  std::cout << j.dump() << "\n";
  return 0;
}

struct Target {
  rf::Sampler f;
  std::function<bool(const rf::Vec&)> inside;
  rf::Box bbox;
  double w1p = 0.0;  // zero when unknown
};

Target make_target(const std::string& name, const std::string& file) {
  Target t;
  if (name == "x2") {
    t.f = [](const rf::Vec& x) { return x[0] * x[0]; };
    t.inside = [](const rf::Vec&) { return true; };
    t.bbox = {{0.0}, {1.0}};
    t.w1p = std::sqrt(1.0 / 5.0 + 4.0 / 3.0);
    return t;
  }
  if (name == "paraboloid") {
    t.f = [](const rf::Vec& x) {
      const double r2 = x[0] * x[0] + x[1] * x[1];
      return r2 <= 1.0 ? r2 : 0.0;
    };
    t.inside = [](const rf::Vec& x) {
      return x[0] * x[0] + x[1] * x[1] <= 1.0;
    };
    t.bbox = {{-1.0, -1.0}, {1.0, 1.0}};
    t.w1p = std::sqrt(7.0 * std::acos(-1.0) / 3.0);
    return t;
  }
  if (name == "file") {
    if (file.empty()) throw rf::ParseError("--target file needs --target-file");
    auto ds = std::make_shared<rf::LabeledDataset>(rf::load_dataset(file, true));
    if (ds->kind == rf::LabelKind::Vector)
      throw rf::ParseError("file target needs scalar labels");
    t.f = [ds](const rf::Vec& x) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < ds->size(); ++i) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double diff = x[k] - ds->points[i][k];
          d2 += diff * diff;
        }
        if (d2 < best_d) {
          best_d = d2;
          best = i;
        }
      }
      return ds->labels[best];
    };
    t.inside = [](const rf::Vec&) { return true; };
    t.bbox.lo = ds->points[0];
    t.bbox.hi = ds->points[0];
    for (const auto& p : ds->points)
      for (std::size_t k = 0; k < p.size(); ++k) {
        t.bbox.lo[k] = std::min(t.bbox.lo[k], p[k]);
        t.bbox.hi[k] = std::max(t.bbox.hi[k], p[k]);
      }
    return t;
  }
  throw rf::ParseError("unknown target " + name);
}

int run_approximate(const std::string& target_name,
                    const std::string& target_file, double h, double p,
                    std::size_t samples, std::uint64_t seed,
                    const std::string& out_path,
                    const std::string& report_path) {
  const Target target = make_target(target_name, target_file);
  rf::ApproximatorBuild build;
  bool negative = false;
  {
    const rf::HyperrectGrid grid = rf::build_grid(target.bbox, h, p);
    const rf::SimpleFunction probe = rf::cell_averages(target.f, grid);
    for (double v : probe.cell_values) negative |= v < 0.0;
  }
  if (negative)
    build = rf::build_signed_approximator(target.f, target.bbox, h, p, seed);
  else
    build = rf::build_approximator(target.f, target.bbox, h, p, seed);

  const rf::LpEstimate lp =
      rf::lp_error(build.net, target.f, target.bbox, target.inside, p,
                   samples, rf::mix_seed(seed, 999));
  json j;
  j["h"] = h;
  j["delta"] = build.fh.grid.delta;
  j["n_h"] = build.n_h;
  j["n_e"] = build.n_e;
  j["m_h"] = build.m_h;
  j["depth"] = build.net.depth();
  j["width"] = build.net.width();
  j["lp_error"] = lp.value;
  j["stderr"] = lp.stderr_;
  if (target.w1p > 0.0 && lp.value > 0.0)
    j["depth_bound"] = rf::depth_bound(target.w1p, lp.value,
                                       int(target.bbox.dim()), 1.0);
  std::cout << j.dump() << "\n";
  if (!report_path.empty()) {
    std::ofstream rep(report_path);
    if (!rep) throw rf::ParseError("cannot write " + report_path);
    rep << j.dump(2) << "\n";
  }
  if (!out_path.empty()) {
    rf::NetworkMeta meta;
    meta.construction = negative ? "approximate_signed" : "approximate";
    meta.seed = seed;
    meta.stages = stages_of(build.trace);
    rf::save_network(out_path, build.net, meta);
  }
  return 0;
}

int run_trace(const std::string& net_path, const std::string& data_path,
              const std::string& out_dir) {
  const auto [net, meta] = rf::load_network(net_path);
  const rf::LabeledDataset ds = rf::load_dataset(data_path, true);
  std::filesystem::create_directories(out_dir);
  rf::Vec labels = ds.kind == rf::LabelKind::Vector
                       ? rf::Vec(ds.size(), 0.0)
                       : ds.labels;

  if (meta.stages.empty()) {
    rf::write_stage_csv(
        (std::filesystem::path(out_dir) / "0_input.csv").string(), ds.points,
        labels);
    return 0;
  }
  std::vector<std::vector<rf::Vec>> states(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    states[i] = rf::forward_trace(net, ds.points[i]);
  for (std::size_t s = 0; s < meta.stages.size(); ++s) {
    const rf::NetworkStage& st = meta.stages[s];
    if (st.last == 0 || st.last > net.depth())
      throw rf::ParseError("stage range outside network depth");
    std::vector<rf::Vec> positions(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      positions[i] = states[i][st.last - 1];
    const std::string file = std::to_string(s) + "_" + st.name + ".csv";
    rf::write_stage_csv((std::filesystem::path(out_dir) / file).string(),
                        positions, labels);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constructive narrow relu networks"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  try {
    seed = env_seed();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  auto* mem = app.add_subcommand("memorize", "build an exact memorizer");
  std::string mem_input, mem_out;
  bool mem_signed = false;
  std::uint64_t mem_seed = seed;
  mem->add_option("--input", mem_input, "dataset csv or json")->required();
  mem->add_flag("--signed", mem_signed, "treat labels as real values");
  mem->add_option("--seed", mem_seed, "construction seed");
  mem->add_option("--out", mem_out, "write the network json here");

  auto* ver = app.add_subcommand("verify", "check a network on a dataset");
  std::string ver_net, ver_data;
  double ver_tol = 1e-6;
  ver->add_option("--net", ver_net, "network json")->required();
  ver->add_option("--data", ver_data, "dataset csv or json")->required();
  ver->add_option("--tol", ver_tol, "max allowed error");

  auto* tr = app.add_subcommand(
      "train", "gradient descent from the constructed warm start");
  std::string tr_input, tr_loss = "squared", tr_log;
  bool tr_signed = false;
  double tr_lambda = 1e-3, tr_eps = 0.0, tr_lr = 0.05;
  int tr_restarts = 0, tr_iters = 500;
  std::uint64_t tr_seed = seed;
  tr->add_option("--input", tr_input, "dataset csv or json")->required();
  tr->add_flag("--signed", tr_signed, "treat labels as real values");
  tr->add_option("--lambda", tr_lambda, "ridge weight")->required();
  tr->add_option("--eps", tr_eps, "smoothed-activation scale for the bound");
  tr->add_option("--loss", tr_loss, "squared or logistic")
      ->check(CLI::IsMember({"squared", "logistic"}));
  tr->add_option("--restarts", tr_restarts, "extra perturbed runs");
  tr->add_option("--seed", tr_seed, "seed for construction and restarts");
  tr->add_option("--iters", tr_iters, "max gradient steps");
  tr->add_option("--lr", tr_lr, "initial step size");
  tr->add_option("--log", tr_log, "write per-iteration json lines here");

  auto* ap = app.add_subcommand("approximate",
                                "piecewise-constant lp approximator");
  ap->set_help_flag("--help", "print help");  // frees -h for the cell size
  std::string ap_target, ap_target_file, ap_out, ap_report;
  double ap_h = 0.0, ap_p = 2.0;
  std::size_t ap_samples = 20000;
  std::uint64_t ap_seed = seed;
  ap->add_option("--target", ap_target, "x2, paraboloid, or file")
      ->required()
      ->check(CLI::IsMember({"x2", "paraboloid", "file"}));
  ap->add_option("--target-file", ap_target_file,
                 "csv for the file target (nearest neighbor)");
  ap->add_option("--h", ap_h, "cell side length in (0,1)")->required();
  ap->add_option("--p", ap_p, "lp exponent");
  ap->add_option("--samples", ap_samples, "monte carlo sample count");
  ap->add_option("--seed", ap_seed, "construction seed");
  ap->add_option("--out", ap_out, "write the network json here");
  ap->add_option("--report", ap_report, "write the report json here");

  auto* trc = app.add_subcommand("trace", "dump per-stage positions as csv");
  std::string trc_net, trc_data, trc_dir;
  trc->add_option("--net", trc_net, "network json")->required();
  trc->add_option("--data", trc_data, "dataset csv or json")->required();
  trc->add_option("--out-dir", trc_dir, "directory for stage csv files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mem) return run_memorize(mem_input, mem_signed, mem_seed, mem_out);
    if (*ver) return run_verify(ver_net, ver_data, ver_tol);
    if (*tr)
      return run_train(tr_input, tr_signed, tr_lambda, tr_eps, tr_loss,
                       tr_restarts, tr_seed, tr_iters, tr_lr, tr_log);
    if (*ap)
      return run_approximate(ap_target, ap_target_file, ap_h, ap_p,
                             ap_samples, ap_seed, ap_out, ap_report);
    if (*trc) return run_trace(trc_net, trc_data, trc_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
