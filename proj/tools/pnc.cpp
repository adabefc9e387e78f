#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pnc/data.hpp"
#include "pnc/inference.hpp"
#include "pnc/oracle.hpp"
#include "pnc/persistence.hpp"
#include "pnc/training.hpp"

namespace {

using namespace pnc;

std::vector<int> parse_marginalize_spec(const CircuitStructure& s,
                                        const std::string& spec) {
  std::vector<int> vars;
  if (spec == "none" || spec.empty()) return vars;
  if (spec == "all") {
    for (int v = 0; v < s.num_variables; ++v) vars.push_back(v);
    return vars;
  }
  auto parse_list = [&](const std::string& body, bool ranks) {
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      require(!item.empty(), ErrorKind::query, "empty item in marginalize spec");
      long lo, hi;
      auto dash = item.find('-');
      try {
        if (dash == std::string::npos) {
          lo = hi = std::stol(item);
        } else {
          lo = std::stol(item.substr(0, dash));
          hi = std::stol(item.substr(dash + 1));
        }
      } catch (const std::exception&) {
        fail(ErrorKind::query, "bad marginalize item '" + item + "'");
      }
      for (long x = lo; x <= hi; ++x) {
        if (ranks) {
          require(x >= 1 && x <= s.num_variables, ErrorKind::query,
                  "rank " + std::to_string(x) + " out of range");
          vars.push_back(s.order.by_rank[x - 1]);
        } else {
          require(x >= 0 && x < s.num_variables, ErrorKind::query,
                  "variable id " + std::to_string(x) + " out of range");
          vars.push_back(static_cast<int>(x));
        }
      }
    }
  };
  if (spec.rfind("ranks:", 0) == 0)
    parse_list(spec.substr(6), true);
  else if (spec.rfind("vars:", 0) == 0)
    parse_list(spec.substr(5), false);
  else
    fail(ErrorKind::query,
         "marginalize spec must be 'all', 'none', 'ranks:...', or 'vars:...'");
  return vars;
}

int cmd_train(const std::string& config_path, const std::string& images,
              const std::string& labels, const std::string& out,
              long long seed_override, int threads_override) {
  Config config = parse_config_file(config_path);
  if (!images.empty()) config.images_path = images;
  if (!labels.empty()) config.labels_path = labels;
  if (seed_override >= 0)
    config.train.seed = static_cast<uint64_t>(seed_override);
  if (threads_override > 0) config.train.threads = threads_override;
  require(!config.images_path.empty(), ErrorKind::config,
          "no image file given (config key 'images' or --images)");

  Dataset data = load_idx(config.images_path, config.labels_path);
  Model model(config.model);
  model.init_params(config.train.seed);
  TrainResult result = train(model, data, config.train);
  for (const auto& r : result.trace)
    std::cout << format_trace_line(r) << "\n";
  save_checkpoint(model, config, nullptr, out);
  std::cerr << "best epoch " << result.best_epoch << ", checkpoint written to "
            << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& images) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  Dataset data = load_idx(images);
  require(data.dims() == ck.model.spec().variable_count(), ErrorKind::data,
          "image dimensions do not match the checkpoint");
  double total = 0.0;
  for (int i = 0; i < data.num_samples(); ++i) {
    auto img = data.image(i);
    std::vector<int> vals(img.begin(), img.end());
    double logp = log_density(ck.model, vals);
    std::printf("sample=%d logp=%.6f\n", i, logp);
    total += -logp;
  }
  if (data.num_samples() == 0) {
    std::printf("bpd=na\n");
  } else {
    double bpd = bits_per_dimension(total / data.num_samples(), data.dims());
    std::printf("bpd=%.6f\n", bpd);
  }
  return 0;
}

int cmd_marginal(const std::string& checkpoint, const std::string& evidence_file,
                 const std::string& spec) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const int V = ck.model.spec().variable_count();
  std::vector<int> marginalized =
      parse_marginalize_spec(ck.model.structure(), spec);
  auto violation = validate_query(ck.model.structure(), marginalized);
  if (violation)
    fail(ErrorKind::query,
         "marginalize spec is not an order-suffix: variable " +
             std::to_string(violation->marginalized_var) +
             " precedes evidence variable " +
             std::to_string(violation->evidence_var));

  std::ifstream in(evidence_file);
  require(in.good(), ErrorKind::data, "cannot open " + evidence_file);
  // read all records first; a bad record must produce no output at all
  std::vector<std::vector<int>> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::vector<int> vals;
    int x;
    while (ss >> x) vals.push_back(x);
    require(static_cast<int>(vals.size()) == V, ErrorKind::data,
            evidence_file + " line " + std::to_string(lineno) + ": expected " +
                std::to_string(V) + " values");
    records.push_back(std::move(vals));
  }
  for (size_t i = 0; i < records.size(); ++i) {
    double logm = log_marginal(ck.model, records[i], marginalized);
    std::printf("record=%zu logm=%.6f\n", i, logm);
  }
  return 0;
}

int cmd_classify(const std::string& checkpoint, const std::string& images,
                 const std::string& labels) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  require(ck.model.spec().num_classes > 1, ErrorKind::query,
          "checkpoint holds a generative model; classify needs num_classes > 1");
  Dataset data = load_idx(images, labels);
  require(data.dims() == ck.model.spec().variable_count(), ErrorKind::data,
          "image dimensions do not match the checkpoint");
  int correct = 0;
  for (int i = 0; i < data.num_samples(); ++i) {
    auto img = data.image(i);
    std::vector<int> vals(img.begin(), img.end());
    auto post = class_posterior(ck.model, vals);
    int argmax = 0;
    for (size_t k = 1; k < post.size(); ++k)
      if (post[k] > post[argmax]) argmax = static_cast<int>(k);
    std::printf("sample=%d class=%d p=%.6f\n", i, argmax, post[argmax]);
    if (data.has_labels && data.labels[i] == argmax) ++correct;
  }
  if (data.has_labels && data.num_samples() > 0)
    std::printf("accuracy=%.4f\n",
                static_cast<double>(correct) / data.num_samples());
  return 0;
}

int cmd_validate(const std::string& checkpoint, const std::string& config_path,
                 int seeds) {
  require(seeds >= 0, ErrorKind::config, "--seeds must be >= 0");
  ModelSpec spec;
  if (!checkpoint.empty()) {
    spec = load_checkpoint(checkpoint).config.model;
  } else {
    require(!config_path.empty(), ErrorKind::config,
            "validate needs --checkpoint or --config");
    spec = parse_config_file(config_path).model;
  }
  bool all_ok = true;
  for (int s = 1; s <= seeds; ++s) {
    Model model(spec);
    model.randomize(static_cast<uint64_t>(s), 1.0);
    Rng rng(static_cast<uint64_t>(s) * 7919);

    JointTable table = enumerate_joint(model);
    double z = numerics::log_sum_exp(table.log_mass);
    bool norm_ok = std::abs(z) < 1e-9;
    std::printf("seed=%d check=normalization status=%s error=%.3e\n", s,
                norm_ok ? "pass" : "fail", std::abs(z));

    const int V = model.spec().variable_count();
    bool marg_ok = true;
    for (int trial = 0; trial < 5; ++trial) {
      int cut = 1 + static_cast<int>(rng.below(V));
      std::vector<int> marginalized;
      std::vector<char> mask(V, 0);
      for (int r = cut; r < V; ++r) {
        int v = model.structure().order.by_rank[r];
        marginalized.push_back(v);
        mask[v] = 1;
      }
      std::vector<int> vals(V);
      for (int v = 0; v < V; ++v)
        vals[v] = static_cast<int>(rng.below(model.spec().num_categories));
      double engine = log_marginal(model, vals, marginalized);
      double oracle = oracle_marginal(table, vals, mask);
      if (std::abs(engine - oracle) >= 1e-9) marg_ok = false;
    }
    std::printf("seed=%d check=suffix_marginals status=%s\n", s,
                marg_ok ? "pass" : "fail");

    std::vector<int> sample(V);
    for (int v = 0; v < V; ++v)
      sample[v] = static_cast<int>(rng.below(model.spec().num_categories));
    auto report = check_gradients(model, sample);
    bool grad_ok = report.max_rel_err < 1e-5;
    std::printf("seed=%d check=gradients status=%s max_rel_err=%.3e\n", s,
                grad_ok ? "pass" : "fail", report.max_rel_err);

    all_ok = all_ok && norm_ok && marg_ok && grad_ok;
  }
  return all_ok ? 0 : 5;
}

int cmd_gradcheck(const std::string& config_path, long long seed,
                  double tolerance) {
  Config config = parse_config_file(config_path);
  Model model(config.model);
  model.randomize(seed >= 0 ? static_cast<uint64_t>(seed) : config.train.seed,
                  1.0);
  Rng rng((seed >= 0 ? static_cast<uint64_t>(seed) : config.train.seed) + 17);
  const int V = model.spec().variable_count();
  std::vector<int> sample(V);
  for (int v = 0; v < V; ++v)
    sample[v] = static_cast<int>(rng.below(model.spec().num_categories));
  int label = model.spec().num_classes > 1
                  ? static_cast<int>(rng.below(model.spec().num_classes))
                  : -1;
  auto report = check_gradients(model, sample, label);
  for (const auto& g : report.groups)
    std::printf("group=%s max_rel_err=%.3e\n", g.name.c_str(), g.max_rel_err);
  bool ok = report.max_rel_err < tolerance;
  std::printf("overall=%.3e status=%s\n", report.max_rel_err,
              ok ? "pass" : "fail");
  return ok ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered probabilistic neural circuits"};
  app.require_subcommand(1);

  std::string config_path, images, labels, out, checkpoint, evidence_file;
  std::string marginalize_spec;
  long long seed = -1;
  int threads = 0, num_seeds = 1;
  double tolerance = 1e-5;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--images", images);
  train_cmd->add_option("--labels", labels);
  train_cmd->add_option("--out", out)->required();
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--threads", threads);

  auto* eval_cmd = app.add_subcommand("eval", "per-sample log-density and bpd");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--images", images)->required();

  auto* marg_cmd = app.add_subcommand("marginal", "ordered marginal queries");
  marg_cmd->add_option("--checkpoint", checkpoint)->required();
  marg_cmd->add_option("--evidence-file", evidence_file)->required();
  marg_cmd->add_option("--marginalize", marginalize_spec)->required();

  auto* classify_cmd = app.add_subcommand("classify", "class posteriors");
  classify_cmd->add_option("--checkpoint", checkpoint)->required();
  classify_cmd->add_option("--images", images)->required();
  classify_cmd->add_option("--labels", labels);

  auto* validate_cmd =
      app.add_subcommand("validate", "oracle checks on seeded models");
  validate_cmd->add_option("--checkpoint", checkpoint);
  validate_cmd->add_option("--config", config_path);
  validate_cmd->add_option("--seeds", num_seeds);

  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck_cmd->add_option("--config", config_path)->required();
  gradcheck_cmd->add_option("--seed", seed);
  gradcheck_cmd->add_option("--tolerance", tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed())
      return cmd_train(config_path, images, labels, out, seed, threads);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, images);
    if (marg_cmd->parsed())
      return cmd_marginal(checkpoint, evidence_file, marginalize_spec);
    if (classify_cmd->parsed()) return cmd_classify(checkpoint, images, labels);
    if (validate_cmd->parsed())
      return cmd_validate(checkpoint, config_path, num_seeds);
    if (gradcheck_cmd->parsed())
      return cmd_gradcheck(config_path, seed, tolerance);
  } catch (const pnc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
