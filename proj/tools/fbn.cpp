#include "fbn/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fbn;

namespace {

// Wrong invocation, as opposed to input that fails validation.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Records {
 public:
  explicit Records(const std::string& path) {
    if (path.empty()) return;
    if (path == "-") {
      os_ = &std::cout;
      return;
    }
    file_.open(path, std::ios::trunc);
    if (!file_) throw std::runtime_error("cannot write " + path);
    os_ = &file_;
  }
  void write(const json& j) {
    if (os_) *os_ << j.dump() << '\n';
  }

 private:
  std::ofstream file_;
  std::ostream* os_ = nullptr;
};

std::string num(double v) { return format_double(v); }
std::string loss6(double v) { return fixed(v, 6); }

int cmd_train(const std::string& config, const std::string& out, const std::string& data_dir, bool quiet) {
  auto cfg = load_run_config(config);
  if (!data_dir.empty()) cfg.data_path = data_dir;
  const auto data = training_data(cfg);
  TrainOptions opt;
  opt.out_dir = out;
  opt.progress = quiet ? nullptr : &std::cout;
  const auto sum = train(cfg, data, opt);
  std::cout << format_table({"", "loss", "heat", "depth"},
                            {{"first step", loss6(sum.first.total), loss6(sum.first.heat), loss6(sum.first.depth)},
                             {"last step", loss6(sum.last.total), loss6(sum.last.heat), loss6(sum.last.depth)}})
            << "steps " << sum.final.step << ", epochs " << sum.epochs.size() << ", checkpoint "
            << (fs::path(out) / "checkpoint.fbn").string() << '\n';
  return 0;
}

json report_json(const MetricsReport& r) {
  json pck = json::array();
  for (const auto& [t, f] : r.pck) pck.push_back({{"threshold", t}, {"value", f}});
  json j{{"samples", r.samples}, {"joints_scored", r.joints_scored}, {"mean_error", r.mean_error}, {"pck", pck}};
  if (r.pckf) {
    json f = json::array();
    for (const auto& [t, v] : *r.pckf) f.push_back({{"threshold", t}, {"value", v}});
    j["pckf"] = f;
  }
  return j;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::vector<double>& thresholds,
             const std::vector<std::size_t>& pckf_ref, const std::vector<double>& pckf_thr, bool per_joint,
             const std::string& jsonl) {
  if (pckf_ref.size() != 0 && pckf_ref.size() != 2) throw UsageError("--pckf-ref takes two joint indices");
  if (!pckf_thr.empty() && pckf_ref.empty()) throw UsageError("--pckf needs --pckf-ref");
  const auto ck = load_checkpoint(ckpt_path);
  const auto cfg = ck.config();
  const auto data = load_dataset(data_dir);
  std::optional<std::pair<std::size_t, std::size_t>> ref;
  if (!pckf_ref.empty()) ref = std::pair{pckf_ref[0], pckf_ref[1]};
  const auto ev = evaluate(cfg.network, ck.params, data, thresholds, ref, pckf_thr);
  const auto& r = ev.report;

  std::vector<std::vector<std::string>> rows;
  for (const auto& [t, f] : r.pck) rows.push_back({"PCK@" + num(t), fixed(f, 4)});
  if (r.pckf)
    for (const auto& [t, f] : *r.pckf) rows.push_back({"PCKf@" + num(t), fixed(f, 4)});
  rows.push_back({"mean error", fixed(r.mean_error, 4)});
  std::cout << format_table({"metric", "value"}, rows) << r.samples << " samples, " << r.joints_scored
            << " joints scored\n";
  if (per_joint) {
    std::vector<std::vector<std::string>> jr;
    for (std::size_t j = 0; j < r.joint_count.size(); ++j)
      jr.push_back({std::to_string(j), data.graph.names.at(j), std::to_string(r.joint_count[j]),
                    fixed(r.joint_mean_error[j], 4)});
    std::cout << '\n' << format_table({"joint", "name", "count", "mean error"}, jr);
  }

  Records rec(jsonl);
  auto j = report_json(r);
  j["record"] = "eval";
  j["checkpoint"] = ckpt_path;
  j["data"] = data_dir;
  rec.write(j);
  for (std::size_t k = 0; k < r.joint_count.size(); ++k)
    rec.write({{"record", "joint"}, {"joint", k}, {"name", data.graph.names.at(k)}, {"count", r.joint_count[k]},
               {"mean_error", r.joint_mean_error[k]}});
  return 0;
}

int cmd_ablate(const std::string& axis_name, const std::string& config, const std::vector<std::uint64_t>& seeds,
               const std::vector<double>& thresholds, const std::string& jsonl, bool quiet) {
  AblationAxis axis;
  try {
    axis = parse_ablation_axis(axis_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto base = load_run_config(config);
  if (base.eval_count == 0) throw std::invalid_argument(config + ": ablation needs [data] eval_count > 0");
  const auto train_set = training_data(base);
  const auto test_set = generate_dataset(base.eval_data());
  AblationOptions opt;
  opt.seeds = seeds;
  opt.thresholds = thresholds;
  opt.progress = quiet ? nullptr : &std::cerr;
  const auto rows = run_ablation(ablation_variants(base, axis), train_set, test_set, opt);

  std::vector<std::string> header{std::string(to_string(axis))};
  for (auto s : seeds) header.push_back("seed " + std::to_string(s));
  header.push_back("mean PCK");
  header.push_back("mean error");
  std::vector<std::vector<std::string>> table;
  Records rec(jsonl);
  for (const auto& row : rows) {
    std::vector<std::string> cells{row.name};
    double err = 0;
    for (std::size_t k = 0; k < row.score.size(); ++k) {
      cells.push_back(fixed(row.score[k], 4));
      err += row.reports[k].mean_error;
      auto j = report_json(row.reports[k]);
      j["record"] = "ablation";
      j["axis"] = to_string(axis);
      j["variant"] = row.name;
      j["seed"] = seeds[k];
      j["score"] = row.score[k];
      rec.write(j);
    }
    cells.push_back(fixed(row.mean_score(), 4));
    cells.push_back(fixed(err / static_cast<double>(row.score.size()), 3));
    table.push_back(cells);
  }
  std::cout << format_table(header, table) << "score = mean PCK over thresholds";
  for (double t : thresholds) std::cout << ' ' << num(t);
  std::cout << " px; " << train_set.samples.size() << " train / " << test_set.samples.size() << " test samples\n";
  return 0;
}

int cmd_dump(const std::string& ckpt_path, const std::string& image_path, const std::vector<std::size_t>& joints,
             const std::string& out, std::optional<std::size_t> stack) {
  const auto ck = load_checkpoint(ckpt_path);
  const auto cfg = ck.config();
  const auto image = read_ppm(image_path);
  if (image.dim(0) != cfg.network.input_size || image.dim(1) != cfg.network.input_size)
    throw std::invalid_argument(image_path + ": image is " + std::to_string(image.dim(1)) + "x" +
                                std::to_string(image.dim(0)) + ", model expects " +
                                std::to_string(cfg.network.input_size));
  const auto maps =
      feature_maps(cfg.network, ck.params, image, joints, stack.value_or(cfg.network.stacks - 1));
  for (const auto& f : dump_feature_maps(maps, out)) std::cout << f.string() << '\n';
  return 0;
}

int cmd_graph_validate(const std::string& file, bool extended) {
  SkeletonGraph g;
  if (!fs::exists(file)) {
    const auto names = shipped_graph_names();
    if (std::find(names.begin(), names.end(), file) == names.end())
      throw std::invalid_argument(file + ": no such file or shipped graph");
    g = shipped_graph(file);
  } else {
    g = load_graph(file);
  }
  const auto profile =
      extended || g.count(EdgeKind::extra) > 0 ? ValidationProfile::extended_links : ValidationProfile::default_links;
  const auto rep = validate(g, profile);
  const auto links = g.link_counts();
  const std::size_t max_links = links.empty() ? 0 : *std::max_element(links.begin(), links.end());
  std::cout << format_table({"joints", "edges", "root", "max links", "profile"},
                            {{std::to_string(g.joint_count()), std::to_string(g.edges.size()), g.names.at(g.root),
                              std::to_string(max_links),
                              profile == ValidationProfile::extended_links ? "extended" : "default"}});
  for (const auto& issue : rep.issues) std::cout << "issue: " << issue << '\n';
  std::cout << (rep.ok() ? "valid" : "invalid") << '\n';
  return rep.ok() ? 0 : 1;
}

int cmd_synth(const std::string& config, const std::string& out, bool eval_set) {
  const auto cfg = load_run_config(config);
  const auto dc = eval_set ? cfg.eval_data() : cfg.data;
  if (dc.count == 0) throw std::invalid_argument(config + ": dataset count is 0");
  const auto d = generate_dataset(dc);
  save_dataset(d, out);
  std::cout << d.samples.size() << " samples of " << d.config.graph << " written to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-boosting 3D pose network: training, evaluation and diagnostics"};
  app.require_subcommand(1);
  bool quiet = false;
  std::string config, out, data_dir, ckpt, image, axis = "connections", jsonl;
  std::vector<double> thresholds, pckf_thr;
  std::vector<std::size_t> pckf_ref, joints;
  std::vector<std::uint64_t> seeds{1};
  std::optional<std::size_t> stack;
  bool per_joint = false, extended = false, eval_set = false;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "run config (ini)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--data", data_dir, "dataset directory (overrides the config)")->check(CLI::ExistingDirectory);
  train->add_flag("--quiet", quiet, "no progress output");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--pck", thresholds, "PCK thresholds in pixels")->required()->delimiter(',');
  eval->add_option("--pckf-ref", pckf_ref, "two joints whose distance normalizes PCKf")->delimiter(',');
  eval->add_option("--pckf", pckf_thr, "PCKf thresholds")->delimiter(',');
  eval->add_flag("--per-joint", per_joint, "per-joint error table");
  eval->add_option("--jsonl", jsonl, "write JSON-lines records ('-' for stdout)");

  auto* ablate = app.add_subcommand("ablate", "train and compare the rows of one ablation axis");
  ablate->add_option("--axis", axis, "connections | cells | stacks | boosting")->required();
  ablate->add_option("--config", config, "base run config (ini)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds, "seed offsets")->delimiter(',');
  std::vector<double> ablate_thresholds{4, 8, 12};
  ablate->add_option("--pck", ablate_thresholds, "PCK thresholds in pixels")->delimiter(',')->capture_default_str();
  ablate->add_option("--jsonl", jsonl, "write JSON-lines records ('-' for stdout)");
  ablate->add_flag("--quiet", quiet, "no progress output");

  auto* dump = app.add_subcommand("dump-fmaps", "write per-joint feature, gate and boosted maps as PGM");
  dump->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  dump->add_option("--image", image, "input image (PPM)")->required()->check(CLI::ExistingFile);
  dump->add_option("--joints", joints, "joint indices")->required()->delimiter(',');
  std::string dump_out = "fmaps";
  dump->add_option("--out", dump_out, "output directory")->capture_default_str();
  dump->add_option("--stack", stack, "stack index (default: last)");

  auto* graph = app.add_subcommand("graph", "skeleton graph tools");
  graph->require_subcommand(1);
  std::string graph_file;
  auto* gval = graph->add_subcommand("validate", "check a graph file or shipped graph name");
  gval->add_option("file", graph_file, "graph file or shipped name")->required();
  gval->add_flag("--extended", extended, "use the extended link limits");

  auto* synth = app.add_subcommand("synth", "generate the configured dataset on disk");
  synth->add_option("--config", config, "run config (ini)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_flag("--eval", eval_set, "generate the held-out set instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(config, out, data_dir, quiet);
    if (*eval) return cmd_eval(ckpt, data_dir, thresholds, pckf_ref, pckf_thr, per_joint, jsonl);
    if (*ablate) return cmd_ablate(axis, config, seeds, ablate_thresholds, jsonl, quiet);
    if (*dump) return cmd_dump(ckpt, image, joints, dump_out, stack);
    if (*gval) return cmd_graph_validate(graph_file, extended);
    if (*synth) return cmd_synth(config, out, eval_set);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
