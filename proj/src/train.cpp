#include "fbn/train.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>

namespace fbn {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is, std::uint64_t limit) {
  const auto n = get_u64(is);
  if (n > limit) throw CheckpointError("checkpoint string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("checkpoint truncated");
  return s;
}

void put_table(std::ostream& os, const ParamSet<float>& ps) {
  put_u64(os, ps.size());
  for (const auto& [name, t] : ps.all()) {
    put_str(os, name);
    write_tensor(os, t);
  }
}

ParamSet<float> get_table(std::istream& is) {
  ParamSet<float> ps;
  const auto n = get_u64(is);
  if (n > (1u << 20)) throw CheckpointError("checkpoint table size out of range");
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = get_str(is, 4096);
    try {
      ps.set(name, read_tensor<float>(is));
    } catch (const std::exception& e) {
      throw CheckpointError("checkpoint tensor '" + name + "': " + e.what());
    }
  }
  return ps;
}

void check_layout(const ParamSet<float>& expect, const ParamSet<float>& got, const std::string& what) {
  for (const auto& [name, t] : expect.all()) {
    if (!got.contains(name)) throw CheckpointError(what + " lacks tensor '" + name + "'");
    if (got.at(name).shape() != t.shape())
      throw CheckpointError(what + " tensor '" + name + "' has shape " + shape_str(got.at(name).shape()) +
                            ", expected " + shape_str(t.shape()));
  }
  if (got.size() != expect.size()) throw CheckpointError(what + " has unexpected tensors");
}

nlohmann::json loss_json(const LossStats& l) { return {{"loss", l.total}, {"loss_heat", l.heat}, {"loss_depth", l.depth}}; }

}  // namespace

RunConfig Checkpoint::config() const {
  if (fnv1a(config_text) != digest) throw CheckpointError("checkpoint config digest mismatch");
  return run_config_from(Ini::parse(config_text, "<checkpoint config>"));
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path.string());
  os.write(kMagic, 4);
  put_u64(os, c.digest);
  put_str(os, c.config_text);
  put_u64(os, c.step);
  put_table(os, c.params);
  put_table(os, c.velocity);
  if (!os) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw CheckpointError(path.string() + ": not an FBN1 checkpoint");
  Checkpoint c;
  c.digest = get_u64(is);
  c.config_text = get_str(is, 1u << 20);
  c.step = get_u64(is);
  c.params = get_table(is);
  c.velocity = get_table(is);
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  if (fnv1a(c.config_text) != c.digest) throw CheckpointError(path.string() + ": config digest mismatch");
  return c;
}

std::vector<std::size_t> batch_indices(std::uint64_t shuffle_seed, std::size_t step, std::size_t batch,
                                       std::size_t n) {
  if (n == 0 || batch == 0) throw std::invalid_argument("batch_indices: empty dataset or batch");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < batch; ++k) {
    const std::size_t pos = step * batch + k, epoch = pos / n;
    if (epoch != cached_epoch) {
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng(derive_seed(shuffle_seed, epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

void check_compatible(const NetworkConfig& cfg, const Dataset& data) {
  if (data.joints() != cfg.joints)
    throw std::invalid_argument("dataset has " + std::to_string(data.joints()) + " joints, network expects " +
                                std::to_string(cfg.joints));
  if (data.config.image_size != cfg.input_size || data.config.heatmap_size != cfg.feature_size)
    throw std::invalid_argument("dataset image/heatmap sizes " + std::to_string(data.config.image_size) + "/" +
                                std::to_string(data.config.heatmap_size) + " differ from the network's " +
                                std::to_string(cfg.input_size) + "/" + std::to_string(cfg.feature_size));
  if (data.samples.empty()) throw std::invalid_argument("dataset is empty");
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  graph_ = resolve_graph(cfg_.network);
  params_ = init_network<float>(cfg_.network, graph_, cfg_.training.init_seed);
  for (const auto& [name, p] : params_.all()) velocity_.set(name, Tensor<float>(p.shape()));
}

Trainer::Trainer(const RunConfig& cfg, const Checkpoint& from) : Trainer(cfg) {
  check_layout(params_, from.params, "checkpoint parameters");
  check_layout(params_, from.velocity, "checkpoint momentum");
  params_ = from.params;
  velocity_ = from.velocity;
  step_ = from.step;
}

Targets<float> Trainer::targets_for(const Dataset& data, std::size_t index, std::size_t slot) const {
  const auto& s = data.samples.at(index);
  if (!cfg_.training.augment) return make_targets<float>(s, cfg_.network);
  Rng rng(derive_seed(cfg_.training.shuffle_seed ^ 0x5bd1e995u, step_, slot));
  return make_targets<float>(augment(s, rng, data.config.aug, data.config.heatmap_scale()), cfg_.network);
}

LossStats Trainer::step(const Dataset& data) {
  const auto& t = cfg_.training;
  const auto idx = batch_indices(t.shuffle_seed, step_, t.batch, data.samples.size());
  std::vector<ParamSet<float>> grads;
  LossStats mean;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto sg = sample_gradient(cfg_.network, graph_, params_, targets_for(data, idx[k], k));
    grads.push_back(std::move(sg.grads));
    mean.total += sg.loss.total;
    mean.heat += sg.loss.heat;
    mean.depth += sg.loss.depth;
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  mean.total *= inv;
  mean.heat *= inv;
  mean.depth *= inv;
  auto g = mean_gradient(grads);
  if (t.clip_norm > 0) clip_global_norm(g, t.clip_norm);
  sgd_momentum_update(params_, velocity_, g, t.lr_at(step_), t.momentum);
  ++step_;
  return mean;
}

LossStats Trainer::loss(const Dataset& data, const std::vector<std::size_t>& indices) const {
  LossStats mean;
  for (auto i : indices) {
    auto tg = make_targets<float>(data.samples.at(i), cfg_.network);
    Tape<float> tape;
    BoundParams<float> bp(tape, params_, false);
    auto l = network_loss(tape, network_forward(cfg_.network, graph_, bp, tape.constant(tg.image)), tg.heatmaps,
                          tg.depth, cfg_.network.gamma);
    mean.total += l.total.value()[0];
    mean.heat += l.heat.value()[0];
    mean.depth += l.depth.value()[0];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  mean.total *= inv;
  mean.heat *= inv;
  mean.depth *= inv;
  return mean;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_text = to_ini(cfg_);
  c.digest = fnv1a(c.config_text);
  c.step = step_;
  c.params = params_;
  c.velocity = velocity_;
  return c;
}

Dataset training_data(const RunConfig& cfg) {
  return cfg.data_path.empty() ? generate_dataset(cfg.data) : load_dataset(cfg.data_path);
}

TrainSummary train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt) {
  check_compatible(cfg.network, data);
  Trainer tr = opt.resume ? Trainer(cfg, *opt.resume) : Trainer(cfg);
  const auto& t = cfg.training;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "log.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (opt.out_dir / "log.jsonl").string());
    log << nlohmann::json{{"event", "start"},
                          {"step", tr.steps_done()},
                          {"data_seed", cfg.data.seed},
                          {"init_seed", t.init_seed},
                          {"shuffle_seed", t.shuffle_seed},
                          {"config_digest", fnv1a(to_ini(cfg))},
                          {"samples", data.samples.size()}}
               .dump()
        << '\n';
  }
  TrainSummary sum;
  const std::size_t n = data.samples.size();
  LossStats acc;
  std::size_t acc_steps = 0, epoch = tr.steps_done() * t.batch / n;
  auto flush_epoch = [&] {
    if (acc_steps == 0) return;
    LossStats e{acc.total / static_cast<double>(acc_steps), acc.heat / static_cast<double>(acc_steps),
                acc.depth / static_cast<double>(acc_steps)};
    sum.epochs.push_back(e);
    if (log.is_open()) {
      auto rec = loss_json(e);
      rec["event"] = "epoch";
      rec["epoch"] = epoch;
      rec["steps"] = acc_steps;
      log << rec.dump() << '\n';
    }
    acc = {};
    acc_steps = 0;
  };
  bool first = true;
  while (tr.steps_done() < t.steps) {
    const std::size_t s = tr.steps_done();
    const auto l = tr.step(data);
    if (first) sum.first = l, first = false;
    sum.last = l;
    acc.total += l.total;
    acc.heat += l.heat;
    acc.depth += l.depth;
    ++acc_steps;
    const std::size_t next_epoch = tr.steps_done() * t.batch / n;
    if (next_epoch != epoch) {
      flush_epoch();
      epoch = next_epoch;
    }
    if (t.log_every && (s % t.log_every == 0 || s + 1 == t.steps)) {
      if (log.is_open()) {
        auto rec = loss_json(l);
        rec["event"] = "step";
        rec["step"] = s;
        rec["lr"] = t.lr_at(s);
        log << rec.dump() << '\n';
      }
      if (opt.progress)
        *opt.progress << "step " << std::setw(6) << s << "  loss " << std::setprecision(6) << l.total << "  heat "
                      << l.heat << "  depth " << l.depth << std::endl;
    }
    if (t.checkpoint_every && !opt.out_dir.empty() && tr.steps_done() % t.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu.fbn", tr.steps_done());
      save_checkpoint(tr.checkpoint(), opt.out_dir / name);
    }
  }
  flush_epoch();
  sum.final = tr.checkpoint();
  if (!opt.out_dir.empty()) {
    save_checkpoint(sum.final, opt.out_dir / "checkpoint.fbn");
    auto rec = loss_json(sum.last);
    rec["event"] = "end";
    rec["step"] = tr.steps_done();
    log << rec.dump() << '\n';
  }
  return sum;
}

Pose3 to_image_units(const Pose3& hm, const DataConfig& d) {
  Pose3 out(hm.size());
  const double s = d.heatmap_scale(), u = d.depth_unit_px();
  for (std::size_t j = 0; j < hm.size(); ++j) out[j] = {from_heatmap(hm[j][0], s), from_heatmap(hm[j][1], s), hm[j][2] * u};
  return out;
}

Pose3 ground_truth_pose(const PoseSample& s, const DataConfig& d) {
  Pose3 out(s.joints2d.size());
  const double u = d.depth_unit_px();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = {s.joints2d[j][0], s.joints2d[j][1], s.depth[j] * u};
  return out;
}

Evaluation evaluate(const NetworkConfig& cfg, const ParamSet<float>& params, const Dataset& data,
                    const std::vector<double>& thresholds,
                    std::optional<std::pair<std::size_t, std::size_t>> pckf_ref,
                    const std::vector<double>& pckf_thresholds) {
  check_compatible(cfg, data);
  const auto g = resolve_graph(cfg);
  Evaluation ev;
  for (const auto& s : data.samples) {
    const auto hm = predict(cfg, g, params, s.image);
    ev.poses.pred.push_back(to_image_units(hm, data.config));
    ev.poses.gt.push_back(ground_truth_pose(s, data.config));
    ev.poses.visible.push_back(s.visible);
  }
  ev.report = compute_metrics(ev.poses, data.graph.root, thresholds, pckf_ref, pckf_thresholds);
  return ev;
}

}  // namespace fbn
