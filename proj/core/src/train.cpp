#include "tased/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tased/error.hpp"

namespace tased {

std::string to_string(DecayMode m) { return m == DecayMode::steps ? "steps" : "patience"; }

DecayMode parse_decay_mode(std::string_view text) {
  if (text == "steps") return DecayMode::steps;
  if (text == "patience") return DecayMode::patience;
  throw ConfigError(fmt::format("unknown decay mode '{}' (expected steps or patience)", text));
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const std::size_t micro = micro_batch_size == 0 ? batch_size : micro_batch_size;
  if (batch_size % micro != 0) {
    throw ConfigError(fmt::format("micro_batch_size {} does not divide batch_size {}", micro, batch_size));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(encoder_lr > 0.0) || !(decoder_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be > 0");
  if (!(loss_eps > 0.0)) throw ConfigError("loss_eps must be > 0");
  if (total_steps == 0) throw ConfigError("total_steps must be >= 1");
  if (decay_mode == DecayMode::steps) {
    if (decay_steps.size() != kDecayCount) {
      throw ConfigError(fmt::format("decay_steps needs {} entries, got {}", kDecayCount, decay_steps.size()));
    }
    for (std::size_t i = 0; i < decay_steps.size(); ++i) {
      if (i > 0 && decay_steps[i] <= decay_steps[i - 1]) throw ConfigError("decay_steps must be strictly increasing");
      if (decay_steps[i] == 0 || decay_steps[i] >= total_steps) {
        throw ConfigError(fmt::format("decay step {} must lie in [1, total_steps={})", decay_steps[i], total_steps));
      }
    }
  } else {
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (validate_every == 0) throw ConfigError("patience mode needs validate_every >= 1");
  }
  if (validate_every > 0 && validation_samples == 0) throw ConfigError("validation_samples must be >= 1");
}

// ---------------------------------------------------------------------------

namespace {

void check_loss_inputs(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError(fmt::format("kl_loss: prediction {} and ground truth {} differ", shape_str(pred.shape()),
                                 shape_str(gt.shape())));
  }
  if (pred.rank() < 2) throw ShapeError("kl_loss expects a batch of maps (rank >= 2)");
}

struct MapSums {
  double pred;
  double gt;
};

MapSums map_sums(const double* p, const double* g, std::size_t n, std::size_t b) {
  MapSums s{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] < 0.0 || g[i] < 0.0) throw std::invalid_argument(fmt::format("kl_loss: map {} has negative values", b));
    s.pred += p[i];
    s.gt += g[i];
  }
  if (!(s.gt > 0.0)) throw std::invalid_argument(fmt::format("kl_loss: ground truth map {} is all zero", b));
  if (!(s.pred > 0.0)) throw NumericError(fmt::format("kl_loss: prediction map {} sums to zero", b));
  return s;
}

}  // namespace

double kl_loss(const Tensor& pred, const Tensor& gt, double eps) {
  check_loss_inputs(pred, gt);
  const std::size_t batch = pred.dim(0);
  const std::size_t n = pred.numel() / batch;
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = pred.raw() + b * n;
    const double* g = gt.raw() + b * n;
    const MapSums s = map_sums(p, g, n, b);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double gh = g[i] / s.gt;
      if (gh > 0.0) kl += gh * std::log(gh / (p[i] / s.pred + eps));
    }
    total += kl;
  }
  return total / static_cast<double>(batch);
}

Tensor kl_loss_backward(const Tensor& pred, const Tensor& gt, double eps) {
  check_loss_inputs(pred, gt);
  const std::size_t batch = pred.dim(0);
  const std::size_t n = pred.numel() / batch;
  Tensor grad(pred.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = pred.raw() + b * n;
    const double* g = gt.raw() + b * n;
    double* d = grad.raw() + b * n;
    const MapSums s = map_sums(p, g, n, b);
    double common = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double q = p[i] / s.pred;
      common += (g[i] / s.gt) * q / (q + eps);
    }
    const double scale = 1.0 / (s.pred * static_cast<double>(batch));
    for (std::size_t i = 0; i < n; ++i) {
      const double q = p[i] / s.pred;
      d[i] = (common - (g[i] / s.gt) / (q + eps)) * scale;
    }
  }
  return grad;
}

Var kl_loss(Tape& tape, const Var& pred, const Tensor& gt, double eps) {
  Tensor value({1}, kl_loss(pred.value(), gt, eps));
  return tape.record(std::move(value), {pred}, [gt, eps](BackwardContext& ctx) {
    Tensor g = kl_loss_backward(ctx.input(0), gt, eps);
    ctx.grad_input(0).add_inplace(g, ctx.grad_output()[0]);
  });
}

// ---------------------------------------------------------------------------

namespace {

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void sgd_step(const std::vector<Parameter*>& params, const std::function<double(const Parameter&)>& lr,
              double momentum, std::map<std::string, Tensor>& velocity) {
  for (const Parameter* p : params) {
    for (double g : p->grad.data()) {
      if (!std::isfinite(g)) throw NumericError(fmt::format("non-finite gradient in parameter '{}'", p->name));
    }
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError(fmt::format("parameter '{}': gradient shape {} differs from value {}", p->name,
                                   shape_str(p->grad.shape()), shape_str(p->value.shape())));
    }
  }
  for (Parameter* p : params) {
    const double rate = lr(*p);
    auto [it, inserted] = velocity.try_emplace(p->name, Tensor::zeros_like(p->value));
    Tensor& v = it->second;
    if (v.shape() != p->value.shape()) {
      throw ShapeError(fmt::format("momentum buffer for '{}' has shape {}, parameter is {}", p->name,
                                   shape_str(v.shape()), shape_str(p->value.shape())));
    }
    auto w = p->value.data();
    auto vd = v.data();
    const auto g = p->grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vd[i] = round_to_float(momentum * vd[i] + g[i]);
      w[i] = round_to_float(w[i] - rate * vd[i]);
    }
  }
}

double lr_schedule(std::size_t step, const TrainConfig& config) {
  double lr = config.decoder_lr;
  for (std::size_t s : config.decay_steps) {
    if (step >= s) lr /= config.decay_factor;
  }
  return lr;
}

std::size_t LrSchedule::decays_at(std::size_t step) const {
  if (config_.decay_mode == DecayMode::patience) return state_.decays;
  std::size_t k = 0;
  for (std::size_t s : config_.decay_steps) k += step >= s ? 1 : 0;
  return k;
}

double LrSchedule::decoder_lr(std::size_t step) const {
  if (config_.decay_mode == DecayMode::steps) return lr_schedule(step, config_);
  double lr = config_.decoder_lr;
  for (std::size_t i = 0; i < state_.decays; ++i) lr /= config_.decay_factor;
  return lr;
}

bool LrSchedule::on_validation(double loss) {
  if (!state_.best || loss < *state_.best) {
    state_.best = loss;
    state_.stale = 0;
    return false;
  }
  ++state_.stale;
  if (config_.decay_mode == DecayMode::patience && state_.stale >= config_.patience &&
      state_.decays < TrainConfig::kDecayCount) {
    ++state_.decays;
    state_.stale = 0;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t starts_of(const VideoSample& v, std::size_t T) { return v.size() >= T ? v.size() - T + 1 : 1; }

}  // namespace

std::size_t clip_count(const Dataset& dataset, std::size_t T) {
  std::size_t total = 0;
  for (const VideoSample& v : dataset.videos) {
    if (v.size() == 0) throw std::invalid_argument(fmt::format("video '{}' has no frames", v.id));
    total += starts_of(v, T);
  }
  return total;
}

ClipOrigin clip_origin(const Dataset& dataset, std::size_t T, std::size_t index) {
  for (std::size_t i = 0; i < dataset.videos.size(); ++i) {
    const std::size_t n = starts_of(dataset.videos[i], T);
    if (index < n) return {i, index};
    index -= n;
  }
  throw std::out_of_range("clip_origin: index beyond the clip count");
}

ClipBatch make_batch(const Dataset& dataset, std::size_t T, const std::vector<ClipOrigin>& origins) {
  if (origins.empty()) throw std::invalid_argument("make_batch: no clips");
  const Tensor& first = dataset.videos.at(origins[0].video).frames.at(0);
  const std::size_t H = first.dim(1);
  const std::size_t W = first.dim(2);
  const std::size_t plane = H * W;
  ClipBatch batch;
  batch.clips = Tensor({origins.size(), 3, T, H, W});
  batch.targets = Tensor({origins.size(), 1, H, W});
  batch.origins = origins;
  for (std::size_t b = 0; b < origins.size(); ++b) {
    const VideoSample& v = dataset.videos.at(origins[b].video);
    for (std::size_t t = 0; t < T; ++t) {
      // Videos shorter than T are looped from their first frame.
      const Tensor& frame = v.frames.at((origins[b].start + t) % v.size());
      if (frame.shape() != Shape{3, H, W}) throw ShapeError("make_batch: frames of different sizes");
      for (std::size_t c = 0; c < 3; ++c) {
        std::copy_n(frame.raw() + c * plane, plane, batch.clips.raw() + (((b * 3 + c) * T) + t) * plane);
      }
    }
    const Tensor& target = v.targets.at((origins[b].start + T - 1) % v.size());
    std::copy_n(target.raw(), plane, batch.targets.raw() + b * plane);
  }
  return batch;
}

ClipBatch sample_clips(const Dataset& dataset, std::size_t T, std::size_t count, Rng& rng) {
  if (dataset.videos.empty()) throw std::invalid_argument("sample_clips: empty dataset");
  const std::size_t total = clip_count(dataset, T);
  std::vector<ClipOrigin> origins;
  origins.reserve(count);
  for (std::size_t i = 0; i < count; ++i) origins.push_back(clip_origin(dataset, T, rng.below(total)));
  return make_batch(dataset, T, origins);
}

double validate(Network& net, const Dataset& dataset, std::size_t count, Rng& rng, double eps, std::size_t batch) {
  if (dataset.videos.empty()) throw std::invalid_argument("validate: empty dataset");
  const std::size_t T = net.config().clip_length;
  const std::size_t total = clip_count(dataset, T);
  std::vector<std::size_t> indices;
  if (count >= total) {
    indices.resize(total);
    for (std::size_t i = 0; i < total; ++i) indices[i] = i;
  } else {
    indices = rng.sample_without_replacement(total, count);
  }
  double sum_loss = 0.0;
  for (std::size_t begin = 0; begin < indices.size(); begin += batch) {
    const std::size_t end = std::min(indices.size(), begin + batch);
    std::vector<ClipOrigin> origins;
    for (std::size_t i = begin; i < end; ++i) origins.push_back(clip_origin(dataset, T, indices[i]));
    const ClipBatch clips = make_batch(dataset, T, origins);
    const Tensor pred = net.predict(clips.clips);
    sum_loss += kl_loss(pred, clips.targets, eps) * static_cast<double>(end - begin);
  }
  return sum_loss / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Network& net, const Dataset& train, const Dataset* validation, TrainConfig config)
    : net_(net),
      train_(train),
      validation_(validation),
      config_(std::move(config)),
      schedule_(config_),
      rng_(config_.seed) {
  config_.validate();
  if (train_.videos.empty()) throw std::invalid_argument("Trainer: empty training set");
  if (config_.decay_mode == DecayMode::patience && validation_ == nullptr) {
    throw ConfigError("patience-based decay needs a validation set");
  }
}

double Trainer::decoder_lr() const { return schedule_.decoder_lr(step_); }

StepRecord Trainer::step() {
  if (done()) throw std::logic_error("Trainer::step: all steps are complete");
  StepRecord rec;
  rec.step = step_;
  rec.encoder_lr = config_.encoder_lr;
  rec.decoder_lr = schedule_.decoder_lr(step_);

  const std::size_t T = net_.config().clip_length;
  const ClipBatch batch = sample_clips(train_, T, config_.batch_size, rng_);
  const std::size_t micro = config_.micro_batch_size == 0 ? config_.batch_size : config_.micro_batch_size;
  const std::size_t parts = config_.batch_size / micro;

  const std::vector<Parameter*> params = net_.parameters();
  for (Parameter* p : params) p->zero_grad();
  double loss_sum = 0.0;
  const std::size_t H = batch.targets.dim(2);
  const std::size_t W = batch.targets.dim(3);
  const std::size_t clip_numel = 3 * T * H * W;
  for (std::size_t m = 0; m < parts; ++m) {
    Tensor clips({micro, 3, T, H, W});
    Tensor targets({micro, 1, H, W});
    std::copy_n(batch.clips.raw() + m * micro * clip_numel, micro * clip_numel, clips.raw());
    std::copy_n(batch.targets.raw() + m * micro * H * W, micro * H * W, targets.raw());
    Tape tape;
    Var pred = net_.forward(tape, tape.constant(std::move(clips)), Mode::train);
    Var loss = kl_loss(tape, pred, targets, config_.loss_eps);
    loss_sum += loss.value()[0];
    tape.backward(loss);
  }
  rec.loss = loss_sum / static_cast<double>(parts);
  if (!std::isfinite(rec.loss)) throw NumericError(fmt::format("non-finite training loss at step {}", step_));
  if (parts > 1) {
    const double inv = 1.0 / static_cast<double>(parts);
    for (Parameter* p : params) {
      for (double& g : p->grad.data()) g *= inv;
    }
  }

  sgd_step(
      params,
      [&](const Parameter& p) {
        return param_group(p.name) == ParamGroup::encoder ? rec.encoder_lr : rec.decoder_lr;
      },
      config_.momentum, velocity_);
  ++step_;

  if (validation_ != nullptr && config_.validate_every > 0 && step_ % config_.validate_every == 0) {
    Rng vrng(derive_seed(derive_seed(config_.seed, 0x76616cULL), step_));
    rec.val_loss = validate(net_, *validation_, config_.validation_samples, vrng, config_.loss_eps);
    const bool decayed = schedule_.on_validation(*rec.val_loss);
    if (config_.decay_mode == DecayMode::patience) rec.decayed = decayed;
  }
  if (config_.decay_mode == DecayMode::steps) {
    rec.decayed = schedule_.decays_at(step_) != schedule_.decays_at(step_ - 1);
  }
  return rec;
}

std::vector<NamedTensor> Trainer::optimizer_state() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, v] : velocity_) out.push_back({"optimizer.momentum." + name, v});
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::vector<NamedTensor> entries = network_state(net_);
  std::vector<NamedTensor> opt = optimizer_state();
  nlohmann::json names = nlohmann::json::array();
  for (const NamedTensor& e : opt) names.push_back(e.name);
  entries.insert(entries.end(), opt.begin(), opt.end());
  write_archive(path, entries);

  const LrSchedule::State& s = schedule_.state();
  nlohmann::json j;
  j["step"] = step_;
  j["optimizer"] = {{"kind", "sgd_momentum"}, {"momentum", config_.momentum}, {"state_names", names}};
  j["schedule"] = {{"mode", to_string(config_.decay_mode)},
                   {"decays", s.decays},
                   {"best_val_loss", s.best ? nlohmann::json(*s.best) : nlohmann::json(nullptr)},
                   {"stale_validations", s.stale},
                   {"decoder_lr", schedule_.decoder_lr(step_)}};
  j["rng"] = rng_.state();
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", sidecar_path(path).string()));
  out << j.dump(2) << "\n";
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const std::vector<NamedTensor> entries = read_archive(path);
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError(fmt::format("missing checkpoint sidecar '{}'", sidecar_path(path).string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("'{}': {}", sidecar_path(path).string(), e.what()));
  }

  std::map<std::string, Tensor> velocity;
  const std::string prefix = "optimizer.momentum.";
  for (const NamedTensor& e : entries) {
    if (e.name.starts_with(prefix)) velocity[e.name.substr(prefix.size())] = e.tensor;
  }
  std::map<std::string, const Parameter*> by_name;
  for (const Parameter* p : net_.parameters()) by_name[p->name] = p;
  for (const auto& [name, v] : velocity) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(fmt::format("momentum for unknown parameter '{}'", name));
    if (it->second->value.shape() != v.shape()) {
      throw ShapeError(fmt::format("momentum for '{}' has shape {}, parameter is {}", name, shape_str(v.shape()),
                                   shape_str(it->second->value.shape())));
    }
  }

  try {
    const std::size_t step = j.at("step").get<std::size_t>();
    const auto& sch = j.at("schedule");
    LrSchedule::State s;
    s.decays = sch.at("decays").get<std::size_t>();
    if (!sch.at("best_val_loss").is_null()) s.best = sch.at("best_val_loss").get<double>();
    s.stale = sch.at("stale_validations").get<std::size_t>();
    const Rng::State rng_state = j.at("rng").get<Rng::State>();
    load_network_state(net_, entries);
    velocity_ = std::move(velocity);
    schedule_.set_state(s);
    rng_.set_state(rng_state);
    step_ = step;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("'{}': {}", sidecar_path(path).string(), e.what()));
  }
}

}  // namespace tased
