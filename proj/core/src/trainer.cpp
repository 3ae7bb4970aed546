#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cathnav/learner.hpp"
#include "cathnav/scenario.hpp"

namespace cathnav {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "cathnav-checkpoint";
constexpr int kCheckpointVersion = 1;

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) { return to_vector(j.get<std::vector<double>>()); }

json mlp_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto w = net.weight(l);
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
    }
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weight", row_major}, {"bias", vector_json(net.bias(l))}});
  }
  return {{"sizes", net.sizes()}, {"layers", layers}};
}

// Copies weights into `net`, whose layer sizes must match.
void mlp_load(Mlp& net, const json& j, const char* name) {
  if (j.at("sizes").get<std::vector<int>>() != net.sizes()) {
    throw ConfigError(std::string("checkpoint network '") + name + "' has different layer sizes");
  }
  const auto& layers = j.at("layers");
  if (layers.size() != net.layer_count()) throw SchemaError(std::string("checkpoint network '") + name + "' is malformed");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto w = net.weight(l);
    auto b = net.bias(l);
    const auto weights = layers[l].at("weight").get<std::vector<double>>();
    const auto bias = layers[l].at("bias").get<std::vector<double>>();
    if (layers[l].at("rows").get<Eigen::Index>() != w.rows() || layers[l].at("cols").get<Eigen::Index>() != w.cols() ||
        weights.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(b.size())) {
      throw SchemaError(std::string("checkpoint network '") + name + "' has inconsistent layer shapes");
    }
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = weights[static_cast<std::size_t>(r * w.cols() + c)];
    }
    b = to_vector(bias);
  }
}

Mlp mlp_from(const json& j, const char* name) {
  std::mt19937_64 unused(0);
  Mlp net(j.at("sizes").get<std::vector<int>>(), unused);
  mlp_load(net, j, name);
  return net;
}

json adam_json(const Adam& a) {
  return {{"learning_rate", a.learning_rate}, {"t", a.t}, {"m", vector_json(a.m)}, {"v", vector_json(a.v)}};
}

Adam adam_from(const json& j) {
  Adam a;
  a.learning_rate = j.at("learning_rate").get<double>();
  a.t = j.at("t").get<long>();
  a.m = vector_from(j.at("m"));
  a.v = vector_from(j.at("v"));
  return a;
}

json policy_json(const GaussianPolicy& p) { return {{"mean", mlp_json(p.mean)}, {"log_std", vector_json(p.log_std)}}; }

json parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), e.byte);
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw SchemaError("not a cathnav checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(j.value("version", -1)));
  }
  return j;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[begin + k]));
  return out;
}

Vector gather(const Vector& v, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
  Vector out(static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(idx[begin + k])];
  return out;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& text) {
  const json j = parse_checkpoint(text);
  CheckpointInfo info;
  try {
    info.schema_hash = j.at("schema_hash").get<std::string>();
    info.scenario_hash = j.at("scenario_hash").get<std::string>();
    info.config_hash = j.at("config_hash").get<std::string>();
    info.config = TrainConfig::from_json(j.at("config").dump());
    info.iteration = j.at("iteration").get<long>();
    info.env_steps = j.at("env_steps").get<long>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
  return info;
}

LearnedPolicy load_policy(const std::string& text, const std::string& expected_schema_hash, bool greedy) {
  const json j = parse_checkpoint(text);
  try {
    const auto hash = j.at("schema_hash").get<std::string>();
    if (!expected_schema_hash.empty() && hash != expected_schema_hash) {
      throw HashMismatch("checkpoint schema hash " + hash + " does not match " + expected_schema_hash);
    }
    GaussianPolicy p;
    p.mean = mlp_from(j.at("networks").at("policy").at("mean"), "policy");
    p.log_std = vector_from(j.at("networks").at("policy").at("log_std"));
    ActionCodec codec;
    codec.bend_scale = j.at("codec").at("bend_scale").get<double>();
    codec.max_insertion = j.at("codec").at("max_insertion").get<double>();
    return LearnedPolicy(std::move(p), codec, j.at("feature_scale").get<double>(), greedy);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

Trainer::Trainer(Environment& env, std::vector<Demonstration> demos, TrainConfig cfg, std::string scenario_hash)
    : env_(env),
      cfg_(std::move(cfg)),
      schema_hash_(schema_hash(env.config())),
      scenario_hash_(std::move(scenario_hash)),
      feature_scale_(env.feature_scale()),
      rng_(cfg_.seed) {
  cfg_.validate();
  const std::size_t rays = env_.config().rays.directions.size();
  codec_ = ActionCodec::for_spec(env_.config().catheter, cfg_.curriculum.initial_factor);

  std::size_t count = 0;
  for (const auto& d : demos) {
    if (d.meta.schema_hash != schema_hash_) {
      throw HashMismatch("demonstration schema hash " + d.meta.schema_hash + " does not match " + schema_hash_);
    }
    if (d.meta.ray_count != rays) throw SchemaError("demonstration ray count does not match the environment");
    if (d.success) count += d.steps.size();
  }
  if (count == 0) throw ConfigError("training needs at least one successful demonstration");
  const auto dim = static_cast<Eigen::Index>(env_.feature_size());
  demo_obs_.resize(dim, static_cast<Eigen::Index>(count));
  demo_actions_.resize(kActionDim, static_cast<Eigen::Index>(count));
  Eigen::Index col = 0;
  for (const auto& d : demos) {
    if (!d.success) continue;
    for (const auto& s : d.steps) {
      demo_obs_.col(col) = to_vector(s.obs.features(feature_scale_));
      demo_actions_.col(col) = codec_.encode(s.action);
      ++col;
    }
  }
  if (!demo_obs_.allFinite()) throw SchemaError("demonstration contains non-finite observations");

  std::mt19937_64 init(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  const int d = static_cast<int>(dim);
  nets_.policy = GaussianPolicy(d, cfg_.hidden_units, cfg_.num_layers, cfg_.init_log_std, init);
  std::vector<int> vsizes{d};
  for (int l = 0; l < cfg_.num_layers; ++l) vsizes.push_back(cfg_.hidden_units);
  std::vector<int> dsizes = vsizes;
  dsizes.front() = d + kActionDim;
  vsizes.push_back(kValueHeads);
  dsizes.push_back(1);
  nets_.value = Mlp(vsizes, init);
  nets_.disc = Mlp(dsizes, init);
  nets_.curiosity = Curiosity(d, cfg_.curiosity_features, cfg_.hidden_units, init);

  for (Adam* a : {&opt_.policy_mean, &opt_.policy_log_std, &opt_.value, &opt_.disc, &opt_.encoder, &opt_.forward,
                  &opt_.inverse}) {
    a->learning_rate = cfg_.learning_rate;
  }
  curriculum_ = CurriculumState::start(cfg_.curriculum, env_.config().catheter.theta_max);
}

LearnedPolicy Trainer::policy(bool greedy) const { return LearnedPolicy(nets_.policy, codec_, feature_scale_, greedy); }

TrainLogRow Trainer::iterate() {
  const auto n = static_cast<std::size_t>(cfg_.buffer_size);
  const auto dim = static_cast<Eigen::Index>(env_.feature_size());
  const auto cols = static_cast<Eigen::Index>(n);
  Matrix obs(dim, cols), next_obs(dim, cols), z(kActionDim, cols), actions(kActionDim, cols);
  Vector log_prob(cols), r_ext(cols);
  std::vector<bool> terminated(n, false), done(n, false);
  std::vector<double> episode_rewards;
  int successes = 0;

  applied_.clear();
  applied_.reserve(n);
  env_.set_theta_max(curriculum_.current_theta_max);
  Observation o = env_.reset(rng_);
  double episode_reward = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto c = static_cast<Eigen::Index>(t);
    obs.col(c) = to_vector(o.features(feature_scale_));
    const PolicySample s = sample_policy(nets_.policy, obs.col(c), rng_, false);
    const StepResult sr = env_.step(codec_.decode(s.squashed));
    applied_.push_back({sr.applied, env_.theta_max()});
    ++env_steps_;
    z.col(c) = s.z;
    log_prob[c] = s.log_prob;
    actions.col(c) = codec_.encode(sr.applied);
    r_ext[c] = sr.reward;
    next_obs.col(c) = to_vector(sr.observation.features(feature_scale_));
    episode_reward += sr.reward;
    if (sr.done()) {
      done[t] = true;
      terminated[t] = sr.termination != Termination::step_limit;
      episode_rewards.push_back(episode_reward);
      if (sr.termination == Termination::target) ++successes;
      curriculum_ = curriculum_update(curriculum_, episode_reward);
      episode_reward = 0.0;
      env_.set_theta_max(curriculum_.current_theta_max);
      o = env_.reset(rng_);
    } else {
      o = sr.observation;
    }
  }
  if (!done.empty()) done.back() = true;

  // Reward heads: extrinsic, GAIL, curiosity. Disabled heads contribute
  // neither advantage nor value targets.
  const bool use_gail = cfg_.lambda > 0.0;
  const bool use_curiosity = cfg_.nu > 0.0;
  Matrix rewards = Matrix::Zero(kValueHeads, cols);
  rewards.row(0) = r_ext.transpose();
  if (use_gail) rewards.row(1) = gail_rewards(nets_.disc, disc_inputs(obs, actions)).transpose();
  if (use_curiosity) {
    rewards.row(2) =
        curiosity_losses(nets_.curiosity, obs, actions, next_obs, cfg_.curiosity_strength).intrinsic.transpose();
  }
  const Matrix values = nets_.value.forward(obs);
  const Matrix next_values = nets_.value.forward(next_obs);
  const double gammas[kValueHeads] = {cfg_.ppo_gamma, cfg_.gail_gamma, cfg_.curiosity_gamma};
  const double head_weight[kValueHeads] = {1.0, use_gail ? 1.0 : 0.0, use_curiosity ? 1.0 : 0.0};
  Matrix returns = Matrix::Zero(kValueHeads, cols);
  Vector advantages = Vector::Zero(cols);
  for (int h = 0; h < kValueHeads; ++h) {
    if (head_weight[h] == 0.0) continue;
    double last = 0.0;
    for (std::size_t t = n; t-- > 0;) {
      const auto c = static_cast<Eigen::Index>(t);
      const double bootstrap = terminated[t] ? 0.0 : next_values(h, c);
      const double delta = rewards(h, c) + gammas[h] * bootstrap - values(h, c);
      last = delta + gammas[h] * cfg_.gae_lambda * (done[t] ? 0.0 : last);
      advantages[c] += head_weight[h] * last;
      returns(h, c) = last + values(h, c);
    }
  }
  const double adv_mean = advantages.mean();
  const double adv_std = std::sqrt((advantages.array() - adv_mean).square().mean());
  advantages = (advantages.array() - adv_mean) / (adv_std + 1e-8);

  const double w_ppo = cfg_.kappa * (1.0 - cfg_.mu);
  const double w_bc = cfg_.kappa * cfg_.mu;
  const PpoSettings settings{cfg_.clip_ratio, cfg_.ppo_beta};
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  std::vector<std::size_t> perm(n);
  std::vector<std::size_t> demo_idx(batch);
  std::uniform_int_distribution<std::size_t> pick_demo(0, static_cast<std::size_t>(demo_obs_.cols()) - 1);
  LossTerms sums;
  int updates = 0;
  for (int epoch = 0; epoch < cfg_.num_epoch; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng_);
    for (std::size_t begin = 0; begin + batch <= n; begin += batch) {
      PpoBatch b{gather(obs, perm, begin, batch), gather(z, perm, begin, batch), gather(log_prob, perm, begin, batch),
                 gather(advantages, perm, begin, batch), gather(returns, perm, begin, batch)};
      for (auto& i : demo_idx) i = pick_demo(rng_);
      const Matrix d_obs = gather(demo_obs_, demo_idx, 0, batch);
      const Matrix d_act = gather(demo_actions_, demo_idx, 0, batch);

      PolicyGrad pg;
      Vector vg;
      const PpoTerms ppo = ppo_loss(b, nets_.policy, nets_.value, settings, &pg, &vg);
      Vector mean_grad = w_ppo * pg.mean;
      Vector log_std_grad = w_ppo * pg.log_std;
      double bc = 0.0;
      if (w_bc > 0.0) {
        PolicyGrad bg;
        bc = bc_loss(nets_.policy, d_obs, d_act, &bg);
        mean_grad += w_bc * bg.mean;
      }
      double gail = 0.0;
      if (use_gail) {
        gail = gail_update(nets_.disc, opt_.disc, disc_inputs(b.obs, gather(actions, perm, begin, batch)),
                           disc_inputs(d_obs, d_act), cfg_.lambda);
      }
      double cur = 0.0;
      if (use_curiosity) {
        CuriosityGrad cg;
        cur = curiosity_losses(nets_.curiosity, b.obs, gather(actions, perm, begin, batch),
                               gather(next_obs, perm, begin, batch), cfg_.curiosity_strength, &cg)
                  .total;
        opt_.encoder.step(nets_.curiosity.encoder.params(), cfg_.nu * cg.encoder);
        opt_.forward.step(nets_.curiosity.forward.params(), cfg_.nu * cg.forward);
        opt_.inverse.step(nets_.curiosity.inverse.params(), cfg_.nu * cg.inverse);
      }
      if (!std::isfinite(ppo.total) || !std::isfinite(bc) || !std::isfinite(gail) || !std::isfinite(cur) ||
          !mean_grad.allFinite() || !vg.allFinite()) {
        throw TrainingDiverged("non-finite loss at iteration " + std::to_string(iteration_ + 1));
      }
      opt_.policy_mean.step(nets_.policy.mean.params(), mean_grad);
      if (w_ppo > 0.0) opt_.policy_log_std.step(nets_.policy.log_std, log_std_grad);
      opt_.value.step(nets_.value.params(), vg);
      sums.ppo += ppo.total;
      sums.bc += bc;
      sums.gail += gail;
      sums.curiosity += cur;
      ++updates;
    }
  }

  ++iteration_;
  TrainLogRow row;
  row.iteration = iteration_;
  row.env_steps = env_steps_;
  row.episodes = static_cast<int>(episode_rewards.size());
  if (!episode_rewards.empty()) {
    row.mean_reward = std::accumulate(episode_rewards.begin(), episode_rewards.end(), 0.0) / row.episodes;
    row.success_rate = static_cast<double>(successes) / row.episodes;
  }
  const double u = std::max(updates, 1);
  row.L_PPO = sums.ppo / u;
  row.L_GAIL = sums.gail / u;
  row.L_BC = sums.bc / u;
  row.L_curiosity = sums.curiosity / u;
  row.theta_max_current = curriculum_.current_theta_max;
  return row;
}

std::vector<TrainLogRow> Trainer::run(const std::function<void(const TrainLogRow&)>& on_iteration) {
  std::vector<TrainLogRow> rows;
  while (!done()) {
    rows.push_back(iterate());
    if (on_iteration) on_iteration(rows.back());
  }
  return rows;
}

std::string Trainer::checkpoint_json() const {
  std::ostringstream rng_state;
  rng_state << rng_;
  json window = json::array();
  for (double w : curriculum_.window) window.push_back(w);
  json j = {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"schema_hash", schema_hash_},
            {"scenario_hash", scenario_hash_},
            {"config_hash", cfg_.hash()},
            {"config", json::parse(cfg_.to_json())},
            {"feature_scale", feature_scale_},
            {"codec", {{"bend_scale", codec_.bend_scale}, {"max_insertion", codec_.max_insertion}}},
            {"networks",
             {{"policy", policy_json(nets_.policy)},
              {"value", mlp_json(nets_.value)},
              {"disc", mlp_json(nets_.disc)},
              {"encoder", mlp_json(nets_.curiosity.encoder)},
              {"forward", mlp_json(nets_.curiosity.forward)},
              {"inverse", mlp_json(nets_.curiosity.inverse)}}},
            {"optimizers",
             {{"policy_mean", adam_json(opt_.policy_mean)},
              {"policy_log_std", adam_json(opt_.policy_log_std)},
              {"value", adam_json(opt_.value)},
              {"disc", adam_json(opt_.disc)},
              {"encoder", adam_json(opt_.encoder)},
              {"forward", adam_json(opt_.forward)},
              {"inverse", adam_json(opt_.inverse)}}},
            {"rng", rng_state.str()},
            {"curriculum",
             {{"lesson", curriculum_.lesson},
              {"current", curriculum_.current_theta_max},
              {"final", curriculum_.final_theta_max},
              {"window", window}}},
            {"iteration", iteration_},
            {"env_steps", env_steps_}};
  return j.dump();
}

void Trainer::check_compatible(const std::string& text, bool require_same_config) const {
  const CheckpointInfo info = read_checkpoint_info(text);
  if (info.schema_hash != schema_hash_) {
    throw HashMismatch("checkpoint schema hash " + info.schema_hash + " does not match " + schema_hash_);
  }
  if (require_same_config && info.config_hash != cfg_.hash()) {
    throw HashMismatch("checkpoint config hash " + info.config_hash + " does not match " + cfg_.hash());
  }
}

void Trainer::load_weights(const std::string& text) {
  check_compatible(text, false);
  const json j = parse_checkpoint(text);
  try {
    const auto& n = j.at("networks");
    mlp_load(nets_.policy.mean, n.at("policy").at("mean"), "policy");
    const Vector log_std = vector_from(n.at("policy").at("log_std"));
    if (log_std.size() != nets_.policy.log_std.size()) throw SchemaError("checkpoint log_std has the wrong size");
    nets_.policy.log_std = log_std;
    mlp_load(nets_.value, n.at("value"), "value");
    mlp_load(nets_.disc, n.at("disc"), "disc");
    mlp_load(nets_.curiosity.encoder, n.at("encoder"), "encoder");
    mlp_load(nets_.curiosity.forward, n.at("forward"), "forward");
    mlp_load(nets_.curiosity.inverse, n.at("inverse"), "inverse");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

void Trainer::restore(const std::string& text) {
  check_compatible(text, true);
  load_weights(text);
  const json j = parse_checkpoint(text);
  try {
    const auto& o = j.at("optimizers");
    opt_.policy_mean = adam_from(o.at("policy_mean"));
    opt_.policy_log_std = adam_from(o.at("policy_log_std"));
    opt_.value = adam_from(o.at("value"));
    opt_.disc = adam_from(o.at("disc"));
    opt_.encoder = adam_from(o.at("encoder"));
    opt_.forward = adam_from(o.at("forward"));
    opt_.inverse = adam_from(o.at("inverse"));
    std::istringstream rng_state(j.at("rng").get<std::string>());
    rng_state >> rng_;
    if (!rng_state) throw SchemaError("checkpoint: malformed rng state");
    const auto& c = j.at("curriculum");
    curriculum_.lesson = c.at("lesson").get<int>();
    curriculum_.current_theta_max = c.at("current").get<double>();
    curriculum_.final_theta_max = c.at("final").get<double>();
    curriculum_.window.clear();
    for (double w : c.at("window").get<std::vector<double>>()) curriculum_.window.push_back(w);
    iteration_ = j.at("iteration").get<long>();
    env_steps_ = j.at("env_steps").get<long>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace cathnav
