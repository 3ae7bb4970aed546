#include "cathnav/learner.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cathnav {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

ActionCodec ActionCodec::for_spec(const CatheterSpec& spec, double factor) {
  spec.validate();
  if (!(factor > 0.0)) throw ConfigError("action codec factor must be > 0");
  ActionCodec c;
  c.max_insertion = spec.max_insertion();
  c.bend_scale = factor * max_bend_at_step(spec, c.max_insertion);
  return c;
}

Action ActionCodec::decode(const Vector& s) const {
  return {s[0] * bend_scale, s[1] * bend_scale, 0.5 * (s[2] + 1.0) * max_insertion};
}

Vector ActionCodec::encode(const Action& a) const {
  Vector s(3);
  s[0] = std::clamp(a.alpha / bend_scale, -1.0, 1.0);
  s[1] = std::clamp(a.gamma / bend_scale, -1.0, 1.0);
  s[2] = std::clamp(2.0 * a.insertion / max_insertion - 1.0, -1.0, 1.0);
  return s;
}

GaussianPolicy::GaussianPolicy(int obs_dim, int hidden, int layers, double init_log_std, std::mt19937_64& rng) {
  std::vector<int> sizes{obs_dim};
  for (int l = 0; l < layers; ++l) sizes.push_back(hidden);
  sizes.push_back(kActionDim);
  mean = Mlp(sizes, rng, 0.1);
  log_std = Vector::Constant(kActionDim, init_log_std);
}

double gaussian_log_prob(const Vector& z, const Vector& mu, const Vector& log_std) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < z.size(); ++d) {
    const double s = std::exp(log_std[d]);
    const double u = (z[d] - mu[d]) / s;
    lp += -0.5 * u * u - log_std[d] - 0.5 * kLog2Pi;
  }
  return lp;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

PolicySample sample_policy(const GaussianPolicy& policy, const Vector& features, std::mt19937_64& rng, bool greedy) {
  const Vector mu = policy.mean.forward(features);
  if (!mu.allFinite() || !policy.log_std.allFinite()) throw TrainingDiverged("policy produced a non-finite output");
  PolicySample s;
  s.z = mu;
  if (!greedy) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index d = 0; d < s.z.size(); ++d) s.z[d] += std::exp(policy.log_std[d]) * n01(rng);
  }
  s.squashed = s.z.array().tanh();
  s.log_prob = gaussian_log_prob(s.z, mu, policy.log_std);
  return s;
}

Action policy_act(const GaussianPolicy& policy, const ActionCodec& codec, const Observation& obs, double feature_scale,
                  std::mt19937_64& rng, bool greedy) {
  const auto f = obs.features(feature_scale);
  for (double x : f) {
    if (!std::isfinite(x)) throw ContractViolation("policy_act: non-finite observation");
  }
  return codec.decode(sample_policy(policy, to_vector(f), rng, greedy).squashed);
}

PpoTerms ppo_loss(const PpoBatch& batch, const GaussianPolicy& policy, const Mlp& value, const PpoSettings& settings,
                  PolicyGrad* policy_grad, Vector* value_grad) {
  const Eigen::Index n = batch.obs.cols();
  if (n == 0) throw ContractViolation("ppo_loss: empty batch");
  Mlp::Tape tape;
  const Matrix mu = policy.mean.forward(batch.obs, policy_grad ? &tape : nullptr);
  const Vector sigma = policy.log_std.array().exp();

  PpoTerms t;
  Matrix g_mu = Matrix::Zero(mu.rows(), n);
  Vector g_log_std = Vector::Zero(policy.log_std.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    const Vector diff = batch.z.col(b) - mu.col(b);
    double lp = 0.0;
    for (Eigen::Index d = 0; d < diff.size(); ++d) {
      const double u = diff[d] / sigma[d];
      lp += -0.5 * u * u - policy.log_std[d] - 0.5 * kLog2Pi;
    }
    const double ratio = std::exp(lp - batch.old_log_prob[b]);
    const double a = batch.advantages[b];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - settings.clip_ratio, 1.0 + settings.clip_ratio) * a;
    t.surrogate -= std::min(unclipped, clipped);
    if (unclipped <= clipped) {
      const double dlp = -ratio * a / static_cast<double>(n);
      for (Eigen::Index d = 0; d < diff.size(); ++d) {
        g_mu(d, b) += dlp * diff[d] / (sigma[d] * sigma[d]);
        g_log_std[d] += dlp * (diff[d] * diff[d] / (sigma[d] * sigma[d]) - 1.0);
      }
    }
  }
  t.surrogate /= static_cast<double>(n);
  t.entropy = policy.log_std.sum() + 0.5 * static_cast<double>(policy.log_std.size()) * (kLog2Pi + 1.0);
  g_log_std.array() -= settings.beta;

  Mlp::Tape vtape;
  const Matrix v = value.forward(batch.obs, value_grad ? &vtape : nullptr);
  const Matrix verr = v - batch.returns;
  const double count = static_cast<double>(verr.size());
  t.value = verr.squaredNorm() / count;
  t.total = t.surrogate + t.value - settings.beta * t.entropy;

  if (policy_grad) {
    *policy_grad = PolicyGrad::zeros_like(policy);
    policy.mean.backward(tape, g_mu, policy_grad->mean);
    policy_grad->log_std = g_log_std;
  }
  if (value_grad) {
    *value_grad = Vector::Zero(value.params().size());
    value.backward(vtape, (2.0 / count) * verr, *value_grad);
  }
  return t;
}

double bc_loss(const GaussianPolicy& policy, const Matrix& demo_obs, const Matrix& demo_actions, PolicyGrad* grad) {
  const Eigen::Index n = demo_obs.cols();
  if (n == 0) throw ContractViolation("bc_loss: empty batch");
  Mlp::Tape tape;
  const Matrix mu = policy.mean.forward(demo_obs, grad ? &tape : nullptr);
  const Matrix t = mu.array().tanh();
  const Matrix err = t - demo_actions;
  const double count = static_cast<double>(err.size());
  const double loss = err.squaredNorm() / count;
  if (grad) {
    *grad = PolicyGrad::zeros_like(policy);
    const Matrix g = (2.0 / count) * err.cwiseProduct((1.0 - t.array().square()).matrix());
    policy.mean.backward(tape, g, grad->mean);
  }
  return loss;
}

Matrix disc_inputs(const Matrix& obs, const Matrix& actions) {
  if (obs.cols() != actions.cols()) throw ContractViolation("disc_inputs: column count mismatch");
  Matrix x(obs.rows() + actions.rows(), obs.cols());
  x.topRows(obs.rows()) = obs;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

Vector disc_prob(const Mlp& disc, const Matrix& inputs) {
  const Matrix f = disc.forward(inputs);
  Vector p(f.cols());
  for (Eigen::Index i = 0; i < f.cols(); ++i) p[i] = std::clamp(sigmoid(f(0, i)), 1e-15, 1.0 - 1e-15);
  return p;
}

double gail_loss(const Mlp& disc, const Matrix& policy_inputs, const Matrix& demo_inputs, Vector* grad) {
  const Eigen::Index np = policy_inputs.cols();
  const Eigen::Index ne = demo_inputs.cols();
  if (np == 0 || ne == 0) throw ContractViolation("gail_loss: empty batch");
  Mlp::Tape tp, te;
  const Matrix fp = disc.forward(policy_inputs, grad ? &tp : nullptr);
  const Matrix fe = disc.forward(demo_inputs, grad ? &te : nullptr);
  double lp = 0.0, le = 0.0;
  for (Eigen::Index i = 0; i < np; ++i) lp += softplus(fp(0, i));
  for (Eigen::Index i = 0; i < ne; ++i) le += softplus(-fe(0, i));
  const double loss = 0.5 * (lp / np + le / ne);
  if (grad) {
    *grad = Vector::Zero(disc.params().size());
    Matrix gp(1, np), ge(1, ne);
    for (Eigen::Index i = 0; i < np; ++i) gp(0, i) = 0.5 * sigmoid(fp(0, i)) / np;
    for (Eigen::Index i = 0; i < ne; ++i) ge(0, i) = 0.5 * (sigmoid(fe(0, i)) - 1.0) / ne;
    disc.backward(tp, gp, *grad);
    disc.backward(te, ge, *grad);
  }
  return loss;
}

double gail_update(Mlp& disc, Adam& opt, const Matrix& policy_inputs, const Matrix& demo_inputs, double weight) {
  Vector g;
  const double loss = gail_loss(disc, policy_inputs, demo_inputs, &g);
  if (weight != 1.0) g *= weight;
  opt.step(disc.params(), g);
  return loss;
}

double gail_reward_from_prob(double d) { return -std::log(1.0 - std::clamp(d, 1e-7, 1.0 - 1e-7)); }

double gail_reward(const Mlp& disc, const Vector& input) {
  return gail_reward_from_prob(disc_prob(disc, input)[0]);
}

Vector gail_rewards(const Mlp& disc, const Matrix& inputs) {
  Vector p = disc_prob(disc, inputs);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = gail_reward_from_prob(p[i]);
  return p;
}

Curiosity::Curiosity(int obs_dim, int features, int hidden, std::mt19937_64& rng)
    : encoder({obs_dim, hidden, features}, rng),
      forward({features + kActionDim, hidden, features}, rng),
      inverse({2 * features, hidden, kActionDim}, rng) {}

double forward_loss(const Matrix& predicted, const Matrix& actual) {
  if (predicted.cols() == 0) return 0.0;
  return 0.5 * (predicted - actual).squaredNorm() / static_cast<double>(predicted.cols());
}

double inverse_loss(const Matrix& predicted, const Matrix& actual) {
  if (predicted.size() == 0) return 0.0;
  return (predicted - actual).squaredNorm() / static_cast<double>(predicted.size());
}

CuriosityTerms curiosity_losses(const Curiosity& c, const Matrix& obs, const Matrix& actions, const Matrix& next_obs,
                                double reward_scale, CuriosityGrad* grad) {
  const Eigen::Index n = obs.cols();
  if (n == 0) throw ContractViolation("curiosity_losses: empty batch");
  const bool g = grad != nullptr;
  Mlp::Tape t_phi, t_next, t_fwd, t_inv;
  const Matrix phi = c.encoder.forward(obs, g ? &t_phi : nullptr);
  const Matrix phi_next = c.encoder.forward(next_obs, g ? &t_next : nullptr);
  const Matrix fwd_in = disc_inputs(phi, actions);
  Matrix inv_in(2 * phi.rows(), n);
  inv_in.topRows(phi.rows()) = phi;
  inv_in.bottomRows(phi.rows()) = phi_next;
  const Matrix phi_hat = c.forward.forward(fwd_in, g ? &t_fwd : nullptr);
  const Matrix a_hat = c.inverse.forward(inv_in, g ? &t_inv : nullptr);

  CuriosityTerms t;
  t.forward = forward_loss(phi_hat, phi_next);
  t.inverse = inverse_loss(a_hat, actions);
  t.total = c.inverse_weight * t.inverse + c.forward_weight * t.forward;
  t.intrinsic = reward_scale * 0.5 * (phi_hat - phi_next).colwise().squaredNorm().transpose();

  if (g) {
    *grad = CuriosityGrad::zeros_like(c);
    const double nn = static_cast<double>(n);
    const Matrix d_fwd = (c.forward_weight / nn) * (phi_hat - phi_next);
    const Matrix d_inv = (c.inverse_weight * 2.0 / static_cast<double>(a_hat.size())) * (a_hat - actions);
    const Matrix g_fwd_in = c.forward.backward(t_fwd, d_fwd, grad->forward);
    const Matrix g_inv_in = c.inverse.backward(t_inv, d_inv, grad->inverse);
    const Eigen::Index f = phi.rows();
    const Matrix g_phi = g_fwd_in.topRows(f) + g_inv_in.topRows(f);
    const Matrix g_phi_next = -d_fwd + g_inv_in.bottomRows(f);
    c.encoder.backward(t_phi, g_phi, grad->encoder);
    c.encoder.backward(t_next, g_phi_next, grad->encoder);
  }
  return t;
}

void CurriculumConfig::validate() const {
  if (!(initial_factor >= 1.0)) throw ConfigError("curriculum initial_factor must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("curriculum decay must lie in (0, 1]");
  if (window < 1) throw ConfigError("curriculum window must be >= 1");
  if (thresholds.empty()) throw ConfigError("curriculum needs at least one threshold");
  for (double t : thresholds) {
    if (!std::isfinite(t)) throw ConfigError("curriculum thresholds must be finite");
  }
}

CurriculumState CurriculumState::start(const CurriculumConfig& cfg, double physical_theta_max) {
  cfg.validate();
  CurriculumState s;
  s.final_theta_max = physical_theta_max;
  s.current_theta_max = cfg.initial_factor * physical_theta_max;
  s.window_size = static_cast<std::size_t>(cfg.window);
  s.thresholds = cfg.thresholds;
  s.decay = cfg.decay;
  return s;
}

double CurriculumState::threshold() const {
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(lesson), thresholds.size() - 1);
  return thresholds[i];
}

CurriculumState curriculum_update(CurriculumState s, double episode_reward) {
  s.window.push_back(episode_reward);
  while (s.window.size() > s.window_size) s.window.pop_front();
  if (s.window.size() < s.window_size || !(s.current_theta_max > s.final_theta_max)) return s;
  const double mean = std::accumulate(s.window.begin(), s.window.end(), 0.0) / static_cast<double>(s.window.size());
  if (mean >= s.threshold()) {
    ++s.lesson;
    s.current_theta_max = std::max(s.final_theta_max, s.decay * s.current_theta_max);
    s.window.clear();
  }
  return s;
}

void TrainConfig::validate() const {
  if (!(kappa >= 0.0 && lambda >= 0.0 && nu >= 0.0)) throw ConfigError("kappa, lambda and nu must be >= 0");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0, 1]");
  if (!(ppo_beta >= 0.0)) throw ConfigError("ppo_beta must be >= 0");
  for (double g : {ppo_gamma, gail_gamma, curiosity_gamma, gae_lambda}) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("discount factors must lie in [0, 1]");
  }
  if (!(clip_ratio > 0.0)) throw ConfigError("clip_ratio must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (batch_size < 1 || buffer_size < 1) throw ConfigError("batch_size and buffer_size must be >= 1");
  if (buffer_size % batch_size != 0) throw ConfigError("buffer_size must be a multiple of batch_size");
  if (num_epoch < 1) throw ConfigError("num_epoch must be >= 1");
  if (hidden_units < 1 || num_layers < 1) throw ConfigError("hidden_units and num_layers must be >= 1");
  if (curiosity_features < 1) throw ConfigError("curiosity_features must be >= 1");
  if (!(curiosity_strength >= 0.0)) throw ConfigError("curiosity_strength must be >= 0");
  if (!std::isfinite(init_log_std)) throw ConfigError("init_log_std must be finite");
  curriculum.validate();
}

namespace {

nlohmann::json config_json(const TrainConfig& c, bool include_budget) {
  nlohmann::json j = {{"kappa", c.kappa},
                      {"lambda", c.lambda},
                      {"mu", c.mu},
                      {"nu", c.nu},
                      {"ppo_beta", c.ppo_beta},
                      {"ppo_gamma", c.ppo_gamma},
                      {"gail_gamma", c.gail_gamma},
                      {"curiosity_gamma", c.curiosity_gamma},
                      {"gae_lambda", c.gae_lambda},
                      {"clip_ratio", c.clip_ratio},
                      {"learning_rate", c.learning_rate},
                      {"batch_size", c.batch_size},
                      {"buffer_size", c.buffer_size},
                      {"num_epoch", c.num_epoch},
                      {"hidden_units", c.hidden_units},
                      {"num_layers", c.num_layers},
                      {"curiosity_features", c.curiosity_features},
                      {"curiosity_strength", c.curiosity_strength},
                      {"init_log_std", c.init_log_std},
                      {"seed", c.seed},
                      {"curriculum",
                       {{"initial_factor", c.curriculum.initial_factor},
                        {"decay", c.curriculum.decay},
                        {"window", c.curriculum.window},
                        {"thresholds", c.curriculum.thresholds}}}};
  if (include_budget) j["max_steps"] = c.max_steps;
  return j;
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train config field '") + key + "': " + e.what());
    }
  }
}

}  // namespace

std::string TrainConfig::to_json() const { return config_json(*this, true).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("train config: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  static const std::vector<std::string> known = {
      "kappa",       "lambda",          "mu",           "nu",         "ppo_beta",           "ppo_gamma",
      "gail_gamma",  "curiosity_gamma", "gae_lambda",   "clip_ratio", "learning_rate",      "max_steps",
      "batch_size",  "buffer_size",     "num_epoch",    "hidden_units", "num_layers",       "curiosity_features",
      "curiosity_strength", "init_log_std", "seed",     "curriculum"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("train config: unknown field '" + it.key() + "'");
    }
  }
  TrainConfig c;
  read_key(j, "kappa", c.kappa);
  read_key(j, "lambda", c.lambda);
  read_key(j, "mu", c.mu);
  read_key(j, "nu", c.nu);
  read_key(j, "ppo_beta", c.ppo_beta);
  read_key(j, "ppo_gamma", c.ppo_gamma);
  read_key(j, "gail_gamma", c.gail_gamma);
  read_key(j, "curiosity_gamma", c.curiosity_gamma);
  read_key(j, "gae_lambda", c.gae_lambda);
  read_key(j, "clip_ratio", c.clip_ratio);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "max_steps", c.max_steps);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "buffer_size", c.buffer_size);
  read_key(j, "num_epoch", c.num_epoch);
  read_key(j, "hidden_units", c.hidden_units);
  read_key(j, "num_layers", c.num_layers);
  read_key(j, "curiosity_features", c.curiosity_features);
  read_key(j, "curiosity_strength", c.curiosity_strength);
  read_key(j, "init_log_std", c.init_log_std);
  read_key(j, "seed", c.seed);
  if (auto it = j.find("curriculum"); it != j.end()) {
    read_key(*it, "initial_factor", c.curriculum.initial_factor);
    read_key(*it, "decay", c.curriculum.decay);
    read_key(*it, "window", c.curriculum.window);
    read_key(*it, "thresholds", c.curriculum.thresholds);
  }
  c.validate();
  return c;
}

std::string TrainConfig::hash() const { return hash_to_hex(fnv1a64(config_json(*this, false).dump())); }

double total_loss(const LossTerms& t, const TrainConfig& c) {
  return c.kappa * (1.0 - c.mu) * t.ppo + c.lambda * t.gail + c.kappa * c.mu * t.bc + c.nu * t.curiosity;
}

std::string train_log_header() {
  return "iteration,env_steps,mean_reward,success_rate,L_PPO,L_GAIL,L_BC,L_curiosity,theta_max_current";
}

std::string train_log_line(const TrainLogRow& r) {
  std::ostringstream os;
  os << std::setprecision(12) << r.iteration << ',' << r.env_steps << ',' << r.mean_reward << ',' << r.success_rate
     << ',' << r.L_PPO << ',' << r.L_GAIL << ',' << r.L_BC << ',' << r.L_curiosity << ',' << r.theta_max_current;
  return os.str();
}

std::vector<TrainLogRow> parse_train_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TrainLogRow> rows;
  std::uint64_t offset = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const auto start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != train_log_header()) throw ParseError("training log: unexpected header", start);
      header = false;
      continue;
    }
    std::vector<double> v;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("training log: bad number '" + cell + "'", start);
      }
    }
    if (v.size() != 9) throw ParseError("training log: expected 9 columns", start);
    TrainLogRow r;
    r.iteration = static_cast<long>(v[0]);
    r.env_steps = static_cast<long>(v[1]);
    r.mean_reward = v[2];
    r.success_rate = v[3];
    r.L_PPO = v[4];
    r.L_GAIL = v[5];
    r.L_BC = v[6];
    r.L_curiosity = v[7];
    r.theta_max_current = v[8];
    rows.push_back(r);
  }
  return rows;
}

LearnedPolicy::LearnedPolicy(GaussianPolicy policy, ActionCodec codec, double feature_scale, bool greedy)
    : policy_(std::move(policy)), codec_(codec), feature_scale_(feature_scale), greedy_(greedy) {}

Action LearnedPolicy::act(const Observation& obs, std::mt19937_64& rng) {
  return policy_act(policy_, codec_, obs, feature_scale_, rng, greedy_);
}

}  // namespace cathnav
