#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cathnav/demonstrations.hpp"
#include "cathnav/environment.hpp"
#include "cathnav/nn.hpp"

namespace cathnav {

inline constexpr int kActionDim = 3;
inline constexpr int kValueHeads = 3;  // extrinsic, GAIL, curiosity

/// Maps squashed network outputs in [-1, 1]^3 to environment actions and
/// back. Bends scale by `bend_scale`; insertion maps [-1, 1] onto
/// [0, max_insertion].
struct ActionCodec {
  double bend_scale = 0.0;
  double max_insertion = 0.0;

  /// bend_scale = factor * theta_max * max_insertion / L.
  static ActionCodec for_spec(const CatheterSpec& spec, double factor);

  Action decode(const Vector& squashed) const;
  /// Inverse of decode, clipped into [-1, 1].
  Vector encode(const Action& a) const;
};

/// Diagonal Gaussian over pre-squash actions: MLP mean plus a
/// state-independent log standard deviation.
struct GaussianPolicy {
  Mlp mean;
  Vector log_std;

  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, int hidden, int layers, double init_log_std, std::mt19937_64& rng);
};

struct PolicyGrad {
  Vector mean;
  Vector log_std;

  static PolicyGrad zeros_like(const GaussianPolicy& p) {
    return {Vector::Zero(p.mean.params().size()), Vector::Zero(p.log_std.size())};
  }
};

double gaussian_log_prob(const Vector& z, const Vector& mu, const Vector& log_std);

struct PolicySample {
  Vector z;         // pre-squash sample
  Vector squashed;  // tanh(z)
  double log_prob = 0.0;
};

/// Throws TrainingDiverged on a non-finite network output.
PolicySample sample_policy(const GaussianPolicy& policy, const Vector& features, std::mt19937_64& rng,
                           bool greedy);

/// Environment action before clamping.
Action policy_act(const GaussianPolicy& policy, const ActionCodec& codec, const Observation& obs, double feature_scale,
                  std::mt19937_64& rng, bool greedy = false);

Vector to_vector(const std::vector<double>& v);

struct PpoBatch {
  Matrix obs;             // features x B
  Matrix z;               // 3 x B
  Vector old_log_prob;    // B
  Vector advantages;      // B
  Matrix returns;         // heads x B
};

struct PpoSettings {
  double clip_ratio = 0.2;
  double beta = 5e-4;
};

struct PpoTerms {
  double surrogate = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double total = 0.0;  // surrogate + value - beta * entropy
};

/// Clipped surrogate + value MSE - beta * entropy. Gradients are written
/// (overwritten) when the pointers are non-null.
PpoTerms ppo_loss(const PpoBatch& batch, const GaussianPolicy& policy, const Mlp& value, const PpoSettings& settings,
                  PolicyGrad* policy_grad = nullptr, Vector* value_grad = nullptr);

/// Mean squared error between tanh(policy mean) and the normalized demo
/// actions, averaged over samples and action dimensions.
double bc_loss(const GaussianPolicy& policy, const Matrix& demo_obs, const Matrix& demo_actions,
               PolicyGrad* grad = nullptr);

/// Discriminator input: features stacked over normalized actions.
Matrix disc_inputs(const Matrix& obs, const Matrix& actions);

/// Sigmoid of the discriminator logits, one per column.
Vector disc_prob(const Mlp& disc, const Matrix& inputs);

/// Binary cross-entropy, demo pairs labelled 1 and policy pairs 0, each half
/// averaged over its own batch and the halves averaged.
double gail_loss(const Mlp& disc, const Matrix& policy_inputs, const Matrix& demo_inputs, Vector* grad = nullptr);

/// One optimizer step on gail_loss; returns the loss before the step.
double gail_update(Mlp& disc, Adam& opt, const Matrix& policy_inputs, const Matrix& demo_inputs, double weight = 1.0);

/// -ln(1 - D) with D clipped into [1e-7, 1 - 1e-7].
double gail_reward_from_prob(double d);
double gail_reward(const Mlp& disc, const Vector& input);
Vector gail_rewards(const Mlp& disc, const Matrix& inputs);

struct Curiosity {
  Mlp encoder;   // obs -> hidden -> features
  Mlp forward;   // [phi; action] -> hidden -> features
  Mlp inverse;   // [phi; phi_next] -> hidden -> action
  double inverse_weight = 0.8;
  double forward_weight = 0.2;

  Curiosity() = default;
  Curiosity(int obs_dim, int features, int hidden, std::mt19937_64& rng);
};

struct CuriosityGrad {
  Vector encoder;
  Vector forward;
  Vector inverse;

  static CuriosityGrad zeros_like(const Curiosity& c) {
    return {Vector::Zero(c.encoder.params().size()), Vector::Zero(c.forward.params().size()),
            Vector::Zero(c.inverse.params().size())};
  }
};

struct CuriosityTerms {
  double inverse = 0.0;
  double forward = 0.0;
  double total = 0.0;
  Vector intrinsic;  // per transition: scale * 1/2 |phi_hat - phi_next|^2
};

/// Mean of 1/2 |predicted - actual|^2 over columns.
double forward_loss(const Matrix& predicted, const Matrix& actual);
/// Mean squared error over all entries.
double inverse_loss(const Matrix& predicted, const Matrix& actual);

CuriosityTerms curiosity_losses(const Curiosity& c, const Matrix& obs, const Matrix& actions, const Matrix& next_obs,
                                double reward_scale, CuriosityGrad* grad = nullptr);

struct CurriculumConfig {
  double initial_factor = 2.0;  // first lesson bound, multiple of the physical limit
  double decay = 0.8;
  int window = 50;
  std::vector<double> thresholds{1.0};  // per lesson; the last value repeats

  void validate() const;
};

struct CurriculumState {
  int lesson = 0;
  double current_theta_max = 0.0;
  double final_theta_max = 0.0;
  std::deque<double> window;
  std::size_t window_size = 50;
  std::vector<double> thresholds{1.0};
  double decay = 0.8;

  static CurriculumState start(const CurriculumConfig& cfg, double physical_theta_max);
  double threshold() const;
};

/// Pushes the reward; when the window is full and its mean reaches the
/// lesson threshold, tightens the bound and starts a fresh window.
CurriculumState curriculum_update(CurriculumState state, double episode_reward);

struct TrainConfig {
  double kappa = 0.2;
  double lambda = 0.8;
  double mu = 0.7;
  double nu = 0.02;
  double ppo_beta = 5e-4;
  double ppo_gamma = 0.99;
  double gail_gamma = 0.99;
  double curiosity_gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double learning_rate = 3e-4;
  long max_steps = 500000;
  int batch_size = 1024;
  int buffer_size = 10240;
  int num_epoch = 3;
  int hidden_units = 64;
  int num_layers = 2;
  int curiosity_features = 32;
  double curiosity_strength = 0.01;
  double init_log_std = -0.5;
  std::uint64_t seed = 0;
  CurriculumConfig curriculum;

  /// Throws ConfigError.
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::string hash() const;
};

struct LossTerms {
  double ppo = 0.0;
  double gail = 0.0;
  double bc = 0.0;
  double curiosity = 0.0;
};

/// kappa (1 - mu) L_PPO + lambda L_GAIL + kappa mu L_BC + nu L_curiosity.
double total_loss(const LossTerms& terms, const TrainConfig& cfg);

struct TrainLogRow {
  long iteration = 0;
  long env_steps = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double L_PPO = 0.0;
  double L_GAIL = 0.0;
  double L_BC = 0.0;
  double L_curiosity = 0.0;
  double theta_max_current = 0.0;
  int episodes = 0;
};

std::string train_log_header();
std::string train_log_line(const TrainLogRow& row);
/// Parses a CSV log written with train_log_header / train_log_line.
std::vector<TrainLogRow> parse_train_log(const std::string& text);

struct Networks {
  GaussianPolicy policy;
  Mlp value;
  Mlp disc;
  Curiosity curiosity;
};

/// Policy loaded from a checkpoint, ready to drive an environment.
class LearnedPolicy : public Policy {
 public:
  LearnedPolicy(GaussianPolicy policy, ActionCodec codec, double feature_scale, bool greedy);
  Action act(const Observation& obs, std::mt19937_64& rng) override;

  const GaussianPolicy& network() const { return policy_; }
  const ActionCodec& codec() const { return codec_; }
  double feature_scale() const { return feature_scale_; }
  void set_greedy(bool g) { greedy_ = g; }

 private:
  GaussianPolicy policy_;
  ActionCodec codec_;
  double feature_scale_;
  bool greedy_;
};

struct CheckpointInfo {
  std::string schema_hash;
  std::string scenario_hash;
  std::string config_hash;
  TrainConfig config;
  long iteration = 0;
  long env_steps = 0;
};

CheckpointInfo read_checkpoint_info(const std::string& checkpoint_json);

/// Greedy or stochastic policy from a checkpoint. Throws HashMismatch when
/// `expected_schema_hash` is non-empty and differs.
LearnedPolicy load_policy(const std::string& checkpoint_json, const std::string& expected_schema_hash, bool greedy);

/// On-policy PPO + GAIL + BC + curiosity training loop over one environment.
/// Every iteration starts fresh episodes, so a checkpoint taken between
/// iterations resumes exactly.
class Trainer {
 public:
  Trainer(Environment& env, std::vector<Demonstration> demos, TrainConfig cfg, std::string scenario_hash = {});

  /// One rollout of buffer_size steps followed by num_epoch update passes.
  /// Throws TrainingDiverged on a non-finite loss.
  TrainLogRow iterate();
  bool done() const { return env_steps_ >= cfg_.max_steps; }
  std::vector<TrainLogRow> run(const std::function<void(const TrainLogRow&)>& on_iteration = {});

  std::string checkpoint_json() const;
  /// Full state: networks, optimizers, rng, curriculum, counters.
  void restore(const std::string& checkpoint_json);
  /// Network weights only (phase-2 initialization).
  void load_weights(const std::string& checkpoint_json);

  const Networks& networks() const { return nets_; }
  const CurriculumState& curriculum() const { return curriculum_; }
  const TrainConfig& config() const { return cfg_; }
  const ActionCodec& codec() const { return codec_; }
  long env_steps() const { return env_steps_; }
  long iteration() const { return iteration_; }
  LearnedPolicy policy(bool greedy) const;

  /// Actions applied during the most recent rollout, with the bend bound in
  /// force for each (for auditing the curriculum clamp).
  struct AppliedAction {
    Action action;
    double theta_max;
  };
  const std::vector<AppliedAction>& last_rollout_actions() const { return applied_; }

 private:
  struct Optimizers {
    Adam policy_mean, policy_log_std, value, disc, encoder, forward, inverse;
  };

  void check_compatible(const std::string& checkpoint_json, bool require_same_config) const;

  Environment& env_;
  TrainConfig cfg_;
  std::string schema_hash_;
  std::string scenario_hash_;
  ActionCodec codec_;
  double feature_scale_;
  Matrix demo_obs_;
  Matrix demo_actions_;
  Networks nets_;
  Optimizers opt_;
  CurriculumState curriculum_;
  std::mt19937_64 rng_;
  long env_steps_ = 0;
  long iteration_ = 0;
  std::vector<AppliedAction> applied_;
};

}  // namespace cathnav
