#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "losses.hpp"
#include "transformer.hpp"

namespace pprl {

struct Transition {
  PointCloud obs;
  std::optional<std::vector<double>> state;
  std::vector<double> action;  // each component in [-1, 1]
  double reward = 0.0;
  bool done = false;  // genuine termination only, never timeout
  PointCloud next_obs;
  std::optional<std::vector<double>> next_state;
};

struct AgentConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 1e-4;
  double alpha_init = 0.1;
  double lr_alpha = 1e-4;
  std::size_t batch_size = 64;
  std::size_t replay_capacity = 100000;
  double replay_ratio = 1.0;  // gradient updates per environment step
  bool target_entropy_auto = true;  // -action_dim when automatic
  double target_entropy = 0.0;
  Eigen::Index hidden_width = 256;  // actor/critic layer width
  bool aux_enabled = true;
  double aux_weight = 1.0;
  double log_std_min = -10.0;
  double log_std_max = 2.0;
};

// Ring buffer over raw variable-size clouds; observations are compacted to
// float32 at push time and tokenized only when sampled.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  // Uniform with replacement over the current contents.
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

  // Logical index: 0 = oldest surviving transition.
  Transition get(std::size_t index) const;

  struct StoredCloud {
    bool has_colors = false;
    std::vector<float> data;  // xyz or xyzrgb interleaved

    PointCloud unpack() const;
    static StoredCloud pack(const PointCloud& cloud);
  };

  struct StoredTransition {
    StoredCloud obs, next_obs;
    std::vector<float> state, next_state;
    bool has_state = false;
    std::vector<float> action;
    float reward = 0.0f;
    std::uint8_t done = 0;
  };

  const StoredTransition& stored(std::size_t index) const;
  void push_stored(StoredTransition t);

 private:
  std::size_t capacity_;
  std::size_t start_ = 0;  // physical index of the oldest element
  std::vector<StoredTransition> items_;
};

struct MlpParams {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;

  static MlpParams create(ad::ParamSet& set, const std::string& prefix,
                          Eigen::Index in, Eigen::Index hidden,
                          Eigen::Index out, Rng& rng);
};

// Three ELU hidden layers, linear output.
ad::Tensor mlp_forward(const ad::Tensor& x, const MlpParams& mlp);

struct Agent {
  TokenizerConfig tok_cfg;
  EncoderConfig enc_cfg;
  AgentConfig cfg;
  Eigen::Index action_dim = 0;
  std::size_t n_centroids = 32;

  TokenizerParams tokenizer;
  TransformerParams transformer;
  MlpParams actor;
  MlpParams critic1, critic2;
  MlpParams target1, target2;
  ad::Tensor log_alpha;

  ad::ParamSet main_params;    // tokenizer + transformer + critics (one Adam)
  ad::ParamSet actor_params;
  ad::ParamSet alpha_params;
  ad::ParamSet target_params;  // tau-updated only, never optimized

  ad::Adam opt_main, opt_actor, opt_alpha;

  Rng rng_update;  // batch sampling, mask seeds, update-time noise
  Rng rng_action;  // action sampling while interacting
  std::uint64_t env_steps = 0;
  std::uint64_t update_steps = 0;

  static Agent create(const TokenizerConfig& tok, const EncoderConfig& enc,
                      const AgentConfig& cfg, std::size_t n_centroids,
                      Eigen::Index action_dim, std::uint64_t seed);

  double alpha() const { return std::exp(log_alpha.value()(0, 0)); }
  double target_entropy() const {
    return cfg.target_entropy_auto ? -static_cast<double>(action_dim)
                                   : cfg.target_entropy;
  }
  Eigen::Index fused_dim() const {
    return enc_cfg.state_dim > 0 ? 2 * enc_cfg.token_dim : enc_cfg.token_dim;
  }
};

// FPS + kNN grouping with the agent's centroid/patch configuration.
PatchSet patchify(const Agent& agent, const PointCloud& cloud,
                  std::uint64_t fps_seed);

// Tokenize + encode (RL mode) + state fusion for one observation.
ad::Tensor encode_fused(const Agent& agent, const PointCloud& obs,
                        const std::optional<std::vector<double>>& state,
                        std::uint64_t fps_seed);

struct ActorSample {
  ad::Tensor action;    // [B, A], tanh-squashed
  ad::Tensor log_prob;  // [B, 1], includes the tanh Jacobian correction
};

// Reparameterized Gaussian sample through tanh. The fused embedding must
// already be detached: no gradient may reach the encoder from actor losses.
ActorSample actor_forward(const Agent& agent, const ad::Tensor& fused, Rng& rng);
ad::Tensor actor_deterministic(const Agent& agent, const ad::Tensor& fused);
std::pair<ad::Tensor, ad::Tensor> actor_mean_logstd(const Agent& agent,
                                                    const ad::Tensor& fused);
// log pi(action | fused), evaluated at a given action (plain value).
double actor_log_prob_at(const Agent& agent, const ad::Tensor& fused,
                         const std::vector<double>& action);

ad::Tensor critic_forward(const MlpParams& critic, const ad::Tensor& fused,
                          const ad::Tensor& action);

// Bootstrap targets y = r + gamma * (1-done) * (min Q' - alpha * log pi'),
// computed without gradient tracking.
std::vector<double> critic_target_values(
    Agent& agent, const std::vector<ad::Tensor>& next_fused,
    const std::vector<double>& rewards, const std::vector<std::uint8_t>& dones);

// One environment action (no gradients recorded; consumes rng_action).
std::vector<double> agent_act(Agent& agent, const PointCloud& obs,
                              const std::optional<std::vector<double>>& state,
                              bool deterministic);

struct UpdateMetrics {
  bool skipped = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double aux_loss = 0.0;
  double alpha = 0.0;
  double alpha_loss = 0.0;
  double q_mean = 0.0;
};

// One SAC step: critic (+ auxiliary reconstruction) update into the shared
// encoder, actor update on detached embeddings, temperature update, then the
// tau-rule target sync.
UpdateMetrics update_step(Agent& agent, ReplayBuffer& buffer);

void soft_update_targets(Agent& agent);

}  // namespace pprl
