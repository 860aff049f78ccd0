#include "sac.hpp"

#include <cmath>

namespace pprl {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

std::vector<float> to_floats(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

std::vector<double> to_doubles(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

ReplayBuffer::StoredCloud ReplayBuffer::StoredCloud::pack(const PointCloud& cloud) {
  StoredCloud out;
  out.has_colors = cloud.has_colors();
  const std::size_t stride = out.has_colors ? 6 : 3;
  out.data.resize(cloud.size() * stride);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      out.data[i * stride + a] = static_cast<float>(cloud.positions[i][a]);
    }
    if (out.has_colors) {
      for (int a = 0; a < 3; ++a) {
        out.data[i * stride + 3 + a] = static_cast<float>((*cloud.colors)[i][a]);
      }
    }
  }
  return out;
}

PointCloud ReplayBuffer::StoredCloud::unpack() const {
  const std::size_t stride = has_colors ? 6 : 3;
  PointCloud cloud;
  const std::size_t n = data.size() / stride;
  cloud.positions.resize(n);
  if (has_colors) cloud.colors.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      cloud.positions[i][a] = data[i * stride + a];
    }
    if (has_colors) {
      for (int a = 0; a < 3; ++a) {
        (*cloud.colors)[i][a] = data[i * stride + 3 + a];
      }
    }
  }
  return cloud;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity >= 1, ErrorCode::invalid_argument,
          "ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  t.obs.validate();
  t.next_obs.validate();
  require(!t.action.empty(), ErrorCode::invalid_argument,
          "ReplayBuffer::push: empty action");
  for (const double a : t.action) {
    require(a >= -1.0 && a <= 1.0, ErrorCode::invalid_argument,
            "ReplayBuffer::push: action outside [-1,1]");
  }

  StoredTransition s;
  s.obs = StoredCloud::pack(t.obs);
  s.next_obs = StoredCloud::pack(t.next_obs);
  s.has_state = t.state.has_value();
  if (t.state) s.state = to_floats(*t.state);
  if (t.next_state) s.next_state = to_floats(*t.next_state);
  s.action = to_floats(t.action);
  s.reward = static_cast<float>(t.reward);
  s.done = t.done ? 1 : 0;
  push_stored(std::move(s));
}

void ReplayBuffer::push_stored(StoredTransition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[start_] = std::move(t);
    start_ = (start_ + 1) % capacity_;
  }
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count,
                                                      Rng& rng) const {
  require(!items_.empty(), ErrorCode::invalid_state,
          "ReplayBuffer::sample_indices: buffer is empty");
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = rng.index(items_.size());
  return out;
}

const ReplayBuffer::StoredTransition& ReplayBuffer::stored(
    std::size_t index) const {
  require(index < items_.size(), ErrorCode::invalid_argument,
          "ReplayBuffer::stored: index out of range");
  return items_[(start_ + index) % items_.size()];
}

Transition ReplayBuffer::get(std::size_t index) const {
  const StoredTransition& s = stored(index);
  Transition t;
  t.obs = s.obs.unpack();
  t.next_obs = s.next_obs.unpack();
  if (s.has_state) {
    t.state = to_doubles(s.state);
    t.next_state = to_doubles(s.next_state);
  }
  t.action = to_doubles(s.action);
  t.reward = s.reward;
  t.done = s.done != 0;
  return t;
}

MlpParams MlpParams::create(ad::ParamSet& set, const std::string& prefix,
                            Eigen::Index in, Eigen::Index hidden,
                            Eigen::Index out, Rng& rng) {
  MlpParams mlp;
  const Eigen::Index dims[] = {in, hidden, hidden, hidden, out};
  for (int l = 0; l < 4; ++l) {
    const std::string name = prefix + ".layer" + std::to_string(l);
    mlp.weights.push_back(
        set.add_linear_weight(name + ".weight", dims[l], dims[l + 1], rng));
    mlp.biases.push_back(set.add_zeros(name + ".bias", 1, dims[l + 1]));
  }
  return mlp;
}

ad::Tensor mlp_forward(const ad::Tensor& x, const MlpParams& mlp) {
  ad::Tensor h = x;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    h = ad::add_rowvec(ad::matmul(h, mlp.weights[l]), mlp.biases[l]);
    if (l + 1 < mlp.weights.size()) h = ad::elu(h);
  }
  return h;
}

Agent Agent::create(const TokenizerConfig& tok, const EncoderConfig& enc,
                    const AgentConfig& cfg, std::size_t n_centroids,
                    Eigen::Index action_dim, std::uint64_t seed) {
  require(tok.token_dim == enc.token_dim, ErrorCode::config,
          "tokenizer and encoder token dimensions differ");
  require(tok.point_features == enc.point_features, ErrorCode::config,
          "tokenizer and encoder feature widths differ");
  require(action_dim >= 1, ErrorCode::config, "action dimension must be >= 1");
  require(n_centroids >= 1, ErrorCode::config, "need at least one centroid");

  Agent agent;
  agent.tok_cfg = tok;
  agent.enc_cfg = enc;
  agent.cfg = cfg;
  agent.action_dim = action_dim;
  agent.n_centroids = n_centroids;

  Rng master(seed);
  Rng init = master.fork("init");
  agent.rng_update = master.fork("update");
  agent.rng_action = master.fork("action");

  agent.tokenizer = TokenizerParams::create(tok, init);
  agent.transformer = TransformerParams::create(enc, init);

  const Eigen::Index fused = agent.fused_dim();
  ad::ParamSet actor_set;
  agent.actor = MlpParams::create(actor_set, "actor", fused, cfg.hidden_width,
                                  2 * action_dim, init);
  agent.actor_params = std::move(actor_set);

  ad::ParamSet critic_set;
  agent.critic1 = MlpParams::create(critic_set, "critic1", fused + action_dim,
                                    cfg.hidden_width, 1, init);
  agent.critic2 = MlpParams::create(critic_set, "critic2", fused + action_dim,
                                    cfg.hidden_width, 1, init);

  ad::ParamSet target_set;
  agent.target1 = MlpParams::create(target_set, "target1", fused + action_dim,
                                    cfg.hidden_width, 1, init);
  agent.target2 = MlpParams::create(target_set, "target2", fused + action_dim,
                                    cfg.hidden_width, 1, init);
  // targets start synchronized with the live critics
  for (std::size_t i = 0; i < critic_set.items.size(); ++i) {
    target_set.items[i].second.mutable_value() = critic_set.items[i].second.value();
  }
  agent.target_params = std::move(target_set);

  agent.main_params.append(agent.tokenizer.set);
  agent.main_params.append(agent.transformer.set);
  agent.main_params.append(critic_set);

  ad::Mat la(1, 1);
  la(0, 0) = std::log(cfg.alpha_init);
  agent.log_alpha = agent.alpha_params.add("log_alpha", std::move(la));

  agent.opt_main = ad::Adam(cfg.lr);
  agent.opt_actor = ad::Adam(cfg.lr);
  agent.opt_alpha = ad::Adam(cfg.lr_alpha);
  return agent;
}

PatchSet patchify(const Agent& agent, const PointCloud& cloud,
                  std::uint64_t fps_seed) {
  const std::size_t m = cloud.size();
  require(m >= agent.enc_cfg.patch_size, ErrorCode::invalid_argument,
          "patchify: cloud smaller than the patch size");
  const std::size_t n = std::min(agent.n_centroids, m);
  const std::vector<std::size_t> centers =
      farthest_point_sample(cloud, n, fps_seed);
  return knn_group(cloud, centers, agent.enc_cfg.patch_size);
}

ad::Tensor encode_fused(const Agent& agent, const PointCloud& obs,
                        const std::optional<std::vector<double>>& state,
                        std::uint64_t fps_seed) {
  const PatchSet patches = patchify(agent, obs, fps_seed);
  const TokenSequence seq = make_token_sequence(patches, agent.tokenizer, 0);
  const EncoderOutput enc =
      encode(seq, EncodeMode::kRl, nullptr, agent.transformer);
  return fuse_state(enc.pooled, state, agent.transformer);
}

std::pair<ad::Tensor, ad::Tensor> actor_mean_logstd(const Agent& agent,
                                                    const ad::Tensor& fused) {
  ad::Tensor out = mlp_forward(fused, agent.actor);
  ad::Tensor mean = ad::slice_cols(out, 0, agent.action_dim);
  ad::Tensor log_std =
      ad::clamp(ad::slice_cols(out, agent.action_dim, agent.action_dim),
                agent.cfg.log_std_min, agent.cfg.log_std_max);
  return {mean, log_std};
}

namespace {

// log pi(a) = log N(pre; mean, std) - sum_i log(1 - tanh(pre_i)^2), with the
// squash term in the stable form 2*(log 2 - pre - softplus(-2*pre)).
ad::Tensor squashed_log_prob(const ad::Tensor& pre, const ad::Tensor& mean,
                             const ad::Tensor& log_std) {
  ad::Tensor z = ad::mul(ad::sub(pre, mean), ad::exp(ad::neg(log_std)));
  ad::Tensor normal_term =
      ad::add_scalar(ad::neg(ad::add(ad::mul_scalar(ad::mul(z, z), 0.5), log_std)),
                     -kHalfLog2Pi);
  ad::Tensor squash = ad::mul_scalar(
      ad::add_scalar(ad::add(ad::neg(pre), ad::neg(ad::softplus(
                                                ad::mul_scalar(pre, -2.0)))),
                     std::log(2.0)),
      2.0);
  return ad::reduce_sum(ad::sub(normal_term, squash), 1);
}

}  // namespace

ActorSample actor_forward(const Agent& agent, const ad::Tensor& fused, Rng& rng) {
  auto [mean, log_std] = actor_mean_logstd(agent, fused);
  ad::Mat eps(fused.rows(), agent.action_dim);
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.normal01();
  }
  ad::Tensor pre =
      ad::add(mean, ad::mul(ad::exp(log_std), ad::constant(std::move(eps))));
  ActorSample sample;
  sample.action = ad::tanh(pre);
  sample.log_prob = squashed_log_prob(pre, mean, log_std);
  return sample;
}

ad::Tensor actor_deterministic(const Agent& agent, const ad::Tensor& fused) {
  auto [mean, log_std] = actor_mean_logstd(agent, fused);
  (void)log_std;
  return ad::tanh(mean);
}

double actor_log_prob_at(const Agent& agent, const ad::Tensor& fused,
                         const std::vector<double>& action) {
  require(static_cast<Eigen::Index>(action.size()) == agent.action_dim,
          ErrorCode::invalid_argument, "actor_log_prob_at: action size mismatch");
  ad::NoGrad guard;
  auto [mean, log_std] = actor_mean_logstd(agent, fused);
  ad::Mat pre_m(1, agent.action_dim);
  for (Eigen::Index j = 0; j < agent.action_dim; ++j) {
    const double a = std::min(std::max(action[j], -1.0 + 1e-12), 1.0 - 1e-12);
    pre_m(0, j) = std::atanh(a);
  }
  ad::Tensor pre = ad::constant(std::move(pre_m));
  return squashed_log_prob(pre, mean, log_std).scalar();
}

ad::Tensor critic_forward(const MlpParams& critic, const ad::Tensor& fused,
                          const ad::Tensor& action) {
  return mlp_forward(ad::concat_cols(fused, action), critic);
}

std::vector<double> critic_target_values(
    Agent& agent, const std::vector<ad::Tensor>& next_fused,
    const std::vector<double>& rewards, const std::vector<std::uint8_t>& dones) {
  ad::NoGrad guard;
  ad::Tensor f = ad::concat_rows(next_fused);
  ActorSample next = actor_forward(agent, f, agent.rng_update);
  ad::Tensor q1 = critic_forward(agent.target1, f, next.action);
  ad::Tensor q2 = critic_forward(agent.target2, f, next.action);
  const double alpha = agent.alpha();
  std::vector<double> y(rewards.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    const double qmin = std::min(q1.value()(r, 0), q2.value()(r, 0));
    const double soft = qmin - alpha * next.log_prob.value()(r, 0);
    y[i] = rewards[i] + agent.cfg.gamma * (dones[i] ? 0.0 : 1.0) * soft;
  }
  return y;
}

std::vector<double> agent_act(Agent& agent, const PointCloud& obs,
                              const std::optional<std::vector<double>>& state,
                              bool deterministic) {
  ad::NoGrad guard;
  const std::uint64_t fps_seed = agent.rng_action.next_u64();
  ad::Tensor fused = encode_fused(agent, obs, state, fps_seed);
  ad::Tensor action = deterministic
                          ? actor_deterministic(agent, fused)
                          : actor_forward(agent, fused, agent.rng_action).action;
  std::vector<double> out(agent.action_dim);
  for (Eigen::Index j = 0; j < agent.action_dim; ++j) {
    out[j] = action.value()(0, j);
  }
  return out;
}

void soft_update_targets(Agent& agent) {
  const double tau = agent.cfg.tau;
  // the live critics sit at the tail of main_params, aligned with targets
  const std::size_t critic_count = agent.target_params.items.size();
  const std::size_t offset = agent.main_params.items.size() - critic_count;
  for (std::size_t i = 0; i < critic_count; ++i) {
    ad::Tensor target = agent.target_params.items[i].second;
    const ad::Tensor& source = agent.main_params.items[offset + i].second;
    target.mutable_value() =
        (1.0 - tau) * target.value() + tau * source.value();
  }
}

UpdateMetrics update_step(Agent& agent, ReplayBuffer& buffer) {
  UpdateMetrics metrics;
  metrics.alpha = agent.alpha();
  if (buffer.size() < agent.cfg.batch_size) {
    metrics.skipped = true;
    return metrics;
  }

  const std::size_t batch = agent.cfg.batch_size;
  const std::vector<std::size_t> idx =
      buffer.sample_indices(batch, agent.rng_update);

  std::vector<Transition> transitions;
  transitions.reserve(batch);
  for (const std::size_t i : idx) transitions.push_back(buffer.get(i));

  // one tokenization of the current observations serves critic, auxiliary
  // reconstruction, and actor
  std::vector<PatchSet> cur_patches;
  cur_patches.reserve(batch);
  for (const Transition& t : transitions) {
    cur_patches.push_back(patchify(agent, t.obs, agent.rng_update.next_u64()));
  }
  std::vector<PatchSet> cur_sorted;
  std::vector<TokenSequence> cur_seqs =
      make_token_sequences(cur_patches, agent.tokenizer, &cur_sorted);

  std::vector<ad::Tensor> fused_rows;
  fused_rows.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    EncoderOutput enc =
        encode(cur_seqs[i], EncodeMode::kRl, nullptr, agent.transformer);
    fused_rows.push_back(
        fuse_state(enc.pooled, transitions[i].state, agent.transformer));
  }
  ad::Tensor fused = ad::concat_rows(fused_rows);

  // targets from the live encoder, gradient-free
  std::vector<double> rewards(batch);
  std::vector<std::uint8_t> dones(batch);
  std::vector<ad::Tensor> next_rows;
  next_rows.reserve(batch);
  {
    ad::NoGrad guard;
    std::vector<PatchSet> next_patches;
    next_patches.reserve(batch);
    for (const Transition& t : transitions) {
      next_patches.push_back(
          patchify(agent, t.next_obs, agent.rng_update.next_u64()));
    }
    std::vector<TokenSequence> next_seqs =
        make_token_sequences(next_patches, agent.tokenizer);
    for (std::size_t i = 0; i < batch; ++i) {
      EncoderOutput enc =
          encode(next_seqs[i], EncodeMode::kRl, nullptr, agent.transformer);
      next_rows.push_back(
          fuse_state(enc.pooled, transitions[i].next_state, agent.transformer));
      rewards[i] = transitions[i].reward;
      dones[i] = transitions[i].done ? 1 : 0;
    }
  }
  const std::vector<double> y = critic_target_values(agent, next_rows, rewards, dones);

  ad::Mat y_m(static_cast<Eigen::Index>(batch), 1);
  ad::Mat a_m(static_cast<Eigen::Index>(batch), agent.action_dim);
  for (std::size_t i = 0; i < batch; ++i) {
    y_m(static_cast<Eigen::Index>(i), 0) = y[i];
    for (Eigen::Index j = 0; j < agent.action_dim; ++j) {
      a_m(static_cast<Eigen::Index>(i), j) = transitions[i].action[j];
    }
  }
  ad::Tensor y_t = ad::constant(std::move(y_m));
  ad::Tensor actions = ad::constant(std::move(a_m));

  // (a) critic loss; gradients reach critics, transformer and tokenizer
  ad::Tensor q1 = critic_forward(agent.critic1, fused, actions);
  ad::Tensor q2 = critic_forward(agent.critic2, fused, actions);
  ad::Tensor d1 = ad::sub(q1, y_t);
  ad::Tensor d2 = ad::sub(q2, y_t);
  ad::Tensor critic_loss =
      ad::add(ad::mean_all(ad::mul(d1, d1)), ad::mean_all(ad::mul(d2, d2)));
  metrics.critic_loss = critic_loss.scalar();
  metrics.q_mean = 0.5 * (q1.value().mean() + q2.value().mean());

  ad::Tensor main_loss = critic_loss;

  // (b) auxiliary masked reconstruction on the same batch
  if (agent.cfg.aux_enabled) {
    std::vector<ad::Tensor> per_cloud;
    per_cloud.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const TokenSequence& seq = cur_seqs[i];
      const AttentionMask mask = build_decoder_mask(
          seq.n_real, seq.n_total() - seq.n_real, agent.enc_cfg.mask_ratio,
          agent.enc_cfg.prefix_fraction, agent.rng_update.next_u64());
      EncoderOutput enc =
          encode(seq, EncodeMode::kReconstruction, &mask, agent.transformer);
      ad::Tensor pred = decode_and_predict(enc, seq, mask, agent.transformer);
      std::vector<PatchPoints> gt;
      gt.reserve(seq.n_real);
      for (std::size_t p = 0; p < seq.n_real; ++p) {
        gt.push_back(PatchPoints::from_patch(cur_sorted[i], p));
      }
      per_cloud.push_back(
          aux_loss(pred, gt, agent.enc_cfg.point_features == 6));
    }
    ad::Tensor aux = ad::mean_all(ad::concat_rows(per_cloud));
    metrics.aux_loss = aux.scalar();
    main_loss = ad::add(main_loss, ad::mul_scalar(aux, agent.cfg.aux_weight));
  }

  agent.main_params.zero_grad();
  ad::backward(main_loss);
  agent.opt_main.step(agent.main_params.items);

  // (c) actor loss on detached embeddings
  ad::Tensor fused_detached = ad::detach(fused);
  ActorSample pi = actor_forward(agent, fused_detached, agent.rng_update);
  ad::Tensor qa1 = critic_forward(agent.critic1, fused_detached, pi.action);
  ad::Tensor qa2 = critic_forward(agent.critic2, fused_detached, pi.action);
  ad::Tensor qmin = ad::min_elem(qa1, qa2);
  ad::Tensor actor_loss = ad::mean_all(
      ad::sub(ad::mul_scalar(pi.log_prob, agent.alpha()), qmin));
  metrics.actor_loss = actor_loss.scalar();

  agent.actor_params.zero_grad();
  ad::backward(actor_loss);
  agent.opt_actor.step(agent.actor_params.items);

  // (d) temperature loss with detached log-probabilities
  const double mean_logp = pi.log_prob.value().mean();
  ad::Tensor alpha_loss = ad::mul_scalar(
      ad::exp(agent.log_alpha), -(mean_logp + agent.target_entropy()));
  metrics.alpha_loss = alpha_loss.scalar();
  agent.alpha_params.zero_grad();
  ad::backward(alpha_loss);
  agent.opt_alpha.step(agent.alpha_params.items);
  metrics.alpha = agent.alpha();

  // (e) soft target sync
  soft_update_targets(agent);

  agent.update_steps += 1;
  return metrics;
}

}  // namespace pprl
