#include "checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace pprl {

namespace {

constexpr char kMagic[8] = {'P', 'P', 'R', 'L', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }

  template <typename T>
  void vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    pod<std::uint64_t>(v.size());
    bytes(v.data(), v.size() * sizeof(T));
  }

  void mat(const ad::Mat& m) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }

  void rng(const Rng& r) {
    for (const std::uint64_t w : r.state()) pod(w);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in, std::string origin)
      : in_(in), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }

  void bytes(void* data, std::size_t n) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    check();
  }

  std::string str() {
    const auto n = pod<std::uint64_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  template <typename T>
  std::vector<T> vec() {
    const auto n = pod<std::uint64_t>();
    std::vector<T> v(n);
    bytes(v.data(), n * sizeof(T));
    return v;
  }

  ad::Mat mat() {
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    ad::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    bytes(m.data(), sizeof(double) * rows * cols);
    return m;
  }

  Rng rng() {
    std::array<std::uint64_t, 4> s;
    for (auto& w : s) w = pod<std::uint64_t>();
    Rng r;
    r.set_state(s);
    return r;
  }

 private:
  void check() {
    if (!in_) throw_io_error("truncated checkpoint: " + origin_);
  }

  std::istream& in_;
  std::string origin_;
};

void write_params(Writer& w, const ad::ParamSet& set) {
  w.pod<std::uint64_t>(set.items.size());
  for (const auto& [name, tensor] : set.items) {
    w.str(name);
    w.mat(tensor.value());
  }
}

void read_params(Reader& r, ad::ParamSet& set) {
  const auto count = r.pod<std::uint64_t>();
  require(count == set.items.size(), ErrorCode::parse,
          "checkpoint does not match the configured architecture "
          "(parameter count differs)");
  for (auto& [name, tensor] : set.items) {
    const std::string stored = r.str();
    require(stored == name, ErrorCode::parse,
            "checkpoint does not match the configured architecture (expected "
            "parameter " + name + ", found " + stored + ")");
    ad::Mat m = r.mat();
    require(m.rows() == tensor.rows() && m.cols() == tensor.cols(),
            ErrorCode::parse, "checkpoint parameter shape mismatch for " + name);
    tensor.mutable_value() = std::move(m);
  }
}

void write_adam(Writer& w, const ad::Adam& opt) {
  w.pod<std::int64_t>(opt.step_count());
  w.pod<std::uint64_t>(opt.slots().size());
  for (const auto& slot : opt.slots()) {
    w.mat(slot.m);
    w.mat(slot.v);
  }
}

void read_adam(Reader& r, ad::Adam& opt) {
  opt.set_step_count(r.pod<std::int64_t>());
  const auto n = r.pod<std::uint64_t>();
  opt.slots().resize(n);
  for (auto& slot : opt.slots()) {
    slot.m = r.mat();
    slot.v = r.mat();
  }
}

void write_cloud(Writer& w, const PointCloud& cloud) {
  w.pod<std::uint8_t>(cloud.has_colors() ? 1 : 0);
  w.pod<std::uint64_t>(cloud.size());
  for (const Vec3& p : cloud.positions) w.bytes(p.data(), sizeof(double) * 3);
  if (cloud.has_colors()) {
    for (const Vec3& c : *cloud.colors) w.bytes(c.data(), sizeof(double) * 3);
  }
}

PointCloud read_cloud(Reader& r) {
  PointCloud cloud;
  const bool colors = r.pod<std::uint8_t>() != 0;
  const auto n = r.pod<std::uint64_t>();
  cloud.positions.resize(n);
  for (Vec3& p : cloud.positions) r.bytes(p.data(), sizeof(double) * 3);
  if (colors) {
    cloud.colors.emplace(n);
    for (Vec3& c : *cloud.colors) r.bytes(c.data(), sizeof(double) * 3);
  }
  return cloud;
}

void write_env_state(Writer& w, const EnvState& s) {
  w.bytes(s.agent.data(), sizeof(double) * 3);
  w.bytes(s.target.data(), sizeof(double) * 3);
  w.bytes(s.distractor.data(), sizeof(double) * 3);
  w.pod<std::uint64_t>(s.step_count);
  w.rng(s.episode_rng);
  w.pod<double>(s.view_angle);
  w.bytes(s.view_shift.data(), sizeof(double) * 3);
  w.pod<std::uint8_t>(s.finished ? 1 : 0);
}

EnvState read_env_state(Reader& r) {
  EnvState s;
  r.bytes(s.agent.data(), sizeof(double) * 3);
  r.bytes(s.target.data(), sizeof(double) * 3);
  r.bytes(s.distractor.data(), sizeof(double) * 3);
  s.step_count = r.pod<std::uint64_t>();
  s.episode_rng = r.rng();
  s.view_angle = r.pod<double>();
  r.bytes(s.view_shift.data(), sizeof(double) * 3);
  s.finished = r.pod<std::uint8_t>() != 0;
  return s;
}

void write_stored_cloud(Writer& w, const ReplayBuffer::StoredCloud& c) {
  w.pod<std::uint8_t>(c.has_colors ? 1 : 0);
  w.vec(c.data);
}

ReplayBuffer::StoredCloud read_stored_cloud(Reader& r) {
  ReplayBuffer::StoredCloud c;
  c.has_colors = r.pod<std::uint8_t>() != 0;
  c.data = r.vec<float>();
  return c;
}

}  // namespace

Agent agent_from_config(const RunConfig& config) {
  return Agent::create(config.tokenizer, config.encoder, config.agent,
                       config.centroids, Env::kActionDim, config.seed);
}

void save_checkpoint(const std::string& path, const RunConfig& config,
                     const Agent& agent, const TrainerState* trainer,
                     const ReplayBuffer* buffer) {
  std::ostringstream out(std::ios::binary);
  Writer w(out);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kFormatVersion);
  w.pod<std::uint8_t>(trainer != nullptr ? 1 : 0);
  w.str(dump_run_config(config));

  w.pod<std::uint64_t>(agent.env_steps);
  w.pod<std::uint64_t>(agent.update_steps);
  w.rng(agent.rng_update);
  w.rng(agent.rng_action);
  write_params(w, agent.main_params);
  write_params(w, agent.actor_params);
  write_params(w, agent.alpha_params);
  write_params(w, agent.target_params);
  write_adam(w, agent.opt_main);
  write_adam(w, agent.opt_actor);
  write_adam(w, agent.opt_alpha);

  if (trainer != nullptr) {
    const TrainerState& t = *trainer;
    w.pod<std::uint64_t>(t.global_step);
    w.pod<std::uint64_t>(t.episode_index);
    w.pod<double>(t.episode_return);
    w.pod<std::uint64_t>(t.episode_steps);
    w.pod<double>(t.update_credit);
    w.pod<double>(t.critic_loss_sum);
    w.pod<double>(t.actor_loss_sum);
    w.pod<double>(t.aux_loss_sum);
    w.pod<double>(t.alpha_last);
    w.pod<double>(t.q_mean_sum);
    w.pod<std::uint64_t>(t.loss_count);
    w.pod<double>(t.best_eval_success);
    w.pod<std::uint64_t>(t.steps_to_stop);
    write_env_state(w, t.env_state);
    write_cloud(w, t.current_obs);
    w.vec(t.current_state);

    require(buffer != nullptr, ErrorCode::invalid_argument,
            "save_checkpoint: trainer state needs the replay buffer");
    w.pod<std::uint64_t>(buffer->capacity());
    w.pod<std::uint64_t>(buffer->size());
    for (std::size_t i = 0; i < buffer->size(); ++i) {
      const auto& s = buffer->stored(i);
      write_stored_cloud(w, s.obs);
      write_stored_cloud(w, s.next_obs);
      w.pod<std::uint8_t>(s.has_state ? 1 : 0);
      w.vec(s.state);
      w.vec(s.next_state);
      w.vec(s.action);
      w.pod<float>(s.reward);
      w.pod<std::uint8_t>(s.done);
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw_io_error("cannot write checkpoint: " + path);
  const std::string blob = out.str();
  file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!file) throw_io_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw_io_error("cannot open checkpoint: " + path);
  Reader r(file, path);

  char magic[8];
  r.bytes(magic, sizeof(magic));
  require(std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, ErrorCode::parse,
          path + ": not a checkpoint file");
  const auto version = r.pod<std::uint32_t>();
  require(version == kFormatVersion, ErrorCode::parse,
          path + ": unsupported checkpoint version");
  const bool has_trainer = r.pod<std::uint8_t>() != 0;

  LoadedCheckpoint out;
  out.config = parse_run_config(r.str(), path + " (embedded config)");
  out.agent = agent_from_config(out.config);

  out.agent.env_steps = r.pod<std::uint64_t>();
  out.agent.update_steps = r.pod<std::uint64_t>();
  out.agent.rng_update = r.rng();
  out.agent.rng_action = r.rng();
  read_params(r, out.agent.main_params);
  read_params(r, out.agent.actor_params);
  read_params(r, out.agent.alpha_params);
  read_params(r, out.agent.target_params);
  read_adam(r, out.agent.opt_main);
  read_adam(r, out.agent.opt_actor);
  read_adam(r, out.agent.opt_alpha);

  if (has_trainer) {
    out.has_trainer = true;
    TrainerState& t = out.trainer;
    t.global_step = r.pod<std::uint64_t>();
    t.episode_index = r.pod<std::uint64_t>();
    t.episode_return = r.pod<double>();
    t.episode_steps = r.pod<std::uint64_t>();
    t.update_credit = r.pod<double>();
    t.critic_loss_sum = r.pod<double>();
    t.actor_loss_sum = r.pod<double>();
    t.aux_loss_sum = r.pod<double>();
    t.alpha_last = r.pod<double>();
    t.q_mean_sum = r.pod<double>();
    t.loss_count = r.pod<std::uint64_t>();
    t.best_eval_success = r.pod<double>();
    t.steps_to_stop = r.pod<std::uint64_t>();
    t.env_state = read_env_state(r);
    t.current_obs = read_cloud(r);
    t.current_state = r.vec<double>();

    const auto capacity = r.pod<std::uint64_t>();
    const auto size = r.pod<std::uint64_t>();
    out.buffer = std::make_unique<ReplayBuffer>(capacity);
    for (std::uint64_t i = 0; i < size; ++i) {
      ReplayBuffer::StoredTransition s;
      s.obs = read_stored_cloud(r);
      s.next_obs = read_stored_cloud(r);
      s.has_state = r.pod<std::uint8_t>() != 0;
      s.state = r.vec<float>();
      s.next_state = r.vec<float>();
      s.action = r.vec<float>();
      s.reward = r.pod<float>();
      s.done = r.pod<std::uint8_t>();
      out.buffer->push_stored(std::move(s));
    }
  }
  return out;
}

}  // namespace pprl
