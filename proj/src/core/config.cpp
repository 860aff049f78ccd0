#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pprl {

using nlohmann::json;

namespace {

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

// Best effort: first occurrence of the quoted key.
std::string locate_key(const std::string& text, const std::string& origin,
                       const std::string& key) {
  const std::size_t pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return origin;
  return origin + ":" + std::to_string(line_of_offset(text, pos));
}

class Section {
 public:
  Section(const json& j, const std::string& text, const std::string& origin,
          const std::string& name)
      : j_(j), text_(text), origin_(origin), name_(name) {
    if (!j.is_object()) {
      throw_config_error(locate_key(text, origin, name) + ": `" + name +
                         "` must be an object");
    }
  }

  ~Section() = default;

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw_config_error(locate_key(text_, origin_, key) + ": unknown key `" +
                           key + "` in `" + name_ + "`");
      }
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw_config_error(locate_key(text_, origin_, key) + ": bad value for `" +
                         key + "`: " + e.what());
    }
  }

  json sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : json::object();
  }

 private:
  const json& j_;
  const std::string& text_;
  const std::string& origin_;
  std::string name_;
  std::set<std::string> seen_;
};

NormalizationSpec parse_normalization(const json& j, const std::string& text,
                                      const std::string& origin) {
  Section s(j, text, origin, "normalization");
  NormalizationSpec spec;
  const std::string mode = s.get<std::string>("mode", "none");
  if (mode == "none") {
    spec.mode = NormalizationMode::kNone;
  } else if (mode == "static") {
    spec.mode = NormalizationMode::kStatic;
  } else if (mode == "per_cloud") {
    spec.mode = NormalizationMode::kPerCloud;
  } else {
    throw_config_error(locate_key(text, origin, "mode") +
                       ": normalization mode must be none|static|per_cloud");
  }
  const std::vector<double> center =
      s.get<std::vector<double>>("center", {0.0, 0.0, 0.0});
  if (center.size() != 3) {
    throw_config_error(locate_key(text, origin, "center") +
                       ": `center` needs exactly 3 numbers");
  }
  spec.center = {center[0], center[1], center[2]};
  spec.scale = s.get<double>("scale", 1.0);
  s.finish();
  return spec;
}

}  // namespace

void RunConfig::validate() const {
  require(centroids >= 1, ErrorCode::config, "centroids must be >= 1");
  require(encoder.patch_size >= 1, ErrorCode::config, "patch_size must be >= 1");
  require(encoder.token_dim == tokenizer.token_dim, ErrorCode::config,
          "internal: token dimensions diverged");
  require(agent.batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(agent.replay_capacity >= agent.batch_size, ErrorCode::config,
          "replay_capacity must be >= batch_size");
  require(agent.gamma > 0.0 && agent.gamma <= 1.0, ErrorCode::config,
          "gamma must lie in (0, 1]");
  require(agent.tau > 0.0 && agent.tau <= 1.0, ErrorCode::config,
          "tau must lie in (0, 1]");
  require(agent.replay_ratio > 0.0, ErrorCode::config,
          "replay_ratio must be positive");
  require(encoder.mask_ratio >= 0.0 && encoder.mask_ratio <= 1.0,
          ErrorCode::config, "mask_ratio must lie in [0, 1]");
  require(encoder.prefix_fraction >= 0.0 && encoder.prefix_fraction <= 1.0,
          ErrorCode::config, "prefix_fraction must lie in [0, 1]");
  require(eval_episodes >= 1, ErrorCode::config, "eval_episodes must be >= 1");
  require(eval_interval >= 1, ErrorCode::config, "eval_interval must be >= 1");
  require(!out_dir.empty(), ErrorCode::config, "out_dir must not be empty");
  require(env.max_obs_points >= encoder.patch_size, ErrorCode::config,
          "max_obs_points must be >= patch_size");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw_config_error(origin + ":" + std::to_string(line_of_offset(text, e.byte)) +
                       ": " + e.what());
  }
  if (!root.is_object()) {
    throw_config_error(origin + ": top level must be an object");
  }

  RunConfig cfg;
  Section top(root, text, origin, "config");

  {
    json je = top.sub("env");
    Section s(je, text, origin, "env");
    cfg.env_name = s.get<std::string>("name", "point_reach");
    cfg.env.task = task_from_name(cfg.env_name);
    cfg.env.zero_colors = s.get<bool>("zero_colors", false);
    cfg.env.max_obs_points = s.get<std::size_t>("max_obs_points", 200);
    cfg.env.horizon = s.get<std::size_t>("horizon", 50);
    if (s.has("normalization")) {
      cfg.env.normalization = parse_normalization(s.sub("normalization"), text, origin);
    } else {
      s.sub("normalization");
    }
    s.finish();
  }

  {
    json je = top.sub("encoder");
    Section s(je, text, origin, "encoder");
    cfg.centroids = s.get<std::size_t>("centroids", 32);
    cfg.encoder.patch_size = s.get<std::size_t>("patch_size", 32);
    cfg.encoder.token_dim = s.get<Eigen::Index>("token_dim", 96);
    cfg.encoder.layers = s.get<Eigen::Index>("layers", 3);
    cfg.encoder.heads = s.get<Eigen::Index>("heads", 4);
    cfg.encoder.mask_ratio = s.get<double>("mask_ratio", 0.3);
    cfg.encoder.prefix_fraction = s.get<double>("prefix_fraction", 0.15);
    const bool color = s.get<bool>("color", cfg.env.task == Task::kColorTouch);
    cfg.encoder.point_features = color ? 6 : 3;
    cfg.tokenizer.point_features = cfg.encoder.point_features;
    cfg.tokenizer.token_dim = cfg.encoder.token_dim;
    cfg.tokenizer.pointnet_width = s.get<Eigen::Index>("pointnet_width", 64);
    s.finish();
  }

  {
    json je = top.sub("sac");
    Section s(je, text, origin, "sac");
    cfg.agent.gamma = s.get<double>("gamma", 0.99);
    cfg.agent.tau = s.get<double>("tau", 0.005);
    cfg.agent.lr = s.get<double>("lr", 1e-4);
    cfg.agent.alpha_init = s.get<double>("alpha_init", 0.1);
    cfg.agent.lr_alpha = s.get<double>("lr_alpha", 1e-4);
    cfg.agent.batch_size = s.get<std::size_t>("batch_size", 64);
    cfg.agent.replay_capacity = s.get<std::size_t>("replay_capacity", 100000);
    cfg.agent.replay_ratio = s.get<double>("replay_ratio", 1.0);
    cfg.agent.hidden_width = s.get<Eigen::Index>("hidden_width", 256);
    if (s.has("target_entropy")) {
      cfg.agent.target_entropy = s.get<double>("target_entropy", 0.0);
      cfg.agent.target_entropy_auto = false;
    } else {
      s.get<double>("target_entropy", 0.0);
      cfg.agent.target_entropy_auto = true;
    }
    cfg.agent.aux_weight = s.get<double>("aux_weight", 1.0);
    s.finish();
  }

  {
    json jt = top.sub("train");
    Section s(jt, text, origin, "train");
    cfg.total_steps = s.get<std::uint64_t>("total_steps", 0);
    cfg.eval_interval = s.get<std::size_t>("eval_interval", 2000);
    cfg.eval_episodes = s.get<std::size_t>("eval_episodes", 100);
    cfg.init_random_steps = s.get<std::size_t>("init_random_steps", 1000);
    cfg.seed = s.get<std::uint64_t>("seed", 0);
    cfg.out_dir = s.get<std::string>("out_dir", "run");
    cfg.agent.aux_enabled = s.get<bool>("aux", true);
    cfg.stop_success_rate = s.get<double>("stop_success_rate", -1.0);
    s.finish();
  }

  top.finish();

  cfg.encoder.state_dim = Env::kActionDim;  // proprioception: agent position
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["env"]["name"] = cfg.env_name;
  j["env"]["zero_colors"] = cfg.env.zero_colors;
  j["env"]["max_obs_points"] = cfg.env.max_obs_points;
  j["env"]["horizon"] = cfg.env.horizon;
  const char* modes[] = {"static", "per_cloud", "none"};
  j["env"]["normalization"]["mode"] =
      modes[static_cast<int>(cfg.env.normalization.mode)];
  j["env"]["normalization"]["center"] = {cfg.env.normalization.center[0],
                                         cfg.env.normalization.center[1],
                                         cfg.env.normalization.center[2]};
  j["env"]["normalization"]["scale"] = cfg.env.normalization.scale;

  j["encoder"]["centroids"] = cfg.centroids;
  j["encoder"]["patch_size"] = cfg.encoder.patch_size;
  j["encoder"]["token_dim"] = cfg.encoder.token_dim;
  j["encoder"]["layers"] = cfg.encoder.layers;
  j["encoder"]["heads"] = cfg.encoder.heads;
  j["encoder"]["mask_ratio"] = cfg.encoder.mask_ratio;
  j["encoder"]["prefix_fraction"] = cfg.encoder.prefix_fraction;
  j["encoder"]["color"] = cfg.encoder.point_features == 6;
  j["encoder"]["pointnet_width"] = cfg.tokenizer.pointnet_width;

  j["sac"]["gamma"] = cfg.agent.gamma;
  j["sac"]["tau"] = cfg.agent.tau;
  j["sac"]["lr"] = cfg.agent.lr;
  j["sac"]["alpha_init"] = cfg.agent.alpha_init;
  j["sac"]["lr_alpha"] = cfg.agent.lr_alpha;
  j["sac"]["batch_size"] = cfg.agent.batch_size;
  j["sac"]["replay_capacity"] = cfg.agent.replay_capacity;
  j["sac"]["replay_ratio"] = cfg.agent.replay_ratio;
  j["sac"]["hidden_width"] = cfg.agent.hidden_width;
  if (!cfg.agent.target_entropy_auto) {
    j["sac"]["target_entropy"] = cfg.agent.target_entropy;
  }
  j["sac"]["aux_weight"] = cfg.agent.aux_weight;

  j["train"]["total_steps"] = cfg.total_steps;
  j["train"]["eval_interval"] = cfg.eval_interval;
  j["train"]["eval_episodes"] = cfg.eval_episodes;
  j["train"]["init_random_steps"] = cfg.init_random_steps;
  j["train"]["seed"] = cfg.seed;
  j["train"]["out_dir"] = cfg.out_dir;
  j["train"]["aux"] = cfg.agent.aux_enabled;
  j["train"]["stop_success_rate"] = cfg.stop_success_rate;
  return j.dump(2);
}

}  // namespace pprl
