#pragma once

#include <cstdint>
#include <string>

#include "envs.hpp"
#include "sac.hpp"
#include "tokenizer.hpp"
#include "transformer.hpp"

namespace pprl {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  EnvConfig env;
  std::string env_name = "point_reach";

  std::size_t centroids = 32;  // n
  TokenizerConfig tokenizer;   // k lives in encoder.patch_size
  EncoderConfig encoder;

  AgentConfig agent;

  std::uint64_t total_steps = 0;
  std::size_t eval_interval = 2000;
  std::size_t eval_episodes = 100;
  std::size_t init_random_steps = 1000;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  double stop_success_rate = -1.0;  // < 0 disables early stopping

  void validate() const;
};

// Strict parse: unknown keys are rejected, parse errors carry line/column,
// validation errors name the offending key (with a best-effort line number).
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin);

// Round-trips the effective configuration (manifest + checkpoint echo).
std::string dump_run_config(const RunConfig& config);

}  // namespace pprl
