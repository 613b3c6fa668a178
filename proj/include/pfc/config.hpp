#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pfc/errors.hpp"

namespace pfc {

/// Flat key=value run configuration. Unknown keys are rejected; every run
/// writes the fully resolved config beside its outputs. The thread count is
/// deliberately an execution knob, not a config key, because outputs must
/// not depend on it.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 1;
  std::int64_t epochs = 100;
  std::int64_t iters = 200;
  std::int64_t batch = 4;
  double width_mult = 0.125;
  std::string persp_source = "gt";  // gt | penet | mean
  double lambda_persp = 1.0;
  double lr = 1e-4;
  double psnr_stop = 0.0;  // stop a penet phase early at this PSNR; 0 = off
  std::int64_t phase = 1;
  std::int64_t scenes = 50;
  std::int64_t image_h = 128;
  std::int64_t image_w = 128;
  std::int64_t heads_min = 5;
  std::int64_t heads_max = 25;
  std::int64_t bench_repeats = 9;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  std::string penet_checkpoint;

  void set(const std::string& key, const std::string& value) {
    const auto as_i64 = [&]() -> std::int64_t {
      try {
        return std::stoll(value);
      } catch (const std::exception&) {
        throw UsageError("config: bad integer for " + key + ": " + value);
      }
    };
    const auto as_f64 = [&]() -> double {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        throw UsageError("config: bad number for " + key + ": " + value);
      }
    };
    if (key == "command") command = value;
    else if (key == "seed") seed = static_cast<std::uint64_t>(as_i64());
    else if (key == "epochs") epochs = as_i64();
    else if (key == "iters") iters = as_i64();
    else if (key == "batch") batch = as_i64();
    else if (key == "width_mult") width_mult = as_f64();
    else if (key == "persp_source") persp_source = value;
    else if (key == "lambda_persp") lambda_persp = as_f64();
    else if (key == "lr") lr = as_f64();
    else if (key == "psnr_stop") psnr_stop = as_f64();
    else if (key == "phase") phase = as_i64();
    else if (key == "scenes") scenes = as_i64();
    else if (key == "image_h") image_h = as_i64();
    else if (key == "image_w") image_w = as_i64();
    else if (key == "heads_min") heads_min = as_i64();
    else if (key == "heads_max") heads_max = as_i64();
    else if (key == "bench_repeats") bench_repeats = as_i64();
    else if (key == "data_dir") data_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "penet_checkpoint") penet_checkpoint = value;
    else throw UsageError("config: unknown key '" + key + "'");
  }

  /// key=value lines sorted by key; stable across runs for byte comparison.
  std::string resolved_text() const {
    std::map<std::string, std::string> kv;
    char buf[64];
    const auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    kv["command"] = command;
    kv["seed"] = std::to_string(seed);
    kv["epochs"] = std::to_string(epochs);
    kv["iters"] = std::to_string(iters);
    kv["batch"] = std::to_string(batch);
    kv["width_mult"] = num(width_mult);
    kv["persp_source"] = persp_source;
    kv["lambda_persp"] = num(lambda_persp);
    kv["lr"] = num(lr);
    kv["psnr_stop"] = num(psnr_stop);
    kv["phase"] = std::to_string(phase);
    kv["scenes"] = std::to_string(scenes);
    kv["image_h"] = std::to_string(image_h);
    kv["image_w"] = std::to_string(image_w);
    kv["heads_min"] = std::to_string(heads_min);
    kv["heads_max"] = std::to_string(heads_max);
    kv["bench_repeats"] = std::to_string(bench_repeats);
    kv["data_dir"] = data_dir;
    kv["out_dir"] = out_dir;
    kv["checkpoint"] = checkpoint;
    kv["penet_checkpoint"] = penet_checkpoint;
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    return os.str();
  }

  /// Apply `key=value` lines from a config file; '#' starts a comment.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("config: cannot open " + path);
    std::string line;
    while (std::getline(f, line)) {
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
        line.pop_back();
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw UsageError("config: expected key=value, got: " + line);
      set(line.substr(0, eq), line.substr(eq + 1));
    }
  }
};

}  // namespace pfc
