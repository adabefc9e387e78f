#pragma once

#include <optional>
#include <string>

#include "pnc/model.hpp"
#include "pnc/training.hpp"

namespace pnc {

struct Config {
  ModelSpec model;
  TrainConfig train;
  std::string images_path;
  std::string labels_path;

  void validate() const;
};

// Line-oriented `key = value` grammar with `#` comments. Unknown keys are
// rejected; missing keys take the documented defaults.
Config parse_config_text(const std::string& text);
Config parse_config_file(const std::string& path);

// Renders every key, defaults included; parse(render(c)) is a fixed point.
std::string render_config(const Config& c);

// Versioned binary checkpoint: magic "PNC1", resolved config, structure
// fingerprint, named little-endian float64 tensors, optional optimizer
// state, trailing CRC-32. Written atomically (temp + rename).
void save_checkpoint(const Model& model, const Config& config,
                     const AdamState* optimizer, const std::string& path);

struct LoadedCheckpoint {
  Config config;
  Model model;
  std::optional<AdamState> optimizer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads parameters into an existing model; refuses on structure
// fingerprint mismatch.
void load_params_into(Model& model, const std::string& path);

}  // namespace pnc
