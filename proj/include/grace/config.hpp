#pragma once

// Training configuration and its flat "key = value" file form.
//
// A file either names a preset ("preset = desk") and overrides some keys, or
// lists every key. Unknown keys and missing keys are errors that name the key.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "grace/model.hpp"
#include "grace/vat.hpp"

namespace grace {

struct TrainConfig {
  std::uint64_t seed = 1;
  int stage1_epochs = 5;
  int stage1_vat_epochs = 1;
  int stage2_epochs = 10;
  double lr_stage1 = 3e-5;
  double lr_stage1_vat = 1e-5;
  double lr_stage2_asc = 3e-5;
  double lr_stage2_ate = 3e-6;
  int batch_size = 32;
  double warmup_fraction = 0.1;
  bool ghm = true;
  int ghm_bins = 24;
  double ghm_momentum = 0.75;
  bool ghm_ema = true;
  bool vat = true;
  VatConfig vat_config{};       // apply_to governs stage 2; the stage-1 VAT phase always uses the term branch
  double clip_norm = 1.0;       // global gradient norm cap, 0 disables
  bool consistent_polarity = false;
  int min_count = 1;
  bool dev_eval = true;
  EncoderConfig model{};        // vocab_size is filled from the training vocabulary

  void validate() const;
};

/// Values used by the original large-backbone fine-tuning recipe.
TrainConfig paper_preset();
/// Desk-scale recipe for a randomly initialised small encoder.
TrainConfig desk_preset();
/// Desk recipe without the harmonized loss, adversarial training or decoder:
/// all layers shared and a linear polarity head.
TrainConfig base_preset();

TrainConfig preset_by_name(const std::string& name);
std::vector<std::string> config_keys();

TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

}  // namespace grace
