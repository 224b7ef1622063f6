#pragma once

#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/rng.hpp"

namespace vdiff {

// Motion classes: 0 left, 1 right, 2 up, 3 down, 4 rotate, 5 scale.
inline constexpr long kNumSpriteClasses = 6;
const char* sprite_class_name(long id);

struct SpriteDatasetConfig {
  long resolution = 16;
  long channels = 4;
  long frames = 9;
  double fps = 2.0;
  long num_classes = kNumSpriteClasses;
  long clips_per_class = 8;
  double speed_min = 0.6;  // px per second; 0/0 renders static clips
  double speed_max = 1.4;
  std::uint64_t seed = 0;

  void validate() const;
  static SpriteDatasetConfig from_config(Config& cfg);
};

// Soft-edged sprite undergoing its class motion; values in [-1, 1], channel c
// is channel 0 shifted right by c pixels.
VideoClip synth_clip(long class_id, Rng& rng, const SpriteDatasetConfig& cfg);

// class-major order, one forked rng stream per clip
std::vector<VideoClip> synth_dataset(const SpriteDatasetConfig& cfg);

// ATNS clip files plus a "name class_id fps" manifest in dir.
void write_dataset(const std::string& dir, const std::vector<VideoClip>& clips);
std::vector<VideoClip> load_dataset(const std::string& dir);

}  // namespace vdiff
