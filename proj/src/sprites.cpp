#include "vdiff/sprites.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "vdiff/atns.hpp"

namespace vdiff {

namespace fs = std::filesystem;

const char* sprite_class_name(long id) {
  switch (id) {
    case 0: return "translate-left";
    case 1: return "translate-right";
    case 2: return "translate-up";
    case 3: return "translate-down";
    case 4: return "rotate";
    case 5: return "scale";
  }
  throw std::invalid_argument("bad sprite class " + std::to_string(id));
}

void SpriteDatasetConfig::validate() const {
  if (resolution < 12) throw std::invalid_argument("sprites: resolution must be >= 12");
  if (channels < 1) throw std::invalid_argument("sprites: channels must be >= 1");
  if (frames < 1) throw std::invalid_argument("sprites: frames must be >= 1");
  if (fps <= 0) throw std::invalid_argument("sprites: fps must be positive");
  if (num_classes < 1 || num_classes > kNumSpriteClasses)
    throw std::invalid_argument("sprites: num_classes out of range");
  if (clips_per_class < 1) throw std::invalid_argument("sprites: clips_per_class must be >= 1");
  if (speed_min < 0 || speed_max < speed_min)
    throw std::invalid_argument("sprites: bad speed range");
}

SpriteDatasetConfig SpriteDatasetConfig::from_config(Config& cfg) {
  SpriteDatasetConfig c;
  c.resolution = cfg.get_long("resolution", c.resolution);
  c.channels = cfg.get_long("channels", c.channels);
  c.frames = cfg.get_long("frames", c.frames);
  c.fps = cfg.get_double("fps", c.fps);
  c.num_classes = cfg.get_long("num_classes", c.num_classes);
  c.clips_per_class = cfg.get_long("clips_per_class", c.clips_per_class);
  c.speed_min = cfg.get_double("speed_min", c.speed_min);
  c.speed_max = cfg.get_double("speed_max", c.speed_max);
  c.seed = cfg.get_u64("data_seed", c.seed);
  c.validate();
  return c;
}

namespace {

struct Disc {
  double cx, cy, r;
};

// coverage ramps from 1 inside the disc to 0 one pixel outside it
void render(std::vector<double>& img, long res, const std::vector<Disc>& discs) {
  for (long y = 0; y < res; ++y)
    for (long x = 0; x < res; ++x) {
      double cov = 0.0;
      for (const Disc& d : discs) {
        double dist = std::hypot(static_cast<double>(x) - d.cx, static_cast<double>(y) - d.cy);
        cov = std::max(cov, std::clamp(1.0 - (dist - d.r), 0.0, 1.0));
      }
      img[static_cast<size_t>(y * res + x)] = 2.0 * cov - 1.0;
    }
}

double uniform_in(Rng& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return lo + rng.uniform() * (hi - lo);
}

}  // namespace

VideoClip synth_clip(long class_id, Rng& rng, const SpriteDatasetConfig& cfg) {
  cfg.validate();
  if (class_id < 0 || class_id >= cfg.num_classes)
    throw std::invalid_argument("synth_clip: class " + std::to_string(class_id) +
                                " out of range");
  const long res = cfg.resolution;
  const double sc = static_cast<double>(res) / 16.0;
  const double speed = uniform_in(rng, cfg.speed_min, cfg.speed_max) * sc;
  const double step = speed / cfg.fps;  // px per frame
  const double span = step * static_cast<double>(cfg.frames - 1);
  const double hi = static_cast<double>(res - 1);

  std::vector<std::vector<Disc>> frames_geom;
  if (class_id <= 3) {
    double r = uniform_in(rng, 2.0, 3.0) * sc;
    double margin = r + 1.5;
    double dxs = class_id == 0 ? -step : class_id == 1 ? step : 0.0;
    double dys = class_id == 2 ? -step : class_id == 3 ? step : 0.0;
    double x0 = uniform_in(rng, margin + (dxs < 0 ? span : 0.0),
                           hi - margin - (dxs > 0 ? span : 0.0));
    double y0 = uniform_in(rng, margin + (dys < 0 ? span : 0.0),
                           hi - margin - (dys > 0 ? span : 0.0));
    for (long i = 0; i < cfg.frames; ++i)
      frames_geom.push_back({{x0 + dxs * i, y0 + dys * i, r}});
  } else if (class_id == 4) {
    // dumbbell: two discs orbiting the clip center
    double cx = hi / 2.0 + uniform_in(rng, -1.0, 1.0) * sc;
    double cy = hi / 2.0 + uniform_in(rng, -1.0, 1.0) * sc;
    double orbit = uniform_in(rng, 2.5, 3.5) * sc;
    double r = uniform_in(rng, 1.2, 1.8) * sc;
    double omega = speed * 0.8 / sc / cfg.fps;  // rad per frame
    double theta0 = rng.uniform() * 2.0 * M_PI;
    for (long i = 0; i < cfg.frames; ++i) {
      double th = theta0 + omega * static_cast<double>(i);
      frames_geom.push_back({{cx + orbit * std::cos(th), cy + orbit * std::sin(th), r},
                             {cx - orbit * std::cos(th), cy - orbit * std::sin(th), r}});
    }
  } else {
    double cx = hi / 2.0 + uniform_in(rng, -1.0, 1.0) * sc;
    double cy = hi / 2.0 + uniform_in(rng, -1.0, 1.0) * sc;
    double r0 = uniform_in(rng, 1.5, 2.0) * sc;
    double grow = speed * 0.5 / cfg.fps;  // px of radius per frame
    for (long i = 0; i < cfg.frames; ++i)
      frames_geom.push_back({{cx, cy, r0 + grow * static_cast<double>(i)}});
  }

  VideoClip clip;
  clip.fps = cfg.fps;
  clip.condition_id = class_id;
  clip.latent = make_tensor({cfg.frames, cfg.channels, res, res}, default_dtype());
  std::vector<double> img(static_cast<size_t>(res * res));
  long per_chan = res * res;
  for (long i = 0; i < cfg.frames; ++i) {
    render(img, res, frames_geom[static_cast<size_t>(i)]);
    long base = i * cfg.channels * per_chan;
    for (long c = 0; c < cfg.channels; ++c)
      for (long y = 0; y < res; ++y)
        for (long x = 0; x < res; ++x)
          clip.latent.set_value(base + c * per_chan + y * res + x,
                                x >= c ? img[static_cast<size_t>(y * res + x - c)] : -1.0);
  }
  return clip;
}

std::vector<VideoClip> synth_dataset(const SpriteDatasetConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  std::vector<VideoClip> out;
  for (long cls = 0; cls < cfg.num_classes; ++cls)
    for (long k = 0; k < cfg.clips_per_class; ++k) {
      Rng sub = root.fork(static_cast<std::uint64_t>(cls * cfg.clips_per_class + k));
      out.push_back(synth_clip(cls, sub, cfg));
    }
  return out;
}

void write_dataset(const std::string& dir, const std::vector<VideoClip>& clips) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot open manifest in " + dir);
  for (size_t i = 0; i < clips.size(); ++i) {
    std::ostringstream name;
    name << "clip_" << std::setw(5) << std::setfill('0') << i << ".atns";
    save_atns((fs::path(dir) / name.str()).string(), clips[i].latent);
    manifest << name.str() << ' ' << clips[i].condition_id << ' ' << clips[i].fps << '\n';
  }
}

std::vector<VideoClip> load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot open manifest in " + dir);
  std::vector<VideoClip> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    VideoClip clip;
    if (!(ss >> name >> clip.condition_id >> clip.fps))
      throw std::runtime_error("bad manifest line: " + line);
    clip.latent = load_atns((fs::path(dir) / name).string());
    out.push_back(std::move(clip));
  }
  return out;
}

}  // namespace vdiff
