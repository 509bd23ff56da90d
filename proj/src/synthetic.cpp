#include <random>

#include <fmt/format.h>

#include "surgqa/annotations.hpp"

namespace surgqa::annotations {

namespace {

constexpr std::array<const char*, 7> kEndoVisInstruments = {
    "bipolar forceps",  "prograsp forceps",   "large needle driver", "monopolar curved scissors",
    "ultrasound probe", "suction instrument", "clip applier"};
constexpr std::array<const char*, 6> kEndoVisActions = {
    "tissue manipulation", "tool manipulation", "cutting", "cauterization", "suturing", "idle"};
constexpr std::array<const char*, 4> kCoPESDInstruments = {
    "electric knife", "hemostatic forceps", "injection needle", "grasping forceps"};
constexpr std::array<const char*, 3> kCoPESDTissues = {"mucosal flap", "submucosa",
                                                       "muscularis"};
constexpr std::array<const char*, 6> kCoPESDMotions = {"idle",    "lift",    "dissect",
                                                       "retract", "inject", "stay idle"};

template <typename Arr>
const char* pick(const Arr& arr, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, arr.size() - 1);
  return arr[d(rng)];
}

BoundingBox random_pixel_box(ImageSize size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> wx(size.width / 10, size.width / 3);
  std::uniform_int_distribution<int> wy(size.height / 10, size.height / 3);
  int bw = wx(rng);
  int bh = wy(rng);
  std::uniform_int_distribution<int> x(0, size.width - bw);
  std::uniform_int_distribution<int> y(0, size.height - bh);
  int x1 = x(rng);
  int y1 = y(rng);
  return normalize_box({double(x1), double(y1), double(x1 + bw), double(y1 + bh)}, size.width,
                       size.height);
}

}  // namespace

std::vector<FrameAnnotation> synthetic_frames(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FrameAnnotation> frames;
  frames.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    FrameAnnotation f;
    const bool endovis = (n % 2 == 0);
    f.source = endovis ? SourceKind::kEndoVis : SourceKind::kCoPESD;
    f.image_size = endovis ? kEndoVisImageSize : kCoPESDImageSize;
    f.frame_id = fmt::format("{}-{:04d}", endovis ? "ev" : "cp", n);
    f.image_path = fmt::format("images/{}.png", f.frame_id);
    std::uniform_int_distribution<int> count_dist(1, 3);
    int k = count_dist(rng);
    for (int i = 0; i < k; ++i) {
      InstrumentObservation obs;
      obs.box = random_pixel_box(f.image_size, rng);
      if (endovis) {
        obs.category = pick(kEndoVisInstruments, rng);
        obs.motion = pick(kEndoVisActions, rng);
      } else {
        obs.category = pick(kCoPESDInstruments, rng);
        obs.motion = pick(kCoPESDMotions, rng);
        if (MotionPolicy{}.requires_direction(obs.motion)) {
          std::uniform_int_distribution<std::size_t> d(0, kAllDirections.size() - 1);
          obs.direction = kAllDirections[d(rng)];
        }
      }
      f.instruments.push_back(std::move(obs));
    }
    TissueObservation t;
    t.name = endovis ? "kidney" : pick(kCoPESDTissues, rng);
    if (rng() % 4 != 0) t.box = random_pixel_box(f.image_size, rng);
    f.tissues.push_back(std::move(t));
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace surgqa::annotations
