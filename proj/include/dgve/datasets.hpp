#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dgve/degradation.hpp"
#include "dgve/image.hpp"

namespace dgve {

enum class ItemKind { Image, Clip };
enum class Split { Train, Val, Test };
std::string to_string(ItemKind k);
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct CorpusItem {
  std::string path;  // relative to the manifest root
  ItemKind kind = ItemKind::Image;
  Split split = Split::Train;
  std::string hash;  // SHA-256 of the file, or of the frame hashes for a clip
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<CorpusItem> items;

  std::vector<CorpusItem> select(Split split, ItemKind kind) const;
  int64_t count(Split split, ItemKind kind) const;

  // One tab-separated line per item: path, kind, split, hash.
  std::string to_text() const;
  static CorpusManifest from_text(const std::string& text, const std::filesystem::path& root);
  void save(const std::filesystem::path& file) const;
  static CorpusManifest load(const std::filesystem::path& file, const std::filesystem::path& root);
};

// Integer counts summing to n, proportional to ratios, by largest remainder
// (ties go to the earlier ratio).
std::vector<int64_t> largest_remainder(int64_t n, const std::vector<double>& ratios);

// Scans root for *.png images and clip directories (those holding video.txt),
// shuffles by seed and splits each kind by the ratios. Items with equal content
// hashes always share a split.
CorpusManifest build_manifest(const std::filesystem::path& root, const std::array<double, 3>& ratios,
                              uint64_t seed);

struct PairProvenance {
  std::string source;  // path of the HQ item, relative to the manifest root
  int64_t top = 0, left = 0, patch = 0;
  DegradationLevel level = DegradationLevel::L1;
  uint64_t seed = 0;  // noise realization seed
  DegradationParameters params;

  std::string to_key_values() const;
  static PairProvenance from_key_values(const std::string& text);
};

struct PairedSample {
  ImageTensor x_h;
  ImageTensor x_l;
  PairProvenance provenance;
};

struct PairSpec {
  std::vector<DegradationKind> kinds{kBasicKinds.begin(), kBasicKinds.end()};
  std::vector<DegradationLevel> levels{kAllLevels.begin(), kAllLevels.end()};
  int64_t count = 0;
  int64_t patch = 64;  // HQ patch side
  int64_t scale = 2;
  uint64_t seed = 0;
};

struct NamedImage {
  std::string path;
  ImageTensor image;
};

// Streams `spec.count` samples; sample i depends only on (spec.seed, i).
void for_each_pair(const std::vector<NamedImage>& sources, const PairSpec& spec,
                   const std::function<void(PairedSample&&)>& sink);
std::vector<PairedSample> make_pairs(const std::vector<NamedImage>& sources, const PairSpec& spec);
// Rebuilds x_l from a provenance record and its source image.
ImageTensor reproduce_pair(const PairProvenance& p, const ImageTensor& source);

// Loads every image of a split (clips excluded).
std::vector<NamedImage> load_images(const CorpusManifest& m, Split split);
std::vector<VideoSequence> load_clips(const CorpusManifest& m, Split split);

// Contiguous window of `length` frames from a seeded choice among clips long enough.
VideoSequence sample_clip(const std::vector<VideoSequence>& clips, int64_t length, uint64_t seed,
                          int64_t* clip_index = nullptr, int64_t* offset = nullptr);

// Procedural stand-in content: smooth shading, soft blobs, vessels and fine texture.
ImageTensor synthetic_scene(int64_t height, int64_t width, uint64_t seed);
// A camera pan across a larger synthetic scene.
VideoSequence synthetic_clip(int64_t height, int64_t width, int64_t frames, uint64_t seed);
// Degrades every frame with parameters that drift linearly between two draws of
// the same kind and level; the output frames are downscaled by `scale`.
VideoSequence degrade_clip(const VideoSequence& clip, DegradationKind kind, DegradationLevel level, int64_t scale,
                           uint64_t seed);

}  // namespace dgve
