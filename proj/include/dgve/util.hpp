#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace dgve {

// Mix several integers into a 64-bit seed (splitmix64 chain). Used to derive
// independent, order-free streams such as (seed, stage, epoch, step).
uint64_t derive_seed(std::initializer_list<uint64_t> parts);

// CPU generator seeded deterministically; never touches the global generator.
at::Generator make_generator(uint64_t seed);

// Uniform double in [lo, hi) drawn from a splitmix-style stream.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : state_(seed) {}
  uint64_t next_u64();
  double uniform(double lo = 0.0, double hi = 1.0);
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
  double normal();
  // Fisher-Yates permutation of [0, n).
  std::vector<int64_t> permutation(int64_t n);

 private:
  uint64_t state_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Shortest round-trip decimal representation, stable across runs.
std::string format_double(double v);

// Writes "name = sha256" for every regular file below dir (sorted, manifest
// itself excluded) into dir/manifest.txt.
void write_hash_manifest(const std::filesystem::path& dir);

// Logs to stderr with a fixed prefix; warnings never abort.
void log_warning(std::string_view msg);
void log_info(std::string_view msg);

}  // namespace dgve
