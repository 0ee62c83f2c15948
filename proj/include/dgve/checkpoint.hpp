#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace dgve {

// Versioned binary container: header {magic, format_version, module_name, metadata,
// shape manifest} followed by raw little-endian tensor data in manifest order.
// Byte-identical for identical contents.
class Checkpoint {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string module_name) : module_name_(std::move(module_name)) {}

  const std::string& module_name() const { return module_name_; }
  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }
  const std::string& meta_at(const std::string& key) const;

  void add(const std::string& name, const torch::Tensor& t);
  bool has(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  // expected_module empty: accept any module name.
  static Checkpoint load(const std::filesystem::path& path, const std::string& expected_module = "");

 private:
  std::string module_name_;
  std::map<std::string, std::string> meta_;
  std::vector<std::pair<std::string, torch::Tensor>> entries_;
};

// Parameters and buffers under "prefix.".
void store_module(Checkpoint& ck, const std::string& prefix, const torch::nn::Module& m);
// Copies values in place; missing names or shape/dtype mismatches throw.
void restore_module(const Checkpoint& ck, const std::string& prefix, torch::nn::Module& m);

void store_adam(Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt);
void restore_adam(const Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt);

}  // namespace dgve
