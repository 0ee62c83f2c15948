#include "dgve/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dgve/errors.hpp"

namespace dgve {

namespace {

constexpr char kMagic[8] = {'D', 'G', 'V', 'E', 'C', 'K', 'P', 'T'};

struct Writer {
  std::string buf;
  void u32(uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
  void i64(int64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf.append(s);
  }
};

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n) {
    if (pos + n > buf.size()) throw IoError("checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  int64_t i64() {
    need(8);
    int64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

uint32_t dtype_code(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kUInt8: return 4;
    default: throw ParameterError("checkpoint: unsupported dtype");
  }
}

torch::Dtype code_dtype(uint32_t c) {
  switch (c) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kUInt8;
    default: throw IoError("checkpoint: unknown dtype code");
  }
}

}  // namespace

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw StateError("checkpoint '" + module_name_ + "' lacks metadata '" + key + "'");
  return it->second;
}

void Checkpoint::add(const std::string& name, const torch::Tensor& t) {
  if (has(name)) throw StateError("checkpoint: duplicate entry " + name);
  entries_.emplace_back(name, t.detach().cpu().contiguous().clone());
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw StateError("checkpoint '" + module_name_ + "' lacks entry '" + name + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  Writer w;
  w.buf.append(kMagic, 8);
  w.u32(kFormatVersion);
  w.str(module_name_);
  w.u32(static_cast<uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    w.str(name);
    w.u32(dtype_code(t.scalar_type()));
    w.u32(static_cast<uint32_t>(t.dim()));
    for (int64_t s : t.sizes()) w.i64(s);
  }
  for (const auto& e : entries_) {
    const auto& t = e.second;
    w.buf.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path, const std::string& expected_module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(8);
  if (std::memcmp(buf.data(), kMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  r.pos = 8;
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw IoError("unsupported checkpoint format version " + std::to_string(version));
  Checkpoint ck(r.str());
  if (!expected_module.empty() && ck.module_name_ != expected_module)
    throw IoError("checkpoint holds module '" + ck.module_name_ + "', expected '" + expected_module + "'");
  const uint32_t nmeta = r.u32();
  for (uint32_t i = 0; i < nmeta; ++i) {
    auto k = r.str();
    ck.meta_[k] = r.str();
  }
  struct Spec {
    std::string name;
    torch::Dtype dtype;
    std::vector<int64_t> shape;
  };
  std::vector<Spec> specs(r.u32());
  for (auto& s : specs) {
    s.name = r.str();
    s.dtype = code_dtype(r.u32());
    s.shape.resize(r.u32());
    for (auto& d : s.shape) d = r.i64();
  }
  for (const auto& s : specs) {
    auto t = torch::empty(s.shape, torch::TensorOptions().dtype(s.dtype));
    const size_t n = static_cast<size_t>(t.numel() * t.element_size());
    r.need(n);
    std::memcpy(t.data_ptr(), buf.data() + r.pos, n);
    r.pos += n;
    ck.entries_.emplace_back(s.name, t);
  }
  if (r.pos != buf.size()) throw IoError("checkpoint has trailing bytes");
  return ck;
}

void store_module(Checkpoint& ck, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters(true)) ck.add(prefix + "." + p.key(), p.value());
  for (const auto& b : m.named_buffers(true)) ck.add(prefix + "." + b.key(), b.value());
}

void restore_module(const Checkpoint& ck, const std::string& prefix, torch::nn::Module& m) {
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = ck.get(prefix + "." + name);
    if (src.sizes() != dst.sizes())
      throw ShapeError("checkpoint entry " + prefix + "." + name + " has mismatched shape");
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& p : m.named_parameters(true)) copy(p.key(), p.value());
  for (auto& b : m.named_buffers(true)) copy(b.key(), b.value());
}

void store_adam(Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt) {
  int64_t idx = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      auto it = opt.state().find(p.unsafeGetTensorImpl());
      if (it != opt.state().end()) {
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        const std::string base = prefix + "." + std::to_string(idx);
        ck.add(base + ".step", torch::tensor({s.step()}, torch::kInt64));
        ck.add(base + ".exp_avg", s.exp_avg());
        ck.add(base + ".exp_avg_sq", s.exp_avg_sq());
      }
      ++idx;
    }
  }
}

void restore_adam(const Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt) {
  int64_t idx = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      const std::string base = prefix + "." + std::to_string(idx);
      if (ck.has(base + ".step")) {
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(ck.get(base + ".step")[0].item<int64_t>());
        s->exp_avg(ck.get(base + ".exp_avg").to(p.scalar_type()).clone());
        s->exp_avg_sq(ck.get(base + ".exp_avg_sq").to(p.scalar_type()).clone());
        opt.state()[p.unsafeGetTensorImpl()] = std::move(s);
      } else {
        opt.state().erase(p.unsafeGetTensorImpl());
      }
      ++idx;
    }
  }
}

}  // namespace dgve
