#include "dgve/video.hpp"

#include <chrono>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

ComponentFlops component_flops(ModelBundle& bundle, int64_t h, int64_t w) {
  ComponentFlops f;
  f.dam = bundle.dam->budget(h, w).flops;
  f.dgem = bundle.dgem->budget(h, w).total().flops;
  f.drpm = bundle.drpm->budget().flops;
  return f;
}

double estimate_avg_flops(int64_t delta_t, const ComponentFlops& f) {
  if (delta_t < 1) throw ParameterError("delta_t: must be >= 1");
  const double inv = 1.0 / static_cast<double>(delta_t);
  return f.dgem + f.dam * inv + f.drpm * (1.0 - inv);
}

namespace {

torch::Tensor dam_dc(ModelBundle& bundle, const torch::Tensor& x) {
  return bundle.dgem->compress(bundle.represent(x).d_map);
}

torch::Tensor model_input(ModelBundle& bundle, const ImageTensor& img) {
  return img.batched().to(bundle.dgem->recon3->weight.scalar_type());
}

}  // namespace

ImageTensor enhance_image(ModelBundle& bundle, const ImageTensor& x_l, torch::Tensor* dc_out) {
  torch::NoGradGuard guard;
  auto x = model_input(bundle, x_l);
  auto dc = dam_dc(bundle, x);
  auto y = bundle.dgem->forward(x, dc);
  if (dc_out) *dc_out = dc[0];
  return ImageTensor::from_batch(y.to(torch::kFloat32), 0);
}

std::vector<FrameRecord> enhance_video(const VideoSequence& frames, ModelBundle& bundle, const SchedulerConfig& cfg,
                                       const VideoRunOptions& opts) {
  cfg.validate();
  if (frames.frames.empty()) throw ParameterError("enhance_video: no frames");
  torch::NoGradGuard guard;
  PropagationState local;
  local.capacity = bundle.arch.drpm.context;
  PropagationState& state = opts.state ? *opts.state : local;
  const bool fresh = state.empty();
  if (!fresh && opts.start_index <= state.last_index())
    throw StateError("enhance_video: start_index must follow the carried state");

  const auto& first = frames.frames.front();
  const auto comp = component_flops(bundle, first.height(), first.width());
  std::vector<FrameRecord> out;
  out.reserve(frames.frames.size());
  for (size_t i = 0; i < frames.frames.size(); ++i) {
    const auto& img = frames.frames[i];
    if (img.height() != first.height() || img.width() != first.width())
      throw ShapeError("frame " + std::to_string(i) + " is " + std::to_string(img.height()) + "x" +
                       std::to_string(img.width()) + ", stream started at " + std::to_string(first.height()) + "x" +
                       std::to_string(first.width()));
    FrameRecord r;
    r.index = opts.start_index + static_cast<int64_t>(i);
    const bool key = r.index % cfg.delta_t == 0 || (i == 0 && fresh && cfg.warm_start);
    r.source = key ? RepresentationSource::DAM : RepresentationSource::DRPM;

    const auto t0 = std::chrono::steady_clock::now();
    auto x = model_input(bundle, img);
    torch::Tensor dc = key ? dam_dc(bundle, x)[0] : propagate(state, bundle.drpm);
    auto y = bundle.dgem->forward(x, dc.unsqueeze(0));
    const auto t1 = std::chrono::steady_clock::now();

    update_state(state, r.index, dc, r.source);
    r.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    r.flops = comp.dgem + (key ? comp.dam : comp.drpm);
    r.dc = dc;
    if (opts.keep_images || opts.on_frame) {
      r.input = img;
      r.output = ImageTensor::from_batch(y.to(torch::kFloat32), 0);
    }
    if (opts.on_frame) opts.on_frame(r);
    if (!opts.keep_images) {
      r.input = ImageTensor();
      r.output = ImageTensor();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string frame_csv(const std::vector<FrameRecord>& records, bool include_ms) {
  std::ostringstream ss;
  ss << (include_ms ? "index,source,ms,flops\n" : "index,source,flops\n");
  for (const auto& r : records) {
    ss << r.index << "," << to_string(r.source) << ",";
    if (include_ms) ss << format_double(r.ms) << ",";
    ss << format_double(r.flops) << "\n";
  }
  return ss.str();
}

}  // namespace dgve
