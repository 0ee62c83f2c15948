#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dgve/config.hpp"
#include "dgve/drpm.hpp"
#include "dgve/image.hpp"
#include "dgve/training.hpp"

namespace dgve {

struct FrameRecord {
  int64_t index = 0;
  ImageTensor input;
  ImageTensor output;
  RepresentationSource source = RepresentationSource::DAM;
  double ms = 0.0;     // wall time of the representation step plus enhancement
  double flops = 0.0;  // analytic estimate for this frame
  torch::Tensor dc;    // [D_c] actually used
};

// Per-frame FLOPs of each component at one input resolution.
struct ComponentFlops {
  double dam = 0.0;   // encoder pass
  double dgem = 0.0;  // compression + enhancement body
  double drpm = 0.0;  // one prediction from a full context
};

// h, w: low-resolution frame size.
ComponentFlops component_flops(ModelBundle& bundle, int64_t h, int64_t w);
// F_DGEM + F_DAM / dt + F_DRPM (1 - 1/dt).
double estimate_avg_flops(int64_t delta_t, const ComponentFlops& f);

// Single-image path: DAM on the input, compression, then DGEM.
ImageTensor enhance_image(ModelBundle& bundle, const ImageTensor& x_l, torch::Tensor* dc_out = nullptr);

struct VideoRunOptions {
  PropagationState* state = nullptr;  // carried across calls; a fresh one is used when null
  int64_t start_index = 0;            // stream index of frames[0]
  bool keep_images = true;            // keep input/output tensors in the records
  std::function<void(const FrameRecord&)> on_frame;
};

// Strictly in-order streaming enhancement. Key frames (index % delta_t == 0, and the
// first frame of a fresh stream under warm_start) take d_c from the DAM; the rest
// from the DRPM. Throws ShapeError when the frame size changes mid-stream.
std::vector<FrameRecord> enhance_video(const VideoSequence& frames, ModelBundle& bundle,
                                       const SchedulerConfig& cfg, const VideoRunOptions& opts = {});

// index,source,ms,flops per frame. include_ms=false writes a timing-free variant.
std::string frame_csv(const std::vector<FrameRecord>& records, bool include_ms = true);

}  // namespace dgve
