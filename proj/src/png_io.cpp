#include <png.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "dgve/errors.hpp"
#include "dgve/image.hpp"
#include "dgve/util.hpp"

namespace dgve {

ImageTensor load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int64_t h = img.height, w = img.width;
  auto hwc = torch::from_blob(buf.data(), {h, w, 3}, torch::kUInt8);
  return ImageTensor(hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous());
}

void save_png(const ImageTensor& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto hwc = image.data()
                 .to(torch::kFloat64)
                 .mul(255.0)
                 .round()
                 .clamp(0, 255)
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, hwc.data_ptr<uint8_t>(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

VideoSequence load_video(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a frame directory: " + dir.string());
  VideoSequence video;
  const auto meta = dir / "video.txt";
  if (fs::exists(meta)) {
    std::istringstream ss(read_text(meta));
    std::string line;
    while (std::getline(ss, line)) {
      std::smatch m;
      if (std::regex_match(line, m, std::regex(R"(\s*frame_rate\s*=\s*([0-9.eE+-]+)\s*)")))
        video.frame_rate = std::stod(m[1]);
    }
  }
  for (int64_t i = 0;; ++i) {
    const auto p = dir / frame_filename(i);
    if (!fs::exists(p)) break;
    video.frames.push_back(load_png(p));
  }
  if (video.frames.empty()) throw IoError("no frames found in " + dir.string());
  video.validate();
  return video;
}

void save_video(const VideoSequence& video, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < video.frames.size(); ++i)
    save_png(video.frames[i], dir / frame_filename(static_cast<int64_t>(i)));
  write_text(dir / "video.txt", "frame_rate = " + format_double(video.frame_rate) + "\n");
}

}  // namespace dgve
