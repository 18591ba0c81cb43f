#include "fo3d/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fo3d/errors.hpp"

namespace fo3d {

RgbImage RgbImage::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width || y0 + h > height) {
    throw std::invalid_argument("RgbImage::crop: rectangle outside image");
  }
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = at(x0, y0 + y);
    std::copy(src, src + static_cast<std::size_t>(w) * 3, out.at(0, y));
  }
  return out;
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError("cannot read color image: " + path.string());
  RgbImage img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      std::uint8_t* px = img.at(x, y);
      px[0] = row[x][2];
      px[1] = row[x][1];
      px[2] = row[x][0];
    }
  }
  return img;
}

DepthImage read_depth_png(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (raw.empty()) throw LoadError("cannot read depth image: " + path.string());
  if (raw.type() != CV_16UC1) {
    throw LoadError("depth image must be 16-bit single channel: " + path.string());
  }
  DepthImage depth(raw.cols, raw.rows);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<std::uint16_t>(y);
    std::copy(row, row + raw.cols, depth.millimeters.begin() + static_cast<std::ptrdiff_t>(y) * raw.cols);
  }
  return depth;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* px = image.at(x, y);
      row[x] = cv::Vec3b(px[2], px[1], px[0]);
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth) {
  cv::Mat raw(depth.height, depth.width, CV_16UC1);
  for (int y = 0; y < depth.height; ++y) {
    auto* row = raw.ptr<std::uint16_t>(y);
    for (int x = 0; x < depth.width; ++x) row[x] = depth.raw(x, y);
  }
  if (!cv::imwrite(path.string(), raw)) throw DataError("cannot write " + path.string());
}

void write_index_png(const std::filesystem::path& path, int width, int height,
                     const std::vector<std::int32_t>& labels) {
  if (labels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("write_index_png: label count does not match size");
  }
  cv::Mat out(height, width, CV_8UC1);
  for (int y = 0; y < height; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < width; ++x) {
      row[x] = static_cast<std::uint8_t>(labels[static_cast<std::size_t>(y) * width + x] & 0xFF);
    }
  }
  if (!cv::imwrite(path.string(), out)) throw DataError("cannot write " + path.string());
}

}  // namespace fo3d
