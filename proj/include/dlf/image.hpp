#pragma once

#include "dlf/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dlf {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Planes = std::array<Plane, 3>;

/// RGB image with values in [0, 1], stored as three row-major planes.
class Image {
 public:
  Image() = default;
  Image(Index height, Index width, double fill = 0.0);
  /// Values are clamped to [0, 1]. Throws NumericError on non-finite input.
  explicit Image(Planes planes);

  static Image from_function(Index height, Index width, const std::function<double(int, Index, Index)>& f);

  Index height() const { return planes_[0].rows(); }
  Index width() const { return planes_[0].cols(); }
  bool empty() const { return planes_[0].size() == 0; }
  const Plane& channel(int c) const { return planes_[static_cast<std::size_t>(c)]; }
  const Planes& planes() const { return planes_; }
  double operator()(int c, Index y, Index x) const { return planes_[static_cast<std::size_t>(c)](y, x); }

  Image crop(Index y, Index x, Index height, Index width) const;

  bool operator==(const Image& other) const;

 private:
  Planes planes_;
};

/// [1, 3, H, W] tensor of the image.
template <typename Scalar>
Tensor<Scalar> image_tensor(const Image& image);

/// [N, 3, H, W] tensor of equally sized images.
template <typename Scalar>
Tensor<Scalar> images_tensor(const std::vector<Image>& images);

/// Image `batch` of an [N, 3, H, W] tensor, clamped to [0, 1].
template <typename Scalar>
Image image_from_tensor(const Tensor<Scalar>& t, Index batch = 0);

std::vector<unsigned char> encode_png(const Image& image);
Image decode_png(const unsigned char* data, std::size_t size);
inline Image decode_png(const std::vector<unsigned char>& bytes) { return decode_png(bytes.data(), bytes.size()); }
Image read_png(const std::string& path);
void write_png(const Image& image, const std::string& path);

}  // namespace dlf
