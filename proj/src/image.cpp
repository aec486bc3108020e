#include "dlf/image.hpp"

#include "dlf/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dlf {

Image::Image(Index height, Index width, double fill) {
  if (height < 0 || width < 0) throw DimensionError("negative image size");
  const double v = std::clamp(fill, 0.0, 1.0);
  for (auto& p : planes_) p = Plane::Constant(height, width, v);
}

Image::Image(Planes planes) : planes_(std::move(planes)) {
  for (const auto& p : planes_) {
    if (p.rows() != planes_[0].rows() || p.cols() != planes_[0].cols()) {
      throw DimensionError("image planes differ in size");
    }
    if (!p.isFinite().all()) throw NumericError("image contains non-finite values");
  }
  for (auto& p : planes_) p = p.cwiseMax(0.0).cwiseMin(1.0);
}

Image Image::from_function(Index height, Index width, const std::function<double(int, Index, Index)>& f) {
  Planes planes;
  for (int c = 0; c < 3; ++c) {
    Plane& p = planes[static_cast<std::size_t>(c)];
    p.resize(height, width);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) p(y, x) = f(c, y, x);
  }
  return Image(std::move(planes));
}

Image Image::crop(Index y, Index x, Index h, Index w) const {
  if (y < 0 || x < 0 || h < 0 || w < 0 || y + h > height() || x + w > width()) {
    throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(y) +
                         "," + std::to_string(x) + ") outside " + std::to_string(height()) + "x" +
                         std::to_string(width()) + " image");
  }
  Planes out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = planes_[c].block(y, x, h, w);
  Image img;
  img.planes_ = std::move(out);
  return img;
}

bool Image::operator==(const Image& other) const {
  if (height() != other.height() || width() != other.width()) return false;
  for (std::size_t c = 0; c < 3; ++c)
    if (!(planes_[c] == other.planes_[c]).all()) return false;
  return true;
}

template <typename Scalar>
Tensor<Scalar> images_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw DimensionError("empty image batch");
  const Index h = images[0].height(), w = images[0].width();
  typename Tensor<Scalar>::Array a(static_cast<Index>(images.size()) * 3 * h * w);
  Index off = 0;
  for (const Image& img : images) {
    if (img.height() != h || img.width() != w) throw DimensionError("image batch with mixed sizes");
    for (int c = 0; c < 3; ++c) {
      a.segment(off, h * w) = Eigen::Map<const Eigen::ArrayXd>(img.channel(c).data(), h * w).cast<Scalar>();
      off += h * w;
    }
  }
  return Tensor<Scalar>({static_cast<Index>(images.size()), 3, h, w}, std::move(a));
}

template <typename Scalar>
Tensor<Scalar> image_tensor(const Image& image) {
  return images_tensor<Scalar>({image});
}

template <typename Scalar>
Image image_from_tensor(const Tensor<Scalar>& t, Index batch) {
  if (t.rank() != 4 || t.dim(1) != 3 || batch < 0 || batch >= t.dim(0)) {
    throw DimensionError("expected [N,3,H,W] tensor, got " + shape_string(t.shape()));
  }
  const Index h = t.dim(2), w = t.dim(3);
  Planes planes;
  for (int c = 0; c < 3; ++c) {
    Plane p(h, w);
    Eigen::Map<Eigen::ArrayXd>(p.data(), h * w) = t.values().segment((batch * 3 + c) * h * w, h * w).template cast<double>();
    planes[static_cast<std::size_t>(c)] = std::move(p);
  }
  return Image(std::move(planes));
}

template Tensor<float> image_tensor(const Image&);
template Tensor<double> image_tensor(const Image&);
template Tensor<float> images_tensor(const std::vector<Image>&);
template Tensor<double> images_tensor(const std::vector<Image>&);
template Image image_from_tensor(const Tensor<float>&, Index);
template Image image_from_tensor(const Tensor<double>&, Index);

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<unsigned char> to_rgb8(const Image& image) {
  const Index h = image.height(), w = image.width();
  std::vector<unsigned char> px(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        px[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            static_cast<unsigned char>(std::lround(image(c, y, x) * 255.0));
  return px;
}

}  // namespace

std::vector<unsigned char> encode_png(const Image& image) {
  if (image.empty()) throw DimensionError("cannot encode an empty image");
  const std::vector<unsigned char> px = to_rgb8(image);
  PngImage png;
  png.img.width = static_cast<png_uint_32>(image.width());
  png.img.height = static_cast<png_uint_32>(image.height());
  png.img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + png.img.message);
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + png.img.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const unsigned char* data, std::size_t size) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, data, size)) {
    throw IoError(std::string("PNG decode failed: ") + png.img.message);
  }
  png.img.format = PNG_FORMAT_RGB;
  const Index h = png.img.height, w = png.img.width;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(png.img));
  if (!png_image_finish_read(&png.img, nullptr, px.data(), 0, nullptr)) {
    throw IoError(std::string("PNG decode failed: ") + png.img.message);
  }
  return Image::from_function(h, w, [&](int c, Index y, Index x) {
    return px[static_cast<std::size_t>((y * w + x) * 3 + c)] / 255.0;
  });
}

Image read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_png(const Image& image, const std::string& path) {
  const std::vector<unsigned char> bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace dlf
