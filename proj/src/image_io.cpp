#include "pnet/image_io.hpp"

#include <cstring>

#include <png.h>

namespace pnet {

namespace {

png_uint_32 format_for(int channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ImageIoError("only 1- or 3-channel images are supported");
}

}  // namespace

Image8 read_png(const std::filesystem::path& path, int channels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageIoError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = format_for(channels);
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageIoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.pixels.size() != std::size_t(image.width) * image.height * image.channels)
    throw ImageIoError("image buffer does not match its extents");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = format_for(image.channels);
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw ImageIoError("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace pnet
