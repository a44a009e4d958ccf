#pragma once

// PNG and JPEG decoding (format chosen by magic bytes) and PNG encoding.
// Link against tinyalign_io.

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "tinyalign/data.hpp"
#include "tinyalign/errors.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/serialize.hpp"

namespace tinyalign {

namespace detail {

inline Image decode_png(const std::uint8_t* data, std::size_t size) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, data, size)) fail(ErrorKind::data, std::string("png: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out(img.width, img.height, 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    fail(ErrorKind::data, std::string("png: ") + img.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// No C++ objects with destructors may be live between setjmp and longjmp, so
// decoding writes into a caller-owned buffer.
inline bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, std::vector<std::uint8_t>& pixels,
                            std::size_t& w, std::size_t& h, char* message) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = cinfo.output_width;
  h = cinfo.output_height;
  pixels.resize(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace detail

/// Decodes PNG or JPEG bytes to 8-bit RGB.
inline Image decode_image(const std::uint8_t* data, std::size_t size) {
  static const std::uint8_t png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (size >= 8 && std::memcmp(data, png_magic, 8) == 0) return detail::decode_png(data, size);
  if (size >= 3 && data[0] == 0xff && data[1] == 0xd8 && data[2] == 0xff) {
    Image out;
    out.channels = 3;
    char message[JMSG_LENGTH_MAX] = {};
    if (!detail::decode_jpeg_raw(data, size, out.pixels, out.width, out.height, message))
      fail(ErrorKind::data, std::string("jpeg: ") + message);
    return out;
  }
  fail(ErrorKind::data, "unrecognized image format (PNG and JPEG are supported)");
}

inline Image load_image(const std::string& path) {
  const Bytes b = read_file(path);
  try {
    return decode_image(b.data(), b.size());
  } catch (const Error& e) {
    fail(ErrorKind::data, path + ": " + e.what());
  }
}

inline Bytes encode_png(const Image& img) {
  if (img.channels != 3 && img.channels != 4 && img.channels != 1) fail(ErrorKind::invalid_argument, "png: bad channel count");
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = static_cast<png_uint_32>(img.width);
  p.height = static_cast<png_uint_32>(img.height);
  p.format = img.channels == 4 ? PNG_FORMAT_RGBA : img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    fail(ErrorKind::data, std::string("png: ") + p.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&p, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    fail(ErrorKind::data, std::string("png: ") + p.message);
  out.resize(size);
  return out;
}

inline void save_png(const std::string& path, const Image& img) { write_file(path, encode_png(img)); }

/// Decodes every image of a manifest. Entries without tags take the contour
/// flags of `layout`.
inline std::vector<AnnotatedSample> load_manifest_samples(const std::string& path, const LandmarkLayout& layout) {
  std::vector<AnnotatedSample> out;
  for (auto& e : read_manifest(path)) {
    if (e.points.size() != layout.size())
      fail(ErrorKind::data, e.image_path + ": " + std::to_string(e.points.size()) + " points, layout " + layout.name +
                                " has " + std::to_string(layout.size()));
    AnnotatedSample s;
    s.image = load_image(e.image_path);
    s.points = std::move(e.points);
    s.contour = e.contour.empty() ? layout.contour : std::move(e.contour);
    s.source = e.image_path;
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorKind::data, "manifest " + path + " has no entries");
  return out;
}

}  // namespace tinyalign
