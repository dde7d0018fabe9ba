#include "support/corpus.hpp"

#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace jes::test {

namespace {

struct ErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void on_error(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<ErrorTrap*>(cinfo->err);
  std::longjmp(trap->jump, 1);
}

}  // namespace

Rgb make_texture(int width, int height, int category, int variant) {
  Rgb img;
  img.width = width;
  img.height = height;
  img.pixels.resize(size_t(3) * width * height);

  std::mt19937 rng(uint32_t(category * 1000003 + variant * 7919 + 17));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double freq = 0.05 + 0.035 * (category % 5);
  double angle = 0.35 * category;
  double phase = 6.28318 * unit(rng);
  double noise_amp = 8.0 + 4.0 * (category % 3);
  int base_r = 40 + 20 * (category % 7);
  int base_g = 60 + 15 * ((category + 2) % 9);
  int base_b = 50 + 25 * ((category + 5) % 6);
  double ca = std::cos(angle), sa = std::sin(angle);
  bool blobs = category % 2 == 0;
  double bx = width * unit(rng), by = height * unit(rng);
  double radius = 0.15 * std::min(width, height) * (1.0 + unit(rng));

  std::normal_distribution<double> noise(0.0, noise_amp);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double u = ca * x + sa * y;
      double wave = 80.0 * std::sin(freq * u + phase);
      double ramp = 60.0 * x / width + 40.0 * y / height;
      double blob = 0.0;
      if (blobs) {
        double dx = x - bx, dy = y - by;
        blob = 70.0 * std::exp(-(dx * dx + dy * dy) / (2 * radius * radius));
      }
      double n = noise(rng);
      auto px = [&](int base, double scale) {
        double v = base + scale * wave + ramp + blob + n;
        return uint8_t(std::clamp(v, 0.0, 255.0));
      };
      uint8_t* p = img.at(x, y);
      p[0] = px(base_r, 1.0);
      p[1] = px(base_g, 0.8);
      p[2] = px(base_b, 0.6);
    }
  }
  return img;
}

std::vector<uint8_t> compress_jpeg(const Rgb& img, int quality, bool subsample_420) {
  jpeg_compress_struct cinfo;
  ErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = on_error;
  if (setjmp(trap.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw std::runtime_error("libjpeg compression failed");
  }
  jpeg_create_compress(&cinfo);

  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  jpeg_mem_dest(&cinfo, &buf, &buf_size);

  cinfo.image_width = JDIMENSION(img.width);
  cinfo.image_height = JDIMENSION(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  if (subsample_420) {
    cinfo.comp_info[0].h_samp_factor = 2;
    cinfo.comp_info[0].v_samp_factor = 2;
  } else {
    cinfo.comp_info[0].h_samp_factor = 1;
    cinfo.comp_info[0].v_samp_factor = 1;
  }
  cinfo.comp_info[1].h_samp_factor = 1;
  cinfo.comp_info[1].v_samp_factor = 1;
  cinfo.comp_info[2].h_samp_factor = 1;
  cinfo.comp_info[2].v_samp_factor = 1;

  jpeg_start_compress(&cinfo, TRUE);
  std::vector<const uint8_t*> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = &img.pixels[3 * size_t(y) * img.width];
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rows[cinfo.next_scanline]);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<uint8_t> out(buf, buf + buf_size);
  jpeg_destroy_compress(&cinfo);
  free(buf);
  return out;
}

std::vector<std::vector<uint8_t>> desk_corpus() {
  std::vector<std::vector<uint8_t>> corpus;
  struct Spec {
    int w, h, cat, var, quality;
    bool s420;
  };
  const Spec specs[] = {
      {384, 256, 0, 0, 80, true},  {256, 384, 1, 0, 80, false}, {384, 256, 2, 0, 75, true},
      {320, 240, 3, 0, 85, false}, {256, 256, 4, 0, 70, true},  {160, 120, 5, 0, 80, false},
      {128, 128, 6, 0, 90, true},  {200, 152, 7, 0, 80, true},  {96, 64, 8, 0, 75, false},
      {64, 96, 9, 0, 85, true},    {120, 88, 0, 1, 80, false},  {88, 120, 1, 1, 70, true},
      {56, 40, 2, 1, 80, false},   {40, 56, 3, 1, 85, true},    {24, 16, 4, 1, 80, true},
      {17, 19, 5, 1, 80, false},   {33, 29, 6, 1, 75, true},    {8, 8, 7, 1, 85, false},
  };
  for (const auto& s : specs)
    corpus.push_back(compress_jpeg(make_texture(s.w, s.h, s.cat, s.var), s.quality, s.s420));

  // Solid-color image: all-empty AC blocks, single DC step.
  Rgb solid;
  solid.width = 16;
  solid.height = 16;
  solid.pixels.assign(size_t(3) * 16 * 16, 128);
  corpus.push_back(compress_jpeg(solid, 85, false));

  // High-noise image: dense AC content.
  corpus.push_back(compress_jpeg(make_texture(180, 130, 8, 2), 88, true));
  return corpus;
}

std::vector<LabeledJpeg> toy_corpus(int cats, int per_cat, int width, int height, int quality) {
  std::vector<LabeledJpeg> out;
  for (int c = 0; c < cats; ++c) {
    for (int v = 0; v < per_cat; ++v) {
      LabeledJpeg item;
      item.label = "cat" + std::to_string(c);
      item.bytes = compress_jpeg(make_texture(width, height, c, v), quality, c % 2 == 0);
      out.push_back(std::move(item));
    }
  }
  return out;
}

void write_corpus_tree(const std::string& dir, const std::vector<LabeledJpeg>& corpus) {
  namespace fs = std::filesystem;
  std::map<std::string, int> counters;
  for (const auto& item : corpus) {
    fs::create_directories(fs::path(dir) / item.label);
    int n = counters[item.label]++;
    std::ofstream f(fs::path(dir) / item.label / (std::to_string(n) + ".jpg"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(item.bytes.data()), std::streamsize(item.bytes.size()));
  }
}

}  // namespace jes::test
