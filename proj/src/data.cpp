#include "udepth/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "udepth/error.hpp"
#include "udepth/io.hpp"
#include "udepth/reference.hpp"

namespace udepth {

CameraRig SceneConfig::rig() const {
  CameraRig r;
  r.fx = focal_px;
  r.fy = focal_px;
  r.cx = 0.5f * static_cast<float>(width - 1);
  r.cy = 0.5f * static_cast<float>(height - 1);
  r.baseline_m = baseline_m;
  return r;
}

namespace {

// multi-octave value noise, one channel, values roughly in [-1, 1]
void add_noise_octave(Rng& rng, float* plane, int h, int w, int cell, float amp) {
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<float> grid(static_cast<size_t>(gw) * gh);
  for (auto& v : grid) v = rng.uniform_f(-1.f, 1.f);
  for (int y = 0; y < h; ++y) {
    const double gy = double(y) / cell;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = double(x) / cell;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const float* g0 = grid.data() + y0 * gw + x0;
      const double top = (1 - fx) * g0[0] + fx * g0[1];
      const double bot = (1 - fx) * g0[gw] + fx * g0[gw + 1];
      plane[y * w + x] += amp * static_cast<float>((1 - fy) * top + fy * bot);
    }
  }
}

Tensor make_texture(Rng& rng, int h, int w, int octaves) {
  Tensor tex({3, h, w});
  for (int c = 0; c < 3; ++c) {
    float* plane = tex.data() + static_cast<std::int64_t>(c) * h * w;
    float amp = 1.f;
    int cell = std::max(4, std::min(h, w) / 2);
    for (int o = 0; o < octaves; ++o) {
      add_noise_octave(rng, plane, h, w, cell, amp);
      cell = std::max(2, cell / 2);
      amp *= 0.5f;
    }
    float lo = plane[0], hi = plane[0];
    for (int i = 1; i < h * w; ++i) {
      lo = std::min(lo, plane[i]);
      hi = std::max(hi, plane[i]);
    }
    const float span = std::max(1e-6f, hi - lo);
    for (int i = 0; i < h * w; ++i) plane[i] = 0.15f + 0.7f * (plane[i] - lo) / span;
  }
  return tex;
}

struct Layer {
  Tensor texture;          // [3,H,W], defined over the whole frame
  float x0, x1, y0, y1;    // visible rectangle in frame-0/left coordinates
  float depth_m;
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

// Per-pixel composite: the nearest layer whose rectangle contains the pixel
// after shifting by that layer's per-layer horizontal shift wins. shift[k] is
// added to x before the containment test and texture lookup, so shift 0
// renders the base (left / frame-0) view.
void composite(const std::vector<Layer>& layers, const std::vector<double>& shift, Tensor& img,
               float* depth_plane) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int pick = 0;
      for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
        if (layers[static_cast<size_t>(k)].contains(x + shift[static_cast<size_t>(k)], y)) {
          pick = k;
          break;
        }
      }
      const Layer& L = layers[static_cast<size_t>(pick)];
      const double u = x + shift[static_cast<size_t>(pick)];
      for (int c = 0; c < 3; ++c) {
        const float* plane = L.texture.data() + static_cast<std::int64_t>(c) * h * w;
        img[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            static_cast<float>(ref::bilinear_at(plane, h, w, u, double(y)));
      }
      if (depth_plane) depth_plane[y * w + x] = L.depth_m;
    }
  }
}

}  // namespace

std::pair<StereoSample, TemporalSample> generate_synthetic(std::uint64_t seed,
                                                           const SceneConfig& cfg) {
  if (cfg.layers < 1 || cfg.layers > 3) throw ConfigError("SceneConfig.layers must be 1..3");
  if (cfg.n_frames < 2) throw ConfigError("SceneConfig.n_frames must be >= 2");
  const int h = cfg.height, w = cfg.width;
  const CameraRig rig = cfg.rig();

  Rng rng(mix_seed(seed, 0xda7a));
  std::vector<Layer> layers;
  // background plane covers everything
  layers.push_back(Layer{make_texture(rng, h, w, cfg.noise_octaves), -float(w), 2.f * w,
                         -float(h), 2.f * h, cfg.depth_m});
  for (int k = 1; k < cfg.layers; ++k) {
    Layer L;
    L.texture = make_texture(rng, h, w, cfg.noise_octaves);
    L.depth_m = cfg.depth_m / static_cast<float>(k + 1);
    const float rw = rng.uniform_f(0.25f, 0.45f) * w;
    const float rh = rng.uniform_f(0.3f, 0.5f) * h;
    L.x0 = rng.uniform_f(0.1f, 0.85f) * w - rw * 0.5f;
    L.y0 = rng.uniform_f(0.1f, 0.85f) * h - rh * 0.5f;
    L.x1 = L.x0 + rw;
    L.y1 = L.y0 + rh;
    layers.push_back(std::move(L));
  }

  std::vector<double> disp(layers.size());
  for (size_t k = 0; k < layers.size(); ++k)
    disp[k] = double(rig.baseline_m) * rig.fx / layers[k].depth_m;

  StereoSample stereo;
  stereo.rig = rig;
  stereo.left = Tensor({3, h, w});
  stereo.right = Tensor({3, h, w});
  stereo.gt_disparity = Tensor({1, h, w});

  std::vector<double> zero_shift(layers.size(), 0.0);
  Tensor gt_depth({1, h, w});
  composite(layers, zero_shift, stereo.left, gt_depth.data());

  // right view: gt disparity is the winning layer's shift, right-aligned
  {
    const int hh = h, ww = w;
    Tensor tmp_depth({1, hh, ww});
    composite(layers, disp, stereo.right, tmp_depth.data());
    for (int y = 0; y < hh; ++y)
      for (int x = 0; x < ww; ++x) {
        const float d = tmp_depth[y * ww + x];
        stereo.gt_disparity[y * ww + x] = static_cast<float>(double(rig.baseline_m) * rig.fx / d);
      }
  }

  TemporalSample temporal;
  temporal.gt_depth = gt_depth;
  temporal.frames.push_back(stereo.left);
  for (int j = 1; j < cfg.n_frames; ++j) {
    std::vector<double> shift(layers.size());
    for (size_t k = 0; k < layers.size(); ++k)
      shift[k] = -double(j) * rig.fx * cfg.motion_tx_m / layers[k].depth_m;
    Tensor frame({3, h, w});
    composite(layers, shift, frame, nullptr);
    temporal.frames.push_back(std::move(frame));
  }
  for (int j = 0; j + 1 < cfg.n_frames; ++j) {
    Pose6 p;
    p.t = {cfg.motion_tx_m, 0.0, 0.0};
    temporal.gt_poses.push_back(p);
  }
  return {std::move(stereo), std::move(temporal)};
}

// ---------------------------------------------------------------------------
// image files

namespace {

Tensor from_rgb8(const unsigned char* px, int h, int w) {
  Tensor img({3, h, w});
  float* out = img.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            static_cast<float>(px[(static_cast<std::int64_t>(y) * w + x) * 3 + c]) / 255.f;
  return img;
}

Tensor load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError(path + ": not a P6 ppm");
  auto next_int = [&]() {
    for (;;) {
      int ch = is.peek();
      if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(ch)) {
        is.get();
      } else {
        break;
      }
    }
    int v = -1;
    is >> v;
    if (!is || v < 0) throw FormatError(path + ": bad ppm header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw FormatError(path + ": only maxval 255 supported");
  is.get();  // single whitespace after header
  std::vector<unsigned char> px(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!is) throw FormatError(path + ": truncated pixel data");
  return from_rgb8(px.data(), h, w);
}

Tensor load_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw FormatError(path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(path + ": " + image.message);
  }
  return from_rgb8(buffer.data(), static_cast<int>(image.height), static_cast<int>(image.width));
}

}  // namespace

Tensor load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open: " + path);
  unsigned char sig[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(sig), 2);
  probe.close();
  if (sig[0] == 0x89 && sig[1] == 'P') return load_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return load_ppm(path);
  throw FormatError(path + ": unsupported image format (need PNG or P6 PPM)");
}

Tensor load_image(const std::string& path, int target_h, int target_w) {
  Tensor img = load_image(path);
  if (img.dim(1) == target_h && img.dim(2) == target_w) return img;
  return resize_bilinear(img, target_h, target_w);
}

void save_image_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw DimensionError("save_image_ppm expects [3,H,W] or [1,H,W], got " +
                         shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) {
        const float v = image[(static_cast<std::int64_t>(c == 3 ? k : 0) * h + y) * w + x];
        const float cl = std::min(1.f, std::max(0.f, v));
        row[static_cast<size_t>(x) * 3 + static_cast<size_t>(k)] =
            static_cast<unsigned char>(std::lround(cl * 255.f));
      }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w) {
  if (chw.rank() != 3) throw DimensionError("resize_bilinear expects [C,H,W]");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (out_h == h && out_w == w) return chw;
  Tensor out({c, out_h, out_w});
  const double sy = double(h) / out_h, sx = double(w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = chw.data() + static_cast<std::int64_t>(ch) * h * w;
    float* op = out.data() + static_cast<std::int64_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double v = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const double u = (x + 0.5) * sx - 0.5;
        op[static_cast<std::int64_t>(y) * out_w + x] =
            static_cast<float>(ref::bilinear_at(plane, h, w, u, v));
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& chw) {
  if (chw.rank() != 3) throw DimensionError("flip_horizontal expects [C,H,W]");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<std::int64_t>(ch) * h + y) * w + x] =
            chw[(static_cast<std::int64_t>(ch) * h + y) * w + (w - 1 - x)];
  return out;
}

// ---------------------------------------------------------------------------
// augmentation

AugmentParams AugmentParams::draw(Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.crop = rng.bernoulli(0.5);
  if (p.crop) {
    // each side in [sqrt(0.6), 1] keeps at least 60% of the area
    const float smin = 0.7746f;
    p.crop_w = rng.uniform_f(smin, 1.f);
    p.crop_h = rng.uniform_f(smin, 1.f);
    p.crop_x0 = rng.uniform_f(0.f, 1.f - p.crop_w);
    p.crop_y0 = rng.uniform_f(0.f, 1.f - p.crop_h);
  }
  p.brightness = rng.uniform_f(0.5f, 2.f);
  p.gamma = rng.uniform_f(0.8f, 1.2f);
  for (auto& c : p.color) c = rng.uniform_f(0.8f, 1.2f);
  return p;
}

namespace {

Tensor crop_resize(const Tensor& img, int px0, int py0, int pw, int ph) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor cropped({c, ph, pw});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        cropped[(static_cast<std::int64_t>(ch) * ph + y) * pw + x] =
            img[(static_cast<std::int64_t>(ch) * h + (py0 + y)) * w + (px0 + x)];
  return resize_bilinear(cropped, h, w);
}

Tensor photometric(const Tensor& img, const AugmentParams& p) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const float gain = p.brightness * p.color[ch % 3];
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
      const float v = img[static_cast<std::int64_t>(ch) * h * w + i];
      const float g = std::pow(std::max(0.f, v), p.gamma) * gain;
      out[static_cast<std::int64_t>(ch) * h * w + i] = std::min(1.f, std::max(0.f, g));
    }
  }
  return out;
}

}  // namespace

StereoSample augment_with(const StereoSample& s, const AugmentParams& p) {
  StereoSample out;
  out.rig = s.rig;
  Tensor left = s.left, right = s.right, gt = s.gt_disparity;
  if (p.flip) {
    // mirroring swaps the stereo roles; the disparity sign convention
    // survives because both happen together
    Tensor nl = flip_horizontal(right);
    Tensor nr = flip_horizontal(left);
    left = std::move(nl);
    right = std::move(nr);
    if (!gt.empty()) gt = flip_horizontal(gt);
  }
  if (p.crop) {
    const int h = left.dim(1), w = left.dim(2);
    int pw = std::max(8, static_cast<int>(std::lround(p.crop_w * w)));
    int ph = std::max(8, static_cast<int>(std::lround(p.crop_h * h)));
    pw = std::min(pw, w);
    ph = std::min(ph, h);
    const int px0 = std::min(w - pw, std::max(0, static_cast<int>(std::lround(p.crop_x0 * w))));
    const int py0 = std::min(h - ph, std::max(0, static_cast<int>(std::lround(p.crop_y0 * h))));
    left = crop_resize(left, px0, py0, pw, ph);
    right = crop_resize(right, px0, py0, pw, ph);
    if (!gt.empty()) {
      gt = crop_resize(gt, px0, py0, pw, ph);
      // horizontal resize rescales pixel disparities
      const float scale = static_cast<float>(w) / static_cast<float>(pw);
      for (std::int64_t i = 0; i < gt.size(); ++i) gt[i] *= scale;
    }
  }
  out.left = photometric(left, p);
  out.right = photometric(right, p);
  out.gt_disparity = gt;
  return out;
}

StereoSample augment(const StereoSample& s, Rng& rng) {
  return augment_with(s, AugmentParams::draw(rng));
}

// ---------------------------------------------------------------------------
// split lists and ground truth rasters

std::vector<SplitRecord> read_split_list(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<SplitRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    SplitRecord rec;
    std::string extra;
    ss >> rec.left >> rec.right;
    if (rec.right.empty())
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 'left right [gt_depth]'");
    ss >> rec.gt_depth;
    if (ss >> extra)
      throw ParseError(path + ":" + std::to_string(lineno) + ": too many fields");
    records.push_back(std::move(rec));
  }
  return records;
}

Tensor load_depth_gt(const std::string& path) {
  Tensor t = load_raster(path);
  if (t.rank() != 3 || t.dim(0) != 1)
    throw FormatError(path + ": depth ground truth must be a [1,H,W] raster, got " +
                      shape_str(t.shape()));
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (t[i] < 0.f) throw FormatError(path + ": negative depth value");
  return t;
}

}  // namespace udepth
