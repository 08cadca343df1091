#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "udepth/data.hpp"
#include "udepth/error.hpp"
#include "udepth/io.hpp"
#include "udepth/losses.hpp"
#include "udepth/rng.hpp"
#include "udepth/tape.hpp"

using namespace udepth;

namespace {

// 2x2 RGB PNG fixture: red, green / blue, white
const unsigned char kPngFixture[] = {0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0xfd, 0xd4, 0x9a, 0x73, 0x00, 0x00, 0x00, 0x12, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xc0, 0x00, 0xc2, 0x0c, 0xff, 0x81, 0x00, 0x00, 0x1f, 0xee, 0x05, 0xfb, 0x0b, 0xd9, 0x68, 0x8b, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

Tensor as_batch(const Tensor& chw) {
  std::vector<int> s = {1};
  for (int i = 0; i < chw.rank(); ++i) s.push_back(chw.dim(i));
  Tensor out(s);
  std::copy(chw.data(), chw.data() + chw.size(), out.data());
  return out;
}

// [C,H,W] crop, used to compare losses away from clamped border bands
Tensor crop_chw(const Tensor& t, int x0, int x1) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({c, h, x1 - x0});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = x0; x < x1; ++x)
        out[(static_cast<std::int64_t>(ch) * h + y) * (x1 - x0) + (x - x0)] =
            t[(static_cast<std::int64_t>(ch) * h + y) * w + x];
  return out;
}

SceneConfig default_scene() {
  SceneConfig cfg;  // 64x128, b=0.5, f=80, D=10 -> disparity 4 px
  return cfg;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary);
  os << contents;
}

}  // namespace

TEST_CASE("single-plane scene carries a constant 4 px ground-truth disparity") {
  auto [stereo, temporal] = generate_synthetic(42, default_scene());
  CHECK(stereo.left.shape() == std::vector<int>{3, 64, 128});
  for (std::int64_t i = 0; i < stereo.gt_disparity.size(); ++i)
    CHECK(stereo.gt_disparity[i] == doctest::Approx(4.f).epsilon(1e-6));
  for (std::int64_t i = 0; i < temporal.gt_depth.size(); ++i)
    CHECK(temporal.gt_depth[i] == doctest::Approx(10.f).epsilon(1e-6));
  REQUIRE(temporal.gt_poses.size() == 2);
  CHECK(temporal.gt_poses[0].t[0] == doctest::Approx(-0.25));
}

TEST_CASE("zero temporal motion keeps all frames identical") {
  SceneConfig cfg = default_scene();
  cfg.motion_tx_m = 0.f;
  auto [stereo, temporal] = generate_synthetic(7, cfg);
  for (size_t j = 1; j < temporal.frames.size(); ++j)
    CHECK(max_abs_diff(temporal.frames[0], temporal.frames[j]) == 0.0);
}

TEST_CASE("the warp operator reconstructs the generated right view") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto [stereo, temporal] = generate_synthetic(seed, default_scene());
    Tape t;
    Var recon = disparity_warp(t.constant(as_batch(stereo.left)),
                               t.constant(as_batch(stereo.gt_disparity)), +1);
    CHECK(max_abs_diff(t.value(recon),
                       as_batch(stereo.right)) <= 1e-6);
  }
}

TEST_CASE("layered scenes stay warp-consistent away from occlusion bands") {
  SceneConfig cfg = default_scene();
  cfg.layers = 3;
  auto [stereo, temporal] = generate_synthetic(11, cfg);
  float dmin = 1e9f, dmax = 0.f;
  for (std::int64_t i = 0; i < stereo.gt_disparity.size(); ++i) {
    dmin = std::min(dmin, stereo.gt_disparity[i]);
    dmax = std::max(dmax, stereo.gt_disparity[i]);
  }
  CHECK(dmin == doctest::Approx(4.f));
  CHECK(dmax > 4.f);

  Tape t;
  Var recon = disparity_warp(t.constant(as_batch(stereo.left)),
                             t.constant(as_batch(stereo.gt_disparity)), +1);
  const Tensor& r = t.value(recon);
  const int h = 64, w = 128;
  const int band = static_cast<int>(std::ceil(dmax)) + 2;
  // exclude pixels whose horizontal neighborhood crosses a disparity edge
  std::int64_t checked = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool clean = x + band < w;
      for (int dx = -band; clean && dx <= band; ++dx) {
        const int xx = std::min(w - 1, std::max(0, x + dx));
        clean = stereo.gt_disparity[y * w + xx] == stereo.gt_disparity[y * w + x];
      }
      if (!clean) continue;
      ++checked;
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(r.at4(0, c, y, x) -
                       stereo.right[(static_cast<std::int64_t>(c) * h + y) * w + x]) <= 1e-6);
    }
  CHECK(checked > h * w / 2);
}

TEST_CASE("ppm files: white is 1.0, black is 0.0") {
  save_image_ppm("tmp_white.ppm", Tensor::full({3, 4, 5}, 1.f));
  Tensor white = load_image("tmp_white.ppm");
  for (std::int64_t i = 0; i < white.size(); ++i) CHECK(white[i] == 1.f);
  save_image_ppm("tmp_black.ppm", Tensor::zeros({3, 4, 5}));
  Tensor black = load_image("tmp_black.ppm");
  for (std::int64_t i = 0; i < black.size(); ++i) CHECK(black[i] == 0.f);
  std::remove("tmp_white.ppm");
  std::remove("tmp_black.ppm");
}

TEST_CASE("a hand-written 2x2 ppm decodes to exact values") {
  // pixels: (255,0,0) (128,0,0) / (0,64,0) (0,0,255)
  std::string ppm = "P6\n2 2\n255\n";
  const unsigned char px[12] = {255, 0, 0, 128, 0, 0, 0, 64, 0, 0, 0, 255};
  ppm.append(reinterpret_cast<const char*>(px), 12);
  write_file("tmp_fixture.ppm", ppm);
  Tensor img = load_image("tmp_fixture.ppm");
  REQUIRE(img.shape() == std::vector<int>{3, 2, 2});
  CHECK(img.at4(0, 0, 0, 0) == doctest::Approx(1.f));
  CHECK(img.at4(0, 0, 1, 0) == doctest::Approx(128.f / 255.f));
  CHECK(img.at4(1, 1, 0, 0) == doctest::Approx(64.f / 255.f));
  CHECK(img.at4(2, 1, 1, 0) == doctest::Approx(1.f));
  std::remove("tmp_fixture.ppm");
}

TEST_CASE("png fixture decodes to the expected pixels") {
  std::ofstream os("tmp_fixture.png", std::ios::binary);
  os.write(reinterpret_cast<const char*>(kPngFixture), sizeof(kPngFixture));
  os.close();
  Tensor img = load_image("tmp_fixture.png");
  REQUIRE(img.shape() == std::vector<int>{3, 2, 2});
  CHECK(img.at4(0, 0, 0, 0) == doctest::Approx(1.f));  // red
  CHECK(img.at4(1, 0, 1, 0) == doctest::Approx(1.f));  // green
  CHECK(img.at4(2, 1, 0, 0) == doctest::Approx(1.f));  // blue
  CHECK(img.at4(0, 1, 1, 0) == doctest::Approx(1.f));  // white
  CHECK(img.at4(1, 0, 0, 0) == doctest::Approx(0.f));
  // resized load path
  Tensor big = load_image("tmp_fixture.png", 4, 4);
  CHECK(big.shape() == std::vector<int>{3, 4, 4});
  std::remove("tmp_fixture.png");
}

TEST_CASE("missing and corrupt image files raise io/format errors") {
  CHECK_THROWS_AS(load_image("does_not_exist.ppm"), IoError);
  write_file("tmp_bad.img", "JUNKJUNKJUNK");
  CHECK_THROWS_AS(load_image("tmp_bad.img"), FormatError);
  std::remove("tmp_bad.img");
}

TEST_CASE("ppm round trip is exact up to 8-bit quantization") {
  Rng rng(5);
  Tensor img({3, 6, 7});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform_f(0.f, 1.f);
  save_image_ppm("tmp_rt.ppm", img);
  Tensor back = load_image("tmp_rt.ppm");
  CHECK(max_abs_diff(img, back) <= 0.5f / 255.f + 1e-6f);
  std::remove("tmp_rt.ppm");
}

TEST_CASE("identity augmentation parameters leave the sample unchanged") {
  auto [stereo, temporal] = generate_synthetic(3, default_scene());
  StereoSample out = augment_with(stereo, AugmentParams::identity());
  CHECK(max_abs_diff(out.left, stereo.left) == 0.0);
  CHECK(max_abs_diff(out.right, stereo.right) == 0.0);
  CHECK(max_abs_diff(out.gt_disparity, stereo.gt_disparity) == 0.0);
}

TEST_CASE("double horizontal flip restores the original pair") {
  auto [stereo, temporal] = generate_synthetic(4, default_scene());
  AugmentParams flip;
  flip.flip = true;
  StereoSample once = augment_with(stereo, flip);
  StereoSample twice = augment_with(once, flip);
  CHECK(max_abs_diff(twice.left, stereo.left) == 0.0);
  CHECK(max_abs_diff(twice.right, stereo.right) == 0.0);
}

TEST_CASE("brightness 2 on quarter-gray gives half-gray") {
  StereoSample s;
  s.left = Tensor::full({3, 4, 4}, 0.25f);
  s.right = Tensor::full({3, 4, 4}, 0.25f);
  AugmentParams p;
  p.brightness = 2.f;
  StereoSample out = augment_with(s, p);
  for (std::int64_t i = 0; i < out.left.size(); ++i) {
    CHECK(out.left[i] == doctest::Approx(0.5f).epsilon(1e-6));
    CHECK(out.right[i] == doctest::Approx(0.5f).epsilon(1e-6));
  }
}

TEST_CASE("flipping swaps the stereo roles consistently") {
  // interior appearance of (right, warp(left, d)) must be preserved by the
  // flip+swap augmentation; borders are excluded because clamping is not
  // mirror-symmetric
  auto [stereo, temporal] = generate_synthetic(9, default_scene());
  AugmentParams flip;
  flip.flip = true;
  StereoSample flipped = augment_with(stereo, flip);

  auto interior_loss = [](const StereoSample& s) {
    Tape t;
    Var recon = disparity_warp(t.constant(as_batch(s.left)),
                               t.constant(as_batch(s.gt_disparity)), +1);
    Tensor recon_chw({3, 64, 128});
    std::copy(t.value(recon).data(), t.value(recon).data() + recon_chw.size(),
              recon_chw.data());
    Tape t2;
    Var loss = appearance_loss(t2.constant(as_batch(crop_chw(s.right, 8, 120))),
                               t2.constant(as_batch(crop_chw(recon_chw, 8, 120))), 0.85f);
    return t2.value(loss)[0];
  };
  const float orig = interior_loss(stereo);
  const float flip_loss = interior_loss(flipped);
  CHECK(std::abs(orig - flip_loss) < 1e-5f);
}

TEST_CASE("augmentation preserves the sample resolution") {
  auto [stereo, temporal] = generate_synthetic(6, default_scene());
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    StereoSample out = augment(stereo, rng);
    CHECK(out.left.shape() == stereo.left.shape());
    CHECK(out.right.shape() == stereo.right.shape());
  }
}

TEST_CASE("augmentation parameter ranges match the protocol") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    AugmentParams p = AugmentParams::draw(rng);
    CHECK(p.brightness >= 0.5f);
    CHECK(p.brightness <= 2.f);
    CHECK(p.gamma >= 0.8f);
    CHECK(p.gamma <= 1.2f);
    for (float c : p.color) {
      CHECK(c >= 0.8f);
      CHECK(c <= 1.2f);
    }
    if (p.crop) CHECK(p.crop_w * p.crop_h >= 0.6f - 1e-3f);
  }
}

TEST_CASE("split lists parse records and report malformed lines") {
  write_file("tmp_split_empty.txt", "");
  CHECK(read_split_list("tmp_split_empty.txt").empty());
  std::remove("tmp_split_empty.txt");

  write_file("tmp_split.txt", "# header comment\nleft.ppm right.ppm\n");
  auto records = read_split_list("tmp_split.txt");
  REQUIRE(records.size() == 1);
  CHECK(records[0].left == "left.ppm");
  CHECK(records[0].right == "right.ppm");
  CHECK(records[0].gt_depth.empty());
  std::remove("tmp_split.txt");

  write_file("tmp_split3.txt", "l.ppm r.ppm depth.udt\n");
  auto rec3 = read_split_list("tmp_split3.txt");
  REQUIRE(rec3.size() == 1);
  CHECK(rec3[0].gt_depth == "depth.udt");
  std::remove("tmp_split3.txt");

  write_file("tmp_split_bad.txt", "ok_left ok_right\nonly_one_field\n");
  try {
    read_split_list("tmp_split_bad.txt");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::remove("tmp_split_bad.txt");

  write_file("tmp_split_bad4.txt", "a b c d\n");
  CHECK_THROWS_AS(read_split_list("tmp_split_bad4.txt"), ParseError);
  std::remove("tmp_split_bad4.txt");
}

TEST_CASE("depth ground truth rasters round-trip and validate") {
  auto [stereo, temporal] = generate_synthetic(8, default_scene());
  Tensor gt({1, 64, 128});
  std::copy(temporal.gt_depth.data(), temporal.gt_depth.data() + gt.size(), gt.data());
  save_raster("tmp_depth.udt", gt);
  Tensor back = load_depth_gt("tmp_depth.udt");
  CHECK(max_abs_diff(gt, back) == 0.0);
  std::remove("tmp_depth.udt");

  Tensor zeros = Tensor::zeros({1, 4, 4});
  save_raster("tmp_zeros.udt", zeros);
  Tensor z = load_depth_gt("tmp_zeros.udt");
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < z.size(); ++i) valid += z[i] > 0.f;
  CHECK(valid == 0);
  std::remove("tmp_zeros.udt");

  save_raster("tmp_bad_shape.udt", Tensor::zeros({2, 4, 4}));
  CHECK_THROWS_AS(load_depth_gt("tmp_bad_shape.udt"), FormatError);
  std::remove("tmp_bad_shape.udt");
}

TEST_CASE("resize_bilinear keeps constants and sizes") {
  Tensor c = Tensor::full({3, 6, 8}, 0.4f);
  Tensor up = resize_bilinear(c, 12, 16);
  CHECK(up.shape() == std::vector<int>{3, 12, 16});
  for (std::int64_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(0.4f));
}

TEST_CASE("generator output is deterministic in the seed") {
  auto [a_st, a_tp] = generate_synthetic(99, default_scene());
  auto [b_st, b_tp] = generate_synthetic(99, default_scene());
  CHECK(max_abs_diff(a_st.left, b_st.left) == 0.0);
  CHECK(max_abs_diff(a_st.right, b_st.right) == 0.0);
  auto [c_st, c_tp] = generate_synthetic(100, default_scene());
  CHECK(max_abs_diff(a_st.left, c_st.left) > 0.0);
}
