#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rng.hpp"
#include "segmentation.hpp"

using namespace pv;

namespace {

Array random_map(RngStream& rng, std::size_t h, std::size_t w) {
  Array a = Array::zeros({h, w});
  for (double& v : a.data) v = rng.uniform();
  return a;
}

double iou(const Array& a, const Array& b, double label) {
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool pa = a.data[i] == label, pb = b.data[i] == label;
    inter += pa && pb ? 1.0 : 0.0;
    uni += pa || pb ? 1.0 : 0.0;
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

Array disk_image(std::size_t n, double radius, double inside = 1.0,
                 double outside = 0.0) {
  Array a = Array::full({n, n}, outside);
  double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t col = 0; col < n; ++col) {
      double dr = static_cast<double>(r) - c, dc = static_cast<double>(col) - c;
      if (dr * dr + dc * dc <= radius * radius) a.at(r, col) = inside;
    }
  return a;
}

}  // namespace

TEST_CASE("flatness guard") {
  CHECK(flatness_guard(Array::full({4, 4}, 0.7)).flat);
  Array small = Array::full({4, 4}, 0.2);
  small.at(0, 0) = 0.2005;  // range 5e-4
  CHECK(flatness_guard(small).flat);
  Array ok = Array::full({4, 4}, 0.2);
  ok.at(3, 3) = 0.7;
  GuardResult g = flatness_guard(ok);
  REQUIRE(!g.flat);
  CHECK(g.normalized.at(0, 0) == 0.0);
  CHECK(g.normalized.at(3, 3) == 1.0);
}

TEST_CASE("otsu separates a bimodal image") {
  Array img = Array::zeros({8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = i % 2 ? 0.9 : 0.1;
  double t = otsu(img);
  CHECK(t > 0.1);
  CHECK(t < 0.9);
}

TEST_CASE("otsu equals the exhaustive oracle on 50 random maps") {
  RngStream rng(41);
  for (int k = 0; k < 50; ++k) {
    Array m = random_map(rng, 16, 16);
    int cut = static_cast<int>(std::lround(otsu(m) * 256.0));
    CHECK(cut == oracle::otsu_exhaustive(m, 2)[0]);
  }
}

TEST_CASE("multi_otsu with two classes is exactly otsu") {
  RngStream rng(42);
  for (int k = 0; k < 20; ++k) {
    Array m = random_map(rng, 16, 16);
    auto ts = multi_otsu(m, 2);
    REQUIRE(ts.size() == 1);
    CHECK(ts[0] == otsu(m));
  }
}

TEST_CASE("multi_otsu separates three delta modes") {
  RngStream rng(43);
  Array img = Array::zeros({12, 12});
  for (double& v : img.data) {
    double u = rng.uniform();
    v = u < 0.33 ? 0.1 : (u < 0.66 ? 0.5 : 0.9);
  }
  auto ts = multi_otsu(img, 3);
  REQUIRE(ts.size() == 2);
  CHECK(ts[0] > 0.1);
  CHECK(ts[0] < 0.5);
  CHECK(ts[1] > 0.5);
  CHECK(ts[1] < 0.9);
}

TEST_CASE("multi_otsu equals the exhaustive oracle for three classes") {
  RngStream rng(44);
  for (int k = 0; k < 10; ++k) {
    Array m = random_map(rng, 16, 16);
    auto ts = multi_otsu(m, 3);
    auto expect = oracle::otsu_exhaustive(m, 3);
    REQUIRE(ts.size() == 2);
    CHECK(static_cast<int>(std::lround(ts[0] * 256.0)) == expect[0]);
    CHECK(static_cast<int>(std::lround(ts[1] * 256.0)) == expect[1]);
  }
}

TEST_CASE("multi_otsu rejects unsupported class counts") {
  Array m = Array::zeros({4, 4});
  CHECK_THROWS_AS((void)multi_otsu(m, 1), Error);
  CHECK_THROWS_AS((void)multi_otsu(m, 5), Error);
}

TEST_CASE("otsu partition is invariant under monotone remaps of two-level images") {
  RngStream rng(45);
  for (int k = 0; k < 20; ++k) {
    // two values at bin centers
    double a = (static_cast<double>(rng.below(100)) + 0.5) / 256.0;
    double b = (static_cast<double>(150 + rng.below(100)) + 0.5) / 256.0;
    Array img = Array::zeros({8, 8});
    for (double& v : img.data) v = rng.uniform() < 0.4 ? a : b;
    Array remapped = img;
    for (double& v : remapped.data) v = v * v;  // strictly increasing on [0,1]
    double t1 = otsu(img), t2 = otsu(remapped);
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK((img.data[i] < t1) == (remapped.data[i] < t2));
  }
}

TEST_CASE("chan_vese recovers a centered disk") {
  std::size_t n = 32;
  Array img = disk_image(n, static_cast<double>(n) / 4.0);
  ChanVeseResult cv = chan_vese(img);
  // foreground is whichever label covers the bright region
  double fg = cv.labels.at(n / 2, n / 2);
  Array truth = img;  // disk already 0/1
  Array pred = Array::zeros(img.shape);
  for (std::size_t i = 0; i < pred.size(); ++i)
    pred.data[i] = cv.labels.data[i] == fg ? 1.0 : 0.0;
  CHECK(iou(pred, truth, 1.0) >= 0.95);
}

TEST_CASE("chan_vese reproduces binary half-planes away from the boundary") {
  std::size_t n = 16;
  Array img = Array::zeros({n, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = n / 2; c < n; ++c) img.at(r, c) = 1.0;
  ChanVeseResult cv = chan_vese(img);
  double right = cv.labels.at(n / 2, n - 1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      if (c == n / 2 - 1 || c == n / 2) continue;  // 1-pixel band each side
      CHECK(cv.labels.at(r, c) == (c >= n / 2 ? right : 1.0 - right));
    }
}

TEST_CASE("chan_vese energy is non-increasing") {
  RngStream rng(46);
  Array img = disk_image(24, 6.0, 0.9, 0.2);
  for (double& v : img.data) v = std::min(1.0, std::max(0.0, v + 0.05 * rng.normal()));
  ChanVeseResult cv = chan_vese(img);
  REQUIRE(cv.energies.size() >= 2);
  for (std::size_t i = 1; i < cv.energies.size(); ++i)
    CHECK(cv.energies[i] <= cv.energies[i - 1] + 1e-12);
}

TEST_CASE("chan_vese reports non-convergence under a tiny iteration budget") {
  Array img = disk_image(24, 6.0);
  ChanVeseResult cv = chan_vese(img, 0.25, 1e-9, 2);
  CHECK(!cv.converged);
  CHECK(cv.iterations == 2);
}

TEST_CASE("chan_vese rejects bad parameters") {
  Array img = disk_image(8, 2.0);
  CHECK_THROWS_AS((void)chan_vese(img, -0.1), Error);
  CHECK_THROWS_AS((void)chan_vese(img, 0.25, 0.0), Error);
  CHECK_THROWS_AS((void)chan_vese(img, 0.25, 1e-3, 0), Error);
}

TEST_CASE("segment_pipeline: flat map gives one uniform class") {
  LatentField f;
  f.grid_h = f.grid_w = 8;
  f.maps = {Array::full({8, 8}, 0.4)};
  SegmentResult r = segment_pipeline(f, 0.1, true);
  REQUIRE(r.per_map.size() == 1);
  CHECK(r.per_map[0].n_classes == 1);
  for (double v : r.per_map[0].labels.data) CHECK(v == 0.0);
}

TEST_CASE("segment_pipeline binary recovers a noisy disk with canonical labels") {
  RngStream rng(47);
  std::size_t n = 32;
  Array img = disk_image(n, 8.0, 0.85, 0.15);
  for (double& v : img.data) v = std::min(1.0, std::max(0.0, v + 0.03 * rng.normal()));
  LatentField f;
  f.grid_h = f.grid_w = n;
  f.maps = {img};
  SegmentResult r = segment_pipeline(f, 0.1, true);
  const MapSegmentation& seg = r.per_map[0];
  CHECK(seg.n_classes == 2);
  // canonical: label 1 is the brighter region, i.e. the disk
  Array truth = disk_image(n, 8.0);
  CHECK(iou(seg.labels, truth, 1.0) >= 0.95);
}

TEST_CASE("segment_pipeline multi(3) recovers a three-level map") {
  std::size_t n = 24;
  Array img = Array::zeros({n, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      img.at(r, c) = c < n / 3 ? 0.1 : (c < 2 * n / 3 ? 0.5 : 0.9);
  LatentField f;
  f.grid_h = f.grid_w = n;
  f.maps = {img};
  SegmentResult r = segment_pipeline(f, 0.3, false, 3);
  const MapSegmentation& seg = r.per_map[0];
  CHECK(seg.n_classes == 3);
  for (std::size_t r2 = 0; r2 < n; ++r2)
    for (std::size_t c = 0; c < n; ++c) {
      double expect = c < n / 3 ? 0.0 : (c < 2 * n / 3 ? 1.0 : 2.0);
      if (c % (n / 3) == 0 || c % (n / 3) == n / 3 - 1) continue;  // borders
      CHECK(seg.labels.at(r2, c) == expect);
    }
}

TEST_CASE("segment_pipeline is deterministic") {
  RngStream rng(48);
  Array img = random_map(rng, 16, 16);
  LatentField f;
  f.grid_h = f.grid_w = 16;
  f.maps = {img};
  SegmentResult a = segment_pipeline(f, 0.1, true);
  SegmentResult b = segment_pipeline(f, 0.1, true);
  CHECK(a.per_map[0].labels.data == b.per_map[0].labels.data);
}

TEST_CASE("segment_pipeline validates parameters") {
  LatentField f;
  f.grid_h = f.grid_w = 8;
  f.maps = {Array::zeros({8, 8})};
  CHECK_THROWS_AS((void)segment_pipeline(f, -0.1, true), Error);
  CHECK_THROWS_AS((void)segment_pipeline(f, 0.1, false, 5), Error);
  f.maps = {Array::zeros({4, 4})};
  CHECK_THROWS_AS((void)segment_pipeline(f, 0.1, true), Error);
}

TEST_CASE("labels_to_gray emits the documented gray levels") {
  Array l({1, 4}, {0.0, 1.0, 2.0, 3.0});
  Array g4 = labels_to_gray(l, 4);
  CHECK(g4.data == pv::dvec{0.0, 85.0, 170.0, 255.0});
  Array l2({1, 2}, {0.0, 1.0});
  Array g2 = labels_to_gray(l2, 2);
  CHECK(g2.data == pv::dvec{0.0, 255.0});
  Array g1 = labels_to_gray(Array::zeros({2, 2}), 1);
  for (double v : g1.data) CHECK(v == 0.0);
}
