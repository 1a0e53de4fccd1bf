#include "fpd/boxes.hpp"
#include "fpd/error.hpp"
#include "fpd/rng.hpp"
#include "fpd/tensor.hpp"
#include "fpd/types.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace fpd;

TEST_CASE("feature map checks rows against height*width") {
  CHECK_NOTHROW(FeatureMap(2, 3, Matrix::Zero(6, 4)));
  CHECK_THROWS_AS(FeatureMap(2, 3, Matrix::Zero(5, 4)), ShapeError);
  CHECK_THROWS_AS(FeatureMap(0, 3, Matrix::Zero(0, 4)), ValidationError);
  Matrix bad = Matrix::Zero(6, 2);
  bad(3, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(FeatureMap(2, 3, bad), ValidationError);
}

TEST_CASE("feature map indexing is row-major over cells") {
  Matrix v(6, 2);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(i);
  const FeatureMap m(2, 3, v);
  CHECK(m.at(1, 2, 1) == v(5, 1));
  CHECK(m.at(0, 1, 0) == v(1, 0));
  CHECK(FeatureMap::unflatten(2, 3, m.flatten()).values() == v);
}

TEST_CASE("shape errors name both operands") {
  try {
    require_shape(false, "op", Matrix::Zero(2, 3), "left", Matrix::Zero(4, 5), "right");
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("left") != std::string::npos);
    CHECK(msg.find("right") != std::string::npos);
    CHECK(msg.find("(2 x 3)") != std::string::npos);
    CHECK(msg.find("(4 x 5)") != std::string::npos);
  }
}

TEST_CASE("hash depends on values and dims") {
  Matrix a = Matrix::Ones(2, 3);
  Matrix b = Matrix::Ones(3, 2);
  CHECK(hash_matrix(a) != hash_matrix(b));
  CHECK(hash_matrix(a) == hash_matrix(Matrix::Ones(2, 3)));
  a(1, 1) = 1.0 + 1e-15;
  CHECK(hash_matrix(a) != hash_matrix(Matrix::Ones(2, 3)));
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(7), b(7), c(derive_seed(7, 1));
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
  }
  CHECK(Rng(derive_seed(7, 1)).next() == c.next());
  CHECK(derive_seed(7, 1) != derive_seed(7, 2));
  Rng r(3);
  double mean = 0;
  for (int i = 0; i < 20000; ++i) mean += r.normal();
  CHECK(std::abs(mean / 20000) < 0.03);
}

TEST_CASE("iou and nms") {
  const Box a{0, 0, 10, 10}, b{5, 0, 15, 10}, c{20, 20, 30, 30};
  CHECK(iou(a, b) == doctest::Approx(50.0 / 150.0));
  CHECK(iou(a, c) == 0.0);
  CHECK(iou(a, a) == 1.0);
  const Box boxes[] = {a, b, c, {0, 0, 10, 9}};
  const double scores[] = {0.5, 0.9, 0.3, 0.8};
  const auto keep = nms(boxes, scores, 0.5, 10);
  REQUIRE(keep.size() == 3);
  CHECK(keep[0] == 1);
  CHECK(keep[1] == 3);  // overlaps b by 45/155 < 0.5
  CHECK(keep[2] == 2);
}

TEST_CASE("nms keeps input order on ties") {
  const Box boxes[] = {{0, 0, 4, 4}, {10, 10, 14, 14}, {20, 20, 24, 24}};
  const double scores[] = {0.5, 0.5, 0.5};
  const auto keep = nms(boxes, scores, 0.5, 2);
  REQUIRE(keep.size() == 2);
  CHECK(keep[0] == 0);
  CHECK(keep[1] == 1);
}

TEST_CASE("box encoding round-trips") {
  Rng rng(11);
  const std::array<double, 4> stds{0.1, 0.1, 0.2, 0.2};
  for (int t = 0; t < 50; ++t) {
    const Box ref{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(25, 50), rng.uniform(25, 50)};
    const Box target{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(25, 50), rng.uniform(25, 50)};
    const auto d = encode_box(ref, target, stds);
    const Box back = decode_box(ref, d.data(), stds);
    CHECK(back.x1 == doctest::Approx(target.x1).epsilon(1e-9));
    CHECK(back.y2 == doctest::Approx(target.y2).epsilon(1e-9));
  }
}

TEST_CASE("anchors are cell-major with the configured count") {
  const double sizes[] = {8, 16};
  const double ratios[] = {0.5, 1.0, 2.0};
  const auto a = grid_anchors(3, 4, 4, sizes, ratios);
  CHECK(a.size() == 3u * 4u * 6u);
  // first cell centre is (2, 2)
  CHECK((a[0].x1 + a[0].x2) / 2 == doctest::Approx(2.0));
  CHECK((a[6].x1 + a[6].x2) / 2 == doctest::Approx(6.0));
  // ratio is height / width, area preserved
  CHECK(a[0].height() / a[0].width() == doctest::Approx(0.5));
  CHECK(a[0].area() == doctest::Approx(64.0));
  CHECK(a[5].area() == doctest::Approx(256.0));
}
