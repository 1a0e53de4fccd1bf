#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

TEST_CASE("singleton key returns the value") {
  const oracle::Mat q{{0.3, -1.0}, {2.0, 0.5}}, k{{1.0, 1.0}}, v{{4.0, 5.0, 6.0}};
  const oracle::Mat out = oracle::naive_attention(q, k, v, 1.0, oracle::Axis::kOverColumns);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(out(i, j) == v(0, j));
}

TEST_CASE("equal logits give a uniform softmax") {
  const oracle::Mat s = oracle::naive_softmax(oracle::Mat::Constant(2, 4, 0.7), oracle::Axis::kOverColumns);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) CHECK(s(i, j) == doctest::Approx(0.25).epsilon(1e-15));
  const oracle::Mat r = oracle::naive_softmax(oracle::Mat::Constant(4, 2, 0.7), oracle::Axis::kOverRows);
  CHECK(r(3, 1) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("finite differences of x'x give 2 per coordinate") {
  const oracle::Mat x = oracle::Mat::Ones(1, 5);
  const oracle::Mat g = oracle::finite_diff_grad([](const oracle::Mat& m) { return m.squaredNorm(); }, x, 1e-5);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(g(0, i) - 2.0) < 1e-8);
  const oracle::Mat lin = oracle::finite_diff_grad([](const oracle::Mat& m) { return 3.0 * m.sum(); }, x, 1e-3);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(lin(0, i) - 3.0) < 1e-10);
}

TEST_CASE("top-k weights and selection") {
  CHECK(oracle::brute_topk_weights(oracle::Mat{{3, 1, 2}}, 2) == std::vector<double>{5.0});
  CHECK(oracle::brute_topk_weights(oracle::Mat{{3, 1, 2}}, 3) == std::vector<double>{6.0});
  CHECK(oracle::brute_select({5, 1, 9}, 2) == std::vector<int>{2, 0});
  CHECK(oracle::brute_select({1, 1, 1}, 2) == std::vector<int>{0, 1});
}

TEST_CASE("explicit integration of one shot is the identity") {
  const oracle::Mat p{{1, 2}, {3, 4}};
  CHECK(oracle::explicit_integration({p}, oracle::Mat::Zero(2, 1)) == p);
}

TEST_CASE("hand PR integrals") {
  CHECK(oracle::pr_integral({1, 1}, 2) == 1.0);
  CHECK(oracle::pr_integral({}, 3) == 0.0);
  CHECK(oracle::pr_integral({0, 1}, 1) == 0.5);
}

TEST_CASE("oracle sources include nothing from the library under test") {
  for (const auto& entry : fs::directory_iterator(FPD_ORACLE_DIR)) {
    std::ifstream in(entry.path());
    std::string line;
    while (std::getline(in, line)) {
      INFO(entry.path().string() << ": " << line);
      CHECK(line.find("#include \"fpd/") == std::string::npos);
      CHECK(line.find("#include <fpd/") == std::string::npos);
    }
  }
}
