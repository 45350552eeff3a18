#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "bcnn/training.hpp"

using namespace bcnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("bcnn_test_" + name); }

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::UsageError;
}

}  // namespace

TEST_CASE("straight-through gate per plane") {
  const RealTensor g({1, 4, 1, 1}, {1, 2, 3, 4});
  const RealTensor wr({1, 4, 1, 1}, {0.5f, 1.5f, -0.99f, -1.0f});
  const RealTensor wi({1, 4, 1, 1}, {2.0f, 0.0f, 0.3f, 0.9f});
  auto [gr, gi] = ste_backward(g, g, wr, wi, 1.0f);
  CHECK(gr == RealTensor({1, 4, 1, 1}, {1, 0, 3, 0}));
  CHECK(gi == RealTensor({1, 4, 1, 1}, {0, 2, 3, 4}));
  CHECK(code_of([&] { ste_backward(g, RealTensor({1, 3, 1, 1}), wr, wi, 1.0f); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("sgd step") {
  std::vector<float> w{1.0f, -2.0f};
  const std::vector<float> g{0.5f, -1.0f};
  sgd_step(w, g, 0.1f);
  CHECK(w[0] == doctest::Approx(0.95f));
  CHECK(w[1] == doctest::Approx(-1.9f));
  // Two half steps equal one full step for a fixed gradient.
  std::vector<float> a{3.0f}, b{3.0f};
  const std::vector<float> ga{0.25f};
  sgd_step(a, ga, 0.2f);
  sgd_step(b, ga, 0.1f);
  sgd_step(b, ga, 0.1f);
  CHECK(a[0] == doctest::Approx(b[0]));
  sgd_step(a, std::vector<float>{0.0f}, 5.0f);
  CHECK(a[0] == doctest::Approx(2.95f));
  CHECK_THROWS_AS(sgd_step(a, g, 0.1f), Error);
}

TEST_CASE("softmax cross-entropy value and gradient") {
  const RealTensor z({2, 3, 1, 1}, {0.0f, 0.0f, 0.0f, 1.0f, -2.0f, 0.5f});
  const std::vector<std::uint32_t> labels{1, 2};
  RealTensor grad;
  const double loss = softmax_cross_entropy(z, labels, &grad);
  const double l2 = std::log(std::exp(1.0) + std::exp(-2.0) + std::exp(0.5)) - 0.5;
  CHECK(loss == doctest::Approx((std::log(3.0) + l2) / 2));
  for (std::size_t i = 0; i < z.size(); ++i) {
    RealTensor p = z, m = z;
    p[i] += 1e-2f;
    m[i] -= 1e-2f;
    const double fd = (softmax_cross_entropy(p, labels) - softmax_cross_entropy(m, labels)) / 2e-2;
    CHECK(fd == doctest::Approx(grad[i]).epsilon(1e-3));
  }
  CHECK_THROWS_AS(softmax_cross_entropy(z, std::vector<std::uint32_t>{0, 3}), Error);
}

TEST_CASE("zero learning rate leaves the loss curve flat") {
  ModelGraph m = build_tiny_bcnn({3, 8, 8, 4, 1, 2});
  const Dataset d = make_synthetic_blobs(8, 2, {1, 3, 8, 8}, 0.5, 1.0, 3);
  TrainConfig cfg;
  cfg.lr = 0.0f;
  cfg.epochs = 3;
  cfg.batch_size = d.size();
  const auto stats = train(m, d, cfg);
  REQUIRE(stats.size() == 3);
  CHECK(stats[1].loss == doctest::Approx(stats[0].loss).epsilon(1e-6));
  CHECK(stats[2].loss == doctest::Approx(stats[0].loss).epsilon(1e-6));
  CHECK(stats[2].accuracy == stats[0].accuracy);
}

TEST_CASE("a fixed seed reproduces training") {
  const Dataset d = make_synthetic_blobs(8, 2, {1, 3, 8, 8}, 0.5, 1.0, 4);
  TrainConfig cfg;
  cfg.lr = 0.05f;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  ModelGraph a = build_tiny_bcnn({}, 7), b = build_tiny_bcnn({}, 7);
  const auto sa = train(a, d, cfg), sb = train(b, d, cfg);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].loss == sb[i].loss);
  CHECK(forward(a, d.images) == forward(b, d.images));
}

TEST_CASE("training configuration checks") {
  ModelGraph m = build_tiny_bcnn({});
  const Dataset d = make_synthetic_blobs(2, 2, {1, 3, 8, 8}, 0.5, 1.0, 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = -1.0f;
  CHECK(code_of([&] { train(m, d, cfg); }) == ErrorCode::InvalidConfig);
  cfg.lr = 0.01f;
  cfg.batch_size = 0;
  CHECK(code_of([&] { train(m, d, cfg); }) == ErrorCode::InvalidConfig);
  cfg.batch_size = 2;
  cfg.clip = 0.0f;
  CHECK(code_of([&] { train(m, d, cfg); }) == ErrorCode::InvalidConfig);
  cfg.clip = 1.0f;
  Dataset empty{RealTensor({1, 3, 8, 8}), {}, 2};
  CHECK(code_of([&] { train(m, empty, cfg); }) == ErrorCode::DataExhausted);
}

TEST_CASE("non-finite loss aborts training") {
  ModelGraph m = build_tiny_bcnn({});
  const Dataset d = make_synthetic_blobs(2, 2, {1, 3, 8, 8}, 0.5, 1.0, 6);
  dynamic_cast<FcNode&>(*m.layers().back()).fc.bias[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = d.size();
  CHECK(code_of([&] { train(m, d, cfg); }) == ErrorCode::DivergedLoss);
}

TEST_CASE("CIFAR-10 binary records") {
  std::vector<std::uint8_t> bytes(2 * kCifarRecordBytes, 0);
  bytes[0] = 3;
  bytes[2] = 255;  // image 0, red plane, row 0, column 1
  bytes[kCifarRecordBytes] = 9;
  bytes[kCifarRecordBytes + 1 + 1024 + 33] = 51;  // image 1, green, row 1, column 1
  const fs::path p = temp_path("cifar.bin");
  write_bytes(p, bytes);
  const Dataset d = load_cifar10_file(p);
  CHECK(d.size() == 2);
  CHECK(d.labels == std::vector<std::uint32_t>{3, 9});
  CHECK(d.images.shape() == Shape{2, 3, 32, 32});
  CHECK(d.images.at(0, 0, 0, 1) == 1.0f);
  CHECK(d.images.at(1, 1, 1, 1) == doctest::Approx(0.2f));
  CHECK(d.images.at(1, 0, 0, 0) == 0.0f);

  bytes.push_back(0);
  write_bytes(p, bytes);
  CHECK(code_of([&] { load_cifar10_file(p); }) == ErrorCode::CorruptRecord);
  bytes.pop_back();
  bytes[0] = 10;
  write_bytes(p, bytes);
  CHECK(code_of([&] { load_cifar10_file(p); }) == ErrorCode::CorruptRecord);
  fs::remove(p);
  CHECK(code_of([&] { load_cifar10_file(p); }) == ErrorCode::MissingFile);
  CHECK(code_of([&] { load_cifar10(temp_path("no_such_dir")); }) == ErrorCode::MissingFile);
}

TEST_CASE("dataset helpers") {
  const Dataset d = make_synthetic_blobs(3, 4, {1, 2, 2, 2}, 1.0, 0.1, 7);
  CHECK(d.size() == 12);
  CHECK(d.num_classes == 4);
  const Dataset s = d.subset(2, 5);
  CHECK(s.size() == 5);
  CHECK(s.labels.front() == d.labels[2]);
  CHECK(s.images.at(0, 1, 1, 0) == d.images.at(2, 1, 1, 0));
  CHECK_THROWS_AS(d.subset(10, 5), Error);
  CHECK(make_synthetic_blobs(3, 4, {1, 2, 2, 2}, 1.0, 0.1, 7).images == d.images);
}
