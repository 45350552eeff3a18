#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "bcnn/cli.hpp"
#include "bcnn/serialize.hpp"
#include "bcnn/training.hpp"

using namespace bcnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("bcnn_io_" + name); }

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorCode code_of(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_model(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::UsageError;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

ModelGraph small_model() { return build_tiny_bcnn({3, 8, 8, 4, 2, 3}, 5); }

}  // namespace

TEST_CASE("model bytes round trip") {
  const ModelGraph m = small_model();
  const auto bytes = serialize_model(m);
  const ModelGraph back = deserialize_model(bytes);
  CHECK(serialize_model(back) == bytes);
  std::mt19937_64 rng(1);
  RealTensor x({2, 3, 8, 8});
  for (float& v : x.data()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  CHECK(forward(m, x) == forward(back, x));
}

TEST_CASE("header errors") {
  auto bytes = serialize_model(small_model());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(code_of(bad) == ErrorCode::BadMagic);
  bad = bytes;
  bad[4] = 2;
  CHECK(code_of(bad) == ErrorCode::UnsupportedVersion);
  CHECK(code_of(std::span<const std::uint8_t>()) == ErrorCode::TruncatedFile);
}

TEST_CASE("every truncated prefix is rejected as truncated") {
  const auto bytes = serialize_model(small_model());
  for (std::size_t len = 4; len < bytes.size(); len += (len < 200 ? 1 : 97))
    CHECK(code_of(std::span<const std::uint8_t>(bytes.data(), len)) == ErrorCode::TruncatedFile);
  CHECK(code_of(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1)) == ErrorCode::TruncatedFile);
}

TEST_CASE("trailing bytes are corrupt") {
  auto bytes = serialize_model(small_model());
  bytes.push_back(0);
  CHECK(code_of(bytes) == ErrorCode::CorruptRecord);
}

TEST_CASE("channel masks survive a round trip") {
  ModelGraph m = small_model();
  m.binary_convs()[1]->set_active_channels({0, 1, 1, 0});
  const ModelGraph back = deserialize_model(serialize_model(m));
  ModelGraph copy = back;
  CHECK(copy.binary_convs()[1]->active_channels() == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(copy.binary_convs()[0]->active_count() == 4);
}

TEST_CASE("save and load through files") {
  const fs::path p = temp_path("model.bcnn");
  save_model(small_model(), p);
  CHECK(serialize_model(load_model(p)) == serialize_model(small_model()));
  fs::remove(p);
  try {
    load_model(p);
    FAIL("expected MissingFile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
    CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
  }
}

TEST_CASE("text export lists the layers") {
  const std::string t = export_text(small_model());
  CHECK(t.find("BinaryComplexConv") != std::string::npos);
  CHECK(t.find("CGBN") != std::string::npos);
  CHECK(t.find("FC") != std::string::npos);
}

TEST_CASE("cli bench") {
  const CliResult r = cli({"bench", "--kernels", "9", "--latency-ms", "1.53", "--baseline-fps", "3890"});
  CHECK(r.code == 0);
  CHECK(r.out.find("5882 frames/s") != std::string::npos);
  CHECK(r.out.find("speedup 1.51x") != std::string::npos);
  CHECK(cli({"bench", "--kernels", "9"}).code == 2);
  CHECK(cli({"bench", "--kernels", "0", "--latency-ms", "1"}).code == 2);
}

TEST_CASE("cli usage errors") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"export", "--in", "x", "--bogus"}).code == 2);
  CHECK(cli({"train", "--model", "alexnet", "--out", "x"}).code == 2);
}

TEST_CASE("cli infer on a missing model names the path") {
  const std::string p = temp_path("does_not_exist.bcnn").string();
  const CliResult r = cli({"infer", "--in", p, "--image", p});
  CHECK(r.code == 1);
  CHECK(r.err.find(p) != std::string::npos);
}

TEST_CASE("cli train, export and infer") {
  const std::string model = temp_path("cli_a.bcnn").string(), model2 = temp_path("cli_b.bcnn").string();
  const std::vector<std::string> train_args{"train", "--model", "tiny", "--epochs", "1", "--synthetic-per-class",
                                            "2", "--batch", "4", "--seed", "3", "--out"};
  auto with_out = [&](const std::string& out) {
    auto a = train_args;
    a.push_back(out);
    return a;
  };
  REQUIRE(cli(with_out(model)).code == 0);
  REQUIRE(cli(with_out(model2)).code == 0);
  CHECK(read_file(model) == read_file(model2));
  CHECK_NOTHROW(load_model(model));

  const CliResult e = cli({"export", "--in", model, "--format", "text"});
  CHECK(e.code == 0);
  CHECK(e.out.find("BinaryComplexConv") != std::string::npos);

  std::vector<std::uint8_t> records(3 * kCifarRecordBytes);
  std::mt19937_64 rng(4);
  for (std::size_t i = 0; i < records.size(); ++i) records[i] = i % kCifarRecordBytes ? rng() & 0xff : i % 7;
  const fs::path images = temp_path("images.bin");
  {
    std::ofstream out(images, std::ios::binary);
    out.write(reinterpret_cast<const char*>(records.data()), static_cast<std::streamsize>(records.size()));
  }
  const CliResult one = cli({"infer", "--in", model, "--image", images.string(), "--jobs", "1"});
  const CliResult two = cli({"infer", "--in", model, "--image", images.string(), "--jobs", "2"});
  CHECK(one.code == 0);
  CHECK(one.out == two.out);
  CHECK(!one.out.empty());
  CHECK(cli({"infer", "--in", model, "--image", images.string(), "--data", "x"}).code == 2);

  fs::remove(model);
  fs::remove(model2);
  fs::remove(images);
}

TEST_CASE("cli train with zero epochs saves a loadable untrained model") {
  const std::string p = temp_path("cli_zero.bcnn").string();
  CHECK(cli({"train", "--model", "tiny", "--epochs", "0", "--out", p}).code == 0);
  CHECK(load_model(p).name() == "tiny");
  fs::remove(p);
}
