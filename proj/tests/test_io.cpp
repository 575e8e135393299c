#include "relinf/dataset_io.hpp"
#include "relinf/grad_cache.hpp"
#include "relinf/hash.hpp"
#include "relinf/model.hpp"

#include "support/synthetic.hpp"

#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

using namespace relinf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("relinf_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("csv loader parses a small file in order") {
  TempDir dir;
  const auto path = dir.file("toy.csv");
  write_file(path, "label,f0,f1\n0,1.5,2.0\n1,-1.0,0.25\n0,0.0,3.5\n");
  const Dataset data = load_csv(path, 2);
  CHECK(data.n() == 3);
  CHECK(data.d() == 2);
  CHECK(data.c == 2);
  CHECK(data.labels[0] == 0);
  CHECK(data.labels[1] == 1);
  CHECK(data.labels[2] == 0);
  CHECK(data.features(1, 1) == doctest::Approx(0.25));
}

TEST_CASE("csv loader rejects out-of-range labels naming the row") {
  TempDir dir;
  const auto path = dir.file("bad_label.csv");
  write_file(path, "label,f0\n0,1.0\n5,2.0\n1,3.0\n");
  try {
    load_csv(path, 3);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("label out of range at row") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
}

TEST_CASE("csv loader rejects non-numeric features naming the row") {
  TempDir dir;
  const auto path = dir.file("bad_feature.csv");
  write_file(path, "label,f0\n0,1.0\n1,abc\n");
  try {
    load_csv(path, 2);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("non-numeric feature at row 2") !=
          std::string::npos);
  }
}

TEST_CASE("csv loader rejects a malformed header") {
  TempDir dir;
  const auto path = dir.file("bad_header.csv");
  write_file(path, "lbl,f0\n0,1.0\n");
  CHECK_THROWS_AS(load_csv(path, 2), DataError);
}

TEST_CASE("csv round-trip preserves the dataset") {
  TempDir dir;
  Dataset data = synthetic::gaussian_blobs(12, 3, 2, 9);
  const auto path = dir.file("roundtrip.csv");
  save_csv(path, data);
  const Dataset loaded = load_csv(path, data.c);
  CHECK((loaded.features - data.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.labels - data.labels).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("idx loader reads images and labels, scaling pixels") {
  TempDir dir;
  const auto img_path = dir.file("images.idx3");
  const auto lab_path = dir.file("labels.idx1");
  // Two 2x2 images.
  std::string img;
  auto be32 = [](std::uint32_t v) {
    std::string s(4, '\0');
    s[0] = static_cast<char>(v >> 24);
    s[1] = static_cast<char>((v >> 16) & 0xff);
    s[2] = static_cast<char>((v >> 8) & 0xff);
    s[3] = static_cast<char>(v & 0xff);
    return s;
  };
  img += be32(0x00000803);
  img += be32(2);
  img += be32(2);
  img += be32(2);
  const unsigned char pixels[8] = {0, 51, 102, 153, 204, 255, 0, 255};
  img.append(reinterpret_cast<const char*>(pixels), 8);
  write_file(img_path, img);

  std::string lab;
  lab += be32(0x00000801);
  lab += be32(2);
  lab += '\x01';
  lab += '\x00';
  write_file(lab_path, lab);

  const Dataset data = load_idx(img_path, lab_path, 2);
  CHECK(data.n() == 2);
  CHECK(data.d() == 4);
  CHECK(data.features(0, 1) == doctest::Approx(51.0 / 255.0));
  CHECK(data.features(1, 1) == doctest::Approx(1.0));
  CHECK(data.labels[0] == 1);
  CHECK(data.labels[1] == 0);
}

TEST_CASE("idx loader rejects a bad magic number") {
  TempDir dir;
  const auto img_path = dir.file("bad.idx3");
  const auto lab_path = dir.file("bad.idx1");
  write_file(img_path, std::string("\x00\x00\x08\x99", 4) + std::string(12, '\0'));
  write_file(lab_path, std::string("\x00\x00\x08\x01", 4) + std::string(4, '\0'));
  try {
    load_idx(img_path, lab_path, 2);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
  }
}

TEST_CASE("gradient cache file round-trips exactly") {
  TempDir dir;
  auto inst = synthetic::random_softmax_instance(19, 8, 3, 2);
  const GradCache cache = build_grad_cache(inst.theta, inst.data);
  const auto path = dir.file("cache.bin");
  save_grad_cache(path, cache);
  const GradCache loaded = load_grad_cache(path);
  CHECK(loaded.params_hash == cache.params_hash);
  REQUIRE(loaded.grads.rows() == cache.grads.rows());
  REQUIRE(loaded.grads.cols() == cache.grads.cols());
  CHECK((loaded.grads - cache.grads).cwiseAbs().maxCoeff() == 0.0);

  // Saving the loaded cache reproduces the bytes exactly.
  const auto path2 = dir.file("cache2.bin");
  save_grad_cache(path2, loaded);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("stale gradient cache is detected by fingerprint") {
  auto inst = synthetic::random_softmax_instance(23, 6, 2, 2);
  const GradCache cache = build_grad_cache(inst.theta, inst.data);
  ParamVector other = inst.theta;
  other.values[0] += 1.0;
  CHECK_THROWS_AS(require_fresh(cache, params_fingerprint(other)),
                  StaleCacheError);
  CHECK_NOTHROW(require_fresh(cache, params_fingerprint(inst.theta)));
}

TEST_CASE("gradient cache loader rejects corrupted files") {
  TempDir dir;
  const auto path = dir.file("corrupt.bin");
  write_file(path, "NOTM");
  CHECK_THROWS_AS(load_grad_cache(path), DataError);
  const auto truncated = dir.file("trunc.bin");
  write_file(truncated, std::string("IFGC") + std::string(10, '\0'));
  CHECK_THROWS_AS(load_grad_cache(truncated), DataError);
}

TEST_CASE("params fingerprint distinguishes specs and values") {
  ModelSpec spec;
  spec.d = 2;
  spec.c = 2;
  ParamVector a{Vector::Zero(spec.param_count()), spec};
  ParamVector b = a;
  CHECK(params_fingerprint(a) == params_fingerprint(b));
  b.values[1] = 1e-12;
  CHECK(params_fingerprint(a) != params_fingerprint(b));
  ParamVector c = a;
  c.spec.l2 = 0.5;
  CHECK(params_fingerprint(a) != params_fingerprint(c));
}
