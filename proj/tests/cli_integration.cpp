// Drives the relinf binary end to end: pipeline contract, exit codes,
// config handling, and byte-level determinism of the artifacts.
//
// Usage: relinf_cli_tests <path-to-relinf-binary>

#include "relinf/dataset_io.hpp"

#include "support/synthetic.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void check(bool ok, const std::string& what) {
  if (ok) {
    std::cout << "  ok: " << what << "\n";
  } else {
    ++g_failures;
    std::cout << "  FAILED: " << what << "\n";
  }
}

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& cmd) {
  const std::string full = cmd + " 2>&1";
  FILE* pipe = ::popen(full.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string output;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof(buf), pipe))
    output.append(buf, got);
  const int status = ::pclose(pipe);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, output};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: relinf_cli_tests <relinf-binary>\n";
    return 2;
  }
  const std::string bin = argv[1];
  const fs::path work = fs::temp_directory_path() /
                        ("relinf_cli_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string train_csv = (work / "train.csv").string();
  const std::string test_csv = (work / "test.csv").string();
  relinf::save_csv(train_csv, synthetic::gaussian_blobs(90, 4, 3, 11));
  relinf::save_csv(test_csv, synthetic::gaussian_blobs(20, 4, 3, 12));

  const std::string out_a = (work / "a").string();
  const std::string out_b = (work / "b").string();
  const std::string base = bin + " %CMD% --train-data " + train_csv +
                           " --test-data " + test_csv + " --l2 0.01 --seed 3";
  auto cmd = [&](const std::string& sub, const std::string& extra,
                 const std::string& out_dir) {
    std::string c = base;
    c.replace(c.find("%CMD%"), 5, sub);
    return c + " --out-dir " + out_dir + " --stem t " + extra;
  };

  std::cout << "pipeline ordering and exit codes\n";
  {
    RunResult r = run(cmd("influence", "--test-idx 0", out_a));
    check(r.exit_code == 3, "influence before train exits 3");
    check(contains(r.output, "missing or stale"),
          "message names the missing artifact");
  }
  {
    RunResult r = run(cmd("train", "", out_a));
    check(r.exit_code == 0, "train exits 0");
    RunResult r2 = run(cmd("influence", "--test-idx 0", out_a));
    check(r2.exit_code == 3, "influence without gradcache exits 3");
    check(contains(r2.output, "gradcache missing or stale"),
          "gradcache message names the stage");
  }
  {
    check(run(cmd("gradcache", "", out_a)).exit_code == 0, "gradcache exits 0");
    check(run(cmd("stest", "--test-idx 0", out_a)).exit_code == 0,
          "stest exits 0");
    RunResult r = run(cmd("influence", "--test-idx 0 --method l-relatif --k 3",
                          out_a));
    check(r.exit_code == 0, "influence exits 0");
    RunResult rp = run(cmd("project", "--q 3", out_a));
    check(rp.exit_code == 0, "project exits 0");
    const std::string proj = rp.output.substr(0, rp.output.find_first_of("\n"));
    RunResult re = run(cmd("evaluate",
                           "--test-count 6 --loo-count 3 --k 2 --projection " +
                               proj,
                           out_a));
    check(re.exit_code == 0, "evaluate exits 0");
    RunResult rl = run(cmd("loo", "--remove-idx 5 --test-idx 1", out_a));
    check(rl.exit_code == 0, "loo exits 0");
    RunResult rr = run(cmd("relatif", "--test-idx 2 --k 2", out_a));
    check(rr.exit_code == 0, "relatif exits 0");
    check(contains(rr.output, "l-relatif"),
          "relatif defaults to the l-relatif method");
  }

  std::cout << "config validation\n";
  {
    RunResult r = run(cmd("train", "--damping -0.5", out_a));
    check(r.exit_code == 2, "negative damping exits 2");
    check(contains(r.output, "damping"), "message names damping");
  }
  {
    const std::string cfg_path = (work / "bad.cfg").string();
    std::ofstream(cfg_path) << "dampinng = 0.1\n";
    RunResult r = run(bin + " train --config " + cfg_path);
    check(r.exit_code == 2, "unknown config key exits 2");
    check(contains(r.output, "dampinng"), "message names the unknown key");
  }
  {
    const std::string cfg_path = (work / "good.cfg").string();
    std::ofstream(cfg_path) << "train_data = " << train_csv << "\n"
                            << "test_data = " << test_csv << "\n"
                            << "l2 = 0.01\n"
                            << "seed = 3\n"
                            << "out_dir = " << (work / "c").string() << "\n"
                            << "stem = t\n"
                            << "damping = 0.5\n";
    RunResult r = run(bin + " train --config " + cfg_path + " --damping 0.002");
    check(r.exit_code == 0, "config file plus flag override parses");
    // Flag wins: the artifact embeds damping 0.002.
    std::string params;
    for (const auto& e : fs::directory_iterator(work / "c"))
      if (contains(e.path().filename().string(), "params"))
        params = e.path().string();
    check(!params.empty() && contains(read_file(params), "\"damping\": 0.002"),
          "flags win over the config file");
  }
  {
    RunResult r = run(cmd("influence", "--test-idx 999", out_a));
    check(r.exit_code == 2, "out-of-range test_idx exits 2");
  }
  {
    RunResult r = run(cmd(
        "influence", "--test-idx 0 --solver lissa --lissa-scale 1e-7", out_a));
    check(r.exit_code == 4, "diverging lissa solve exits 4");
    check(contains(r.output, "scale"), "message advises on the scale");
  }

  std::cout << "determinism\n";
  {
    // Identical config (including out_dir) run twice; snapshot the bytes in
    // between and compare.
    auto pipeline = [&]() {
      check(run(cmd("train", "", out_b)).exit_code == 0, "train pass");
      check(run(cmd("gradcache", "", out_b)).exit_code == 0, "gradcache pass");
      check(run(cmd("influence", "--test-idx 1 --method theta-relatif", out_b))
                    .exit_code == 0,
            "influence pass");
      check(run(cmd("evaluate", "--test-count 5 --loo-count 2 --k 2", out_b))
                    .exit_code == 0,
            "evaluate pass");
    };
    pipeline();
    std::map<std::string, std::string> snapshot;
    for (const auto& e : fs::directory_iterator(out_b))
      snapshot[e.path().filename().string()] = read_file(e.path());
    check(!snapshot.empty(), "artifacts were produced");
    pipeline();
    bool all_equal = true;
    for (const auto& [name, bytes] : snapshot) {
      const std::string again = read_file(fs::path(out_b) / name);
      if (again != bytes || bytes.empty()) {
        all_equal = false;
        std::cout << "  mismatch: " << name << "\n";
      }
    }
    check(all_equal, "same config and seed give byte-identical artifacts");
  }

  std::cout << "idx ingestion\n";
  {
    auto be32 = [](std::uint32_t v) {
      std::string s(4, '\0');
      s[0] = static_cast<char>(v >> 24);
      s[1] = static_cast<char>((v >> 16) & 0xff);
      s[2] = static_cast<char>((v >> 8) & 0xff);
      s[3] = static_cast<char>(v & 0xff);
      return s;
    };
    std::string img = be32(0x803) + be32(6) + be32(2) + be32(2);
    std::string lab = be32(0x801) + be32(6);
    for (int i = 0; i < 6; ++i) {
      for (int p = 0; p < 4; ++p)
        img += static_cast<char>((i * 40 + p * 10) % 256);
      lab += static_cast<char>(i % 2);
    }
    const std::string img_path = (work / "toy.idx3").string();
    const std::string lab_path = (work / "toy.idx1").string();
    std::ofstream(img_path, std::ios::binary) << img;
    std::ofstream(lab_path, std::ios::binary) << lab;
    RunResult r = run(bin + " train --format idx --train-images " + img_path +
                      " --train-labels " + lab_path + " --l2 0.5 --out-dir " +
                      (work / "idx").string() + " --stem t");
    check(r.exit_code == 0, "training from idx files works");
  }

  fs::remove_all(work);
  if (g_failures == 0) {
    std::cout << "cli integration: all checks passed\n";
    return 0;
  }
  std::cout << "cli integration: " << g_failures << " checks FAILED\n";
  return 1;
}
