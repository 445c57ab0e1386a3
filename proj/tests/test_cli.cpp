#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sptseg/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(SPTSEG_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sptseg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small model and dataset so each command takes a moment.
const char* kSmall =
    "[encoder]\nimage_side = 24\nlayers = 2\nwidth = 16\nheads = 2\nspt_range = 1-1\n\n"
    "[decoder]\nheads = 2\nlayers = 1\n\n"
    "[train]\nsteps = 3\nbatch = 2\nseed = 5\n\n"
    "[data]\nn_train = 6\nn_test = 4\n";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --data x").code == 2);
  CHECK(cli("verify --suite nope").code == 2);
}

TEST_CASE("an unknown config key exits 2 and names the key") {
  auto dir = workdir("badkey");
  write_text(dir / "bad.ini", "[train]\nstepz = 4\n");
  Run r = cli("gen-data --config " + (dir / "bad.ini").string() + " --out " + (dir / "d").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("stepz") != std::string::npos);
}

TEST_CASE("a missing dataset exits 3") {
  auto dir = workdir("nodata");
  Run r = cli("train --data " + (dir / "absent").string() + " --out " + (dir / "o").string());
  CHECK(r.code == 3);
  CHECK(r.output.find("manifest") != std::string::npos);
}

TEST_CASE("gen-data twice produces identical trees") {
  auto dir = workdir("gen");
  write_text(dir / "small.ini", kSmall);
  const std::string cfg = " --config " + (dir / "small.ini").string();
  REQUIRE(cli("gen-data" + cfg + " --out " + (dir / "a").string()).code == 0);
  REQUIRE(cli("gen-data" + cfg + " --out " + (dir / "b").string()).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    CAPTURE(rel.string());
    REQUIRE(fs::exists(dir / "b" / rel));
    CHECK(read_text(e.path()) == read_text(dir / "b" / rel));
    ++files;
  }
  CHECK(files == 2 * (6 + 4) + 1);
  REQUIRE(cli("gen-data" + cfg + " --seed 99 --out " + (dir / "c").string()).code == 0);
  CHECK(read_text(dir / "a/train/0000.ppm") != read_text(dir / "c/train/0000.ppm"));
}

TEST_CASE("train, eval and report round trip; spt=off has no filter tensors") {
  auto dir = workdir("train");
  write_text(dir / "small.ini", kSmall);
  const std::string cfg = " --config " + (dir / "small.ini").string();
  const std::string data = (dir / "data").string();
  REQUIRE(cli("gen-data" + cfg + " --out " + data).code == 0);

  Run t = cli("train" + cfg + " --data " + data + " --out " + (dir / "run").string() + " --ablate spt=off");
  REQUIRE(t.code == 0);
  CHECK(t.output.find("step=3 focal=") != std::string::npos);
  auto ck = sptseg::load_checkpoint(sptseg::read_file(dir / "run/checkpoint.bin"));
  CHECK_FALSE(ck.tensors.empty());
  for (const auto& nt : ck.tensors) CHECK(nt.name.find(".w_f.") == std::string::npos);

  Run e = cli("eval --checkpoint " + (dir / "run/checkpoint.bin").string() + " --data " + data + " --report " +
              (dir / "report.txt").string() + " --workers 2");
  REQUIRE(e.code == 0);
  const std::string rep = read_text(dir / "report.txt");
  for (const char* key : {"pAcc=", "mIoU_seen=", "mIoU_unseen=", "hIoU="}) CHECK(rep.find(key) != std::string::npos);

  Run md = cli("report --loss " + (dir / "run/loss.csv").string() + " --report " + (dir / "report.txt").string());
  CHECK(md.code == 0);
  CHECK(md.output.find("| mIoU_seen |") != std::string::npos);
}

TEST_CASE("a corrupt checkpoint exits 5") {
  auto dir = workdir("corrupt");
  write_text(dir / "small.ini", kSmall);
  const std::string cfg = " --config " + (dir / "small.ini").string();
  const std::string data = (dir / "data").string();
  REQUIRE(cli("gen-data" + cfg + " --out " + data).code == 0);
  REQUIRE(cli("train" + cfg + " --data " + data + " --out " + (dir / "run").string()).code == 0);
  auto bytes = sptseg::read_file(dir / "run/checkpoint.bin");
  bytes[bytes.size() / 2] ^= 1;
  sptseg::write_file(dir / "bad.bin", bytes);
  Run e = cli("eval --checkpoint " + (dir / "bad.bin").string() + " --data " + data);
  CHECK(e.code == 5);
}

TEST_CASE("a dataset that disagrees with the config exits 2") {
  auto dir = workdir("layout");
  write_text(dir / "small.ini", kSmall);
  const std::string data = (dir / "data").string();
  REQUIRE(cli("gen-data --config " + (dir / "small.ini").string() + " --out " + data).code == 0);
  // Default config expects 48-pixel images.
  CHECK(cli("train --data " + data + " --out " + (dir / "run").string()).code == 2);
}

TEST_CASE("verify suites exit 0 when every property holds") {
  Run r = cli("verify --suite fft");
  CHECK(r.code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
  Run m = cli("verify --suite metrics");
  CHECK(m.code == 1);
  CHECK(m.output.find("failed property") != std::string::npos);
}

TEST_CASE("50-step smoke run on the default configuration finishes within a minute") {
  auto dir = workdir("smoke");
  const std::string data = (dir / "data").string();
  REQUIRE(cli("gen-data --out " + data).code == 0);
  write_text(dir / "smoke.ini", "[train]\nsteps = 50\n");
  const auto t0 = std::chrono::steady_clock::now();
  Run t = cli("train --config " + (dir / "smoke.ini").string() + " --data " + data + " --out " +
              (dir / "run").string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(t.code == 0);
  MESSAGE("smoke train took " << secs << " s");
  CHECK(secs < 60.0);
}
