#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "trust_cli_test";

int trust(const std::string& args) {
  const std::string cmd = "TRUST_THREADS=0 " + std::string(TRUST_CLI_PATH) + " " + args + " >>" +
                          (kRoot / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Byte comparison of two output trees; run.json is compared without its wall-clock duration.
bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel)) return false;
    ++files;
    if (rel.filename() == "run.json") {
      json ja = json::parse(slurp(e.path())), jb = json::parse(slurp(b / rel));
      ja.erase("duration_seconds");
      jb.erase("duration_seconds");
      if (ja != jb) return false;
    } else if (slurp(e.path()) != slurp(b / rel)) {
      return false;
    }
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  return files > 0 && files == other;
}

// Runs a command twice into the same output path and compares the trees.
bool deterministic(const std::string& args, const fs::path& out) {
  fs::remove_all(out);
  if (trust(args + " --out " + out.string()) != 0) return false;
  const fs::path first = out.string() + ".first";
  fs::remove_all(first);
  fs::rename(out, first);
  if (trust(args + " --out " + out.string()) != 0) return false;
  return same_tree(first, out);
}

void write_model_config(const fs::path& p) {
  std::ofstream(p) << R"({"kind": "trust", "trust": {"patch_size": 2, "embed_dim": 4, "num_heads": 2,
    "encoder_depth": 2, "mlp_ratio": 2, "pool_grid": 1, "decoder_channels": [4, 4, 2, 2],
    "skips": [{"block": 2, "stage": 1}, {"block": 1, "stage": 3}], "seed": 1}})";
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "exit codes") {
  CHECK(trust("") == 2);
  CHECK(trust("frobnicate") == 2);
  CHECK(trust("verify-bound --grid 8x12 --out " + (kRoot / "bad.csv").string()) == 2);
  CHECK(trust("verify-bound --grid 12x12x2 --kinds orthonormal --trials 200 --out " + (kRoot / "orth.csv").string()) ==
        0);
  CHECK(fs::exists(kRoot / "run.json"));
  CHECK(trust("verify-bound --grid 8x12x2 --kinds gaussian --trials 200 --out " + (kRoot / "g.csv").string()) == 0);
  CHECK(trust("solve --method omp --dataset " + (kRoot / "nope").string() + " --out " + (kRoot / "s").string()) == 2);
  CHECK(trust("gen-data --train 0 --out " + (kRoot / "zero").string()) == 2);
  fs::create_directories(kRoot / "empty_runs");
  CHECK(trust("report --runs " + (kRoot / "empty_runs").string()) == 1);
}

TEST_CASE_FIXTURE(Fixture, "end-to-end pipeline is deterministic") {
  const auto data = kRoot / "data";
  const std::string gen = "gen-data --seed 7 --train 8 --val 4 --test 3 --image-size 8";
  CHECK(deterministic(gen, data));
  const auto manifest = json::parse(slurp(data / "manifest.json"));
  CHECK(manifest["splits"]["train"]["count"] == 8);

  const auto fourier = kRoot / "fourier";
  REQUIRE(trust("gen-data --operator fourier --keep 0.25 --train 2 --val 1 --test 1 --image-size 8 --out " +
                fourier.string()) == 0);
  CHECK(json::parse(slurp(fourier / "manifest.json"))["operator"]["mask_fraction"].get<double>() ==
        doctest::Approx(0.25));

  const auto cfg = kRoot / "model.json";
  write_model_config(cfg);
  const auto runs = kRoot / "runs";
  const std::string train =
      "train --dataset " + data.string() + " --model-config " + cfg.string() + " --epochs 2 --batch 4 --lr 1e-3";
  CHECK(deterministic(train, runs / "train"));

  const std::string eval = "eval --checkpoint " + (runs / "train" / "best.ckpt").string() + " --dataset " +
                           data.string() + " --split test";
  CHECK(deterministic(eval, runs / "eval"));
  const auto metrics = json::parse(slurp(runs / "eval" / "metrics.json"));
  CHECK(metrics["count"] == 3);

  SUBCASE("zero learning rate gives a flat log") {
    REQUIRE(trust("train --dataset " + data.string() + " --model-config " + cfg.string() +
                  " --epochs 3 --batch 4 --lr 0 --out " + (kRoot / "flat").string()) == 0);
    std::istringstream log(slurp(kRoot / "flat" / "epochs.csv"));
    std::string line, first_val;
    std::getline(log, line);
    int rows = 0;
    while (std::getline(log, line)) {
      std::istringstream cols(line);
      std::string epoch, train_loss, val_loss;
      std::getline(cols, epoch, ',');
      std::getline(cols, train_loss, ',');
      std::getline(cols, val_loss, ',');
      if (rows++ == 0) first_val = val_loss;
      CHECK(val_loss == first_val);
    }
    CHECK(rows == 3);
  }

  SUBCASE("skips none, unet, and images") {
    CHECK(trust("train --dataset " + data.string() + " --model-config " + cfg.string() +
                " --skips none --epochs 1 --out " + (runs / "noskip").string()) == 0);
    CHECK(trust("train --dataset " + data.string() + " --model-config " + cfg.string() +
                " --skips 101 --epochs 1 --out " + (kRoot / "badmask").string()) == 2);
    CHECK(trust("train --dataset " + data.string() + " --model unet --epochs 1 --out " + (runs / "unet").string()) ==
          0);
    const auto images = kRoot / "images";
    CHECK(trust("eval --checkpoint " + (runs / "unet" / "last.ckpt").string() + " --dataset " + data.string() +
                " --split test --emit-images " + images.string() + " --out " + (runs / "unet_eval").string()) == 0);
    std::size_t pgm = 0;
    for (const auto& e : fs::directory_iterator(images)) pgm += e.path().extension() == ".pgm";
    CHECK(pgm == 9);
    CHECK(slurp(images / "00000_xhat.pgm").rfind("P5\n8 8\n255\n", 0) == 0);
  }

  SUBCASE("solvers and report") {
    const auto ident = kRoot / "ident";
    REQUIRE(trust("gen-data --operator identity --noise 0 --train 2 --val 1 --test 2 --image-size 8 --out " +
                  ident.string()) == 0);
    REQUIRE(trust("solve --method omp --dataset " + ident.string() + " --out " + (runs / "omp").string()) == 0);
    const auto rows = slurp(runs / "omp" / "metrics.csv");
    CHECK(rows.find(",240,") != std::string::npos);
    REQUIRE(trust("solve --method fista --dataset " + ident.string() + " --out " + (runs / "fista").string()) == 0);
    REQUIRE(trust("report --runs " + runs.string()) == 0);
    const auto table = slurp(runs / "report.md");
    CHECK(table.find("| run | command | model | params |") != std::string::npos);
    CHECK(table.find("| eval |") != std::string::npos);
    CHECK(table.find("| omp |") != std::string::npos);
    const auto csv = slurp(runs / "report.csv");
    CHECK(csv.rfind("run,command,model,param_count", 0) == 0);
  }
}
