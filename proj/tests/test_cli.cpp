#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* kTmp = "/tmp/mvvae_test_cli";

int run(const std::string& args, const std::string& log = "") {
  std::string cmd = std::string(MVVAE_BIN) + " " + args;
  if (!log.empty()) cmd += " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void write_micro_config(const std::string& path) {
  std::ofstream out(path);
  out << "generator.patients = 18\n"
         "generator.class_proportions = 0.5,0.25,0.25\n"
         "generator.frames_per_clip = 2\n"
         "generator.frame_hw = 32\n"
         "generator.heldout_fraction = 0.25\n"
         "encoder.input_hw = 32\n"
         "encoder.channels = 2,2,3,3\n"
         "encoder.latent_dim = 6\n"
         "experiment.views = A4C,PSAX-P\n"
         "experiment.mode = mmvm\n"
         "experiment.task = binary\n"
         "experiment.pretrain_epochs = 1\n"
         "experiment.classifier_epochs = 2\n"
         "experiment.pretrain_batch = 8\n"
         "experiment.batch_size = 4\n"
         "experiment.seeds = 11\n"
         "experiment.val_fraction = 0\n"
         "experiment.patience = 0\n";
}

struct Fixture {
  Fixture() {
    fs::remove_all(kTmp);
    fs::create_directories(kTmp);
    write_micro_config(cfg());
  }
  static std::string cfg() { return std::string(kTmp) + "/micro.cfg"; }
  static std::string dir(const std::string& leaf) {
    return std::string(kTmp) + "/" + leaf;
  }
};

}  // namespace

TEST_CASE("full pipeline: synth, pretrain, train, eval") {
  Fixture fx;

  CHECK(run("synth --config " + fx.cfg() + " --seed 5 --out " + fx.dir("data"),
            fx.dir("synth.log")) == 0);
  CHECK(fs::exists(fx.dir("data/manifest_dev.txt")));
  CHECK(fs::exists(fx.dir("data/manifest_heldout.txt")));
  CHECK(fs::exists(fx.dir("data/config.copy")));

  CHECK(run("pretrain --config " + fx.cfg() + " --data " + fx.dir("data") +
                " --out " + fx.dir("pre"),
            fx.dir("pre.log")) == 0);
  CHECK(fs::exists(fx.dir("pre/seed_11/checkpoints/vae_A4C.ckpt")));
  CHECK(fs::exists(fx.dir("pre/seed_11/checkpoints/vae_PSAX-P.ckpt")));
  CHECK(fs::exists(fx.dir("pre/seed_11/logs/pretrain_mmvm.jsonl")));

  CHECK(run("train --config " + fx.cfg() + " --data " + fx.dir("data") +
                " --pretrained " + fx.dir("pre") + " --out " + fx.dir("clf"),
            fx.dir("train.log")) == 0);
  CHECK(fs::exists(fx.dir("clf/seed_11/checkpoints/classifier.ckpt")));
  CHECK(fs::exists(fx.dir("clf/seed_11/logs/classifier.jsonl")));
  CHECK(fs::exists(fx.dir("clf/config.copy")));

  CHECK(run("eval --config " + fx.cfg() + " --data " + fx.dir("data") +
                " --run " + fx.dir("clf") + " --out " + fx.dir("clf/metrics"),
            fx.dir("eval.log")) == 0);
  CHECK(fs::exists(fx.dir("clf/metrics/metrics.json")));
  CHECK(fs::exists(fx.dir("clf/metrics/metrics.txt")));

  // Re-running eval reproduces the metrics file byte for byte.
  const std::string before = slurp(fx.dir("clf/metrics/metrics.json"));
  CHECK(run("eval --config " + fx.cfg() + " --data " + fx.dir("data") +
                " --run " + fx.dir("clf") + " --out " + fx.dir("clf/metrics"),
            fx.dir("eval2.log")) == 0);
  CHECK(slurp(fx.dir("clf/metrics/metrics.json")) == before);

  // Merging the run's metrics through report works.
  CHECK(run("report " + fx.dir("clf") + " --out " + fx.dir("merged"),
            fx.dir("report.log")) == 0);
  CHECK(fs::exists(fx.dir("merged/metrics.json")));
  CHECK(fs::exists(fx.dir("merged/metrics.txt")));
}

TEST_CASE("train without pretraining checkpoints exits with the training code") {
  Fixture fx;
  REQUIRE(run("synth --config " + fx.cfg() + " --seed 5 --out " + fx.dir("data"),
              fx.dir("synth.log")) == 0);
  const int rc = run("train --config " + fx.cfg() + " --data " + fx.dir("data") +
                         " --pretrained " + fx.dir("missing") + " --out " +
                         fx.dir("clf2"),
                     fx.dir("fail.log"));
  CHECK(rc == 3);
  const std::string log = slurp(fx.dir("fail.log"));
  CHECK(log.find("error: code=3 stage=training") != std::string::npos);
  CHECK(log.find("missing/seed_11/checkpoints/vae_A4C.ckpt") != std::string::npos);
}

TEST_CASE("config errors exit with code 1 and unknown keys are rejected") {
  Fixture fx;
  {
    std::ofstream out(fx.dir("bad.cfg"));
    out << "experiment.modee = mmvm\n";
  }
  const int rc = run("synth --config " + fx.dir("bad.cfg") + " --out " +
                         fx.dir("x"),
                     fx.dir("bad.log"));
  CHECK(rc == 1);
  const std::string log = slurp(fx.dir("bad.log"));
  CHECK(log.find("error: code=1 stage=config") != std::string::npos);
  CHECK(log.find("experiment.modee") != std::string::npos);
}

TEST_CASE("print-effective-config dumps every resolved key") {
  Fixture fx;
  CHECK(run("pretrain --config " + fx.cfg() + " --data x --out y "
            "--print-effective-config",
            fx.dir("eff.log")) == 0);
  const std::string log = slurp(fx.dir("eff.log"));
  for (const char* key :
       {"generator.patients", "augment.blur_prob", "augment.jitter",
        "encoder.channels", "experiment.mode", "experiment.seeds",
        "experiment.views", "augment.saltpepper_threshold"})
    CHECK(log.find(key) != std::string::npos);
  CHECK(log.find("= 0.55") != std::string::npos);  // blur probability default
}

TEST_CASE("seed and view overrides change the effective config") {
  Fixture fx;
  CHECK(run("pretrain --config " + fx.cfg() +
                " --data x --out y --seed 99 --views PLAX "
                "--print-effective-config",
            fx.dir("ovr.log")) == 0);
  const std::string log = slurp(fx.dir("ovr.log"));
  CHECK(log.find("experiment.seeds = 99") != std::string::npos);
  CHECK(log.find("experiment.views = PLAX") != std::string::npos);
}

TEST_CASE("eval --protocol runs the end-to-end protocol from scratch") {
  Fixture fx;
  REQUIRE(run("synth --config " + fx.cfg() + " --seed 5 --out " + fx.dir("data"),
              fx.dir("synth.log")) == 0);
  CHECK(run("eval --config " + fx.cfg() + " --data " + fx.dir("data") +
                " --out " + fx.dir("proto") + " --protocol",
            fx.dir("proto.log")) == 0);
  CHECK(fs::exists(fx.dir("proto/metrics.json")));
}
