#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "runio.hpp"

using namespace selfe;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("selfe_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Network<float> make_net(std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.dim = 2;
  cfg.hidden = 16;
  cfg.depth = 2;
  cfg.classes = 3;
  cfg.cond_emb = 8;
  cfg.time_feats = 16;
  Rng rng(seed);
  Network<float> net = Network<float>::init(cfg, rng);
  net.params[static_cast<size_t>(net.out_w())] = randn_mat<float>(rng, 16, 2);
  return net;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact in 32-bit storage") {
  fs::path dir = fresh_dir("ckpt");
  Network<float> net = make_net(1);
  save_checkpoint(dir / "a.bin", net, CheckpointMeta{1234, false});
  CheckpointMeta meta;
  Network<float> back = load_checkpoint(dir / "a.bin", &meta);
  CHECK(back.cfg == net.cfg);
  REQUIRE(back.params.size() == net.params.size());
  for (size_t i = 0; i < net.params.size(); ++i)
    CHECK((back.params[i] - net.params[i]).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(meta.iter == 1234);
  CHECK(meta.ema == false);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint header carries shapes and rejects corruption") {
  fs::path dir = fresh_dir("corrupt");
  Network<float> net = make_net(2);
  save_checkpoint(dir / "a.bin", net, CheckpointMeta{7, true});
  // magic check
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "NOTSELFE garbage";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), MissingCheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("double networks save through the same 32-bit format") {
  fs::path dir = fresh_dir("f64");
  Network<float> f32 = make_net(3);
  Network<double> f64 = f32.cast<double>();
  save_checkpoint(dir / "d.bin", f64, CheckpointMeta{1, true});
  Network<float> back = load_checkpoint(dir / "d.bin");
  for (size_t i = 0; i < f32.params.size(); ++i)
    CHECK((back.params[i] - f32.params[i]).cwiseAbs().maxCoeff() == 0.0f);
  fs::remove_all(dir);
}

TEST_CASE("latest checkpoint is found by iteration and kind") {
  fs::path dir = fresh_dir("latest");
  fs::create_directories(dir / "checkpoints");
  Network<float> net = make_net(4);
  save_checkpoint(dir / "checkpoints/ckpt_000100.bin", net, CheckpointMeta{100, false});
  save_checkpoint(dir / "checkpoints/ckpt_000100_ema.bin", net, CheckpointMeta{100, true});
  save_checkpoint(dir / "checkpoints/ckpt_000200.bin", net, CheckpointMeta{200, false});
  save_checkpoint(dir / "checkpoints/ckpt_000200_ema.bin", net, CheckpointMeta{200, true});
  CHECK(find_latest_checkpoint(dir, false).filename() == "ckpt_000200.bin");
  CHECK(find_latest_checkpoint(dir, true).filename() == "ckpt_000200_ema.bin");
  fs::path none = fresh_dir("none");
  CHECK_THROWS_AS(find_latest_checkpoint(none, false), MissingCheckpointError);
  fs::remove_all(dir);
  fs::remove_all(none);
}

TEST_CASE("atomic write leaves no partial files behind") {
  fs::path dir = fresh_dir("atomic");
  atomic_write(dir / "x.txt", "hello\n");
  CHECK(fs::exists(dir / "x.txt"));
  CHECK(!fs::exists(dir / "x.txt.tmp"));
  std::ifstream in(dir / "x.txt");
  std::string s;
  std::getline(in, s);
  CHECK(s == "hello");
  fs::remove_all(dir);
}

TEST_CASE("run lock is exclusive and releases on destruction") {
  fs::path dir = fresh_dir("lock");
  auto take = [&] { RunLock second(dir); };
  {
    RunLock lock(dir);
    CHECK_THROWS_AS(take(), LockedError);
  }
  CHECK_NOTHROW(take());
  fs::remove_all(dir);
}

TEST_CASE("run record round-trip") {
  fs::path dir = fresh_dir("record");
  RunRecord rec;
  rec.status = "completed";
  rec.reason = "";
  rec.config_hash = "deadbeefdeadbeef";
  rec.final_iter = 4242;
  rec.metrics_path = "metrics.csv";
  rec.checkpoints = {"checkpoints/a.bin", "checkpoints/b.bin"};
  save_run_record(dir, rec);
  RunRecord back = load_run_record(dir);
  CHECK(back.status == rec.status);
  CHECK(back.config_hash == rec.config_hash);
  CHECK(back.final_iter == rec.final_iter);
  CHECK(back.checkpoints == rec.checkpoints);
  fs::remove_all(dir);
}

TEST_CASE("csv writer stamps the reproducibility header") {
  fs::path dir = fresh_dir("csv");
  {
    CsvWriter w(dir / "t.csv", "cafebabecafebabe", 99, "a,b");
    w.row("1,2");
    w.flush();
  }
  std::ifstream in(dir / "t.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config_hash=cafebabecafebabe seed=99");
  std::getline(in, line);
  CHECK(line == "a,b");
  std::getline(in, line);
  CHECK(line == "1,2");
  fs::remove_all(dir);
}
