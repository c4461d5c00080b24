#include "runio.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <sstream>

namespace selfe {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

constexpr char kMagic[8] = {'S', 'E', 'L', 'F', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  s.append(b, 4);
}

std::uint32_t get_u32(const std::string& s, size_t& at) {
  if (at + 4 > s.size()) throw IoError("checkpoint truncated");
  auto b = reinterpret_cast<const unsigned char*>(s.data() + at);
  at += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::string& s, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(s, u);
}

float get_f32(const std::string& s, size_t& at) {
  std::uint32_t u = get_u32(s, at);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void save_checkpoint_f32(const fs::path& path, const Network<float>& net,
                         const CheckpointMeta& meta) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.dim));
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.classes));
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.hidden));
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.depth));
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.cond_emb));
  put_u32(buf, static_cast<std::uint32_t>(net.cfg.time_feats));
  put_u32(buf, static_cast<std::uint32_t>(net.params.size()));
  for (const auto& m : net.params) {
    put_u32(buf, static_cast<std::uint32_t>(m.rows()));
    put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  }
  for (const auto& m : net.params)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(buf, m(r, c));
  atomic_write(path, buf);

  std::ostringstream side;
  side << "iter = " << meta.iter << "\n";
  side << "ema = " << (meta.ema ? "true" : "false") << "\n";
  fs::path mp = path;
  mp += ".meta";
  atomic_write(mp, side.str());
}

}  // namespace

void save_checkpoint(const fs::path& path, const Network<float>& net, const CheckpointMeta& meta) {
  save_checkpoint_f32(path, net, meta);
}

void save_checkpoint(const fs::path& path, const Network<double>& net, const CheckpointMeta& meta) {
  save_checkpoint_f32(path, net.cast<float>(), meta);
}

Network<float> load_checkpoint(const fs::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingCheckpointError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path.string());
  size_t at = 8;
  std::uint32_t version = get_u32(buf, at);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  Network<float> net;
  net.cfg.dim = static_cast<int>(get_u32(buf, at));
  net.cfg.classes = static_cast<int>(get_u32(buf, at));
  net.cfg.hidden = static_cast<int>(get_u32(buf, at));
  net.cfg.depth = static_cast<int>(get_u32(buf, at));
  net.cfg.cond_emb = static_cast<int>(get_u32(buf, at));
  net.cfg.time_feats = static_cast<int>(get_u32(buf, at));
  std::uint32_t n_tensors = get_u32(buf, at);
  if (n_tensors != static_cast<std::uint32_t>(net.n_params()))
    throw IoError("checkpoint tensor count does not match its header dimensions");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(n_tensors);
  for (auto& sh : shapes) {
    sh.first = get_u32(buf, at);
    sh.second = get_u32(buf, at);
  }
  net.params.resize(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Mat<float> m(shapes[i].first, shapes[i].second);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get_f32(buf, at);
    net.params[i] = std::move(m);
  }
  if (meta) {
    fs::path mp = path;
    mp += ".meta";
    std::ifstream ms(mp);
    CheckpointMeta out;
    if (ms) {
      std::string line;
      while (std::getline(ms, line)) {
        std::istringstream ls(line);
        std::string key, eq, value;
        if (ls >> key >> eq >> value) {
          if (key == "iter") out.iter = std::stol(value);
          if (key == "ema") out.ema = (value == "true");
        }
      }
    }
    *meta = out;
  }
  return net;
}

fs::path find_latest_checkpoint(const fs::path& run_dir, bool ema) {
  fs::path dir = run_dir / "checkpoints";
  if (!fs::exists(dir)) throw MissingCheckpointError("no checkpoints directory in " + run_dir.string());
  fs::path best;
  long best_iter = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".bin") continue;
    std::string stem = entry.path().stem().string();
    bool is_ema = stem.size() > 4 && stem.substr(stem.size() - 4) == "_ema";
    if (is_ema != ema) continue;
    CheckpointMeta meta;
    std::ifstream ms(entry.path().string() + ".meta");
    long iter = 0;
    if (ms) {
      std::string line;
      while (std::getline(ms, line)) {
        std::istringstream ls(line);
        std::string key, eq, value;
        if (ls >> key >> eq >> value && key == "iter") iter = std::stol(value);
      }
    }
    if (iter > best_iter) {
      best_iter = iter;
      best = entry.path();
    }
  }
  if (best_iter < 0)
    throw MissingCheckpointError(std::string("no ") + (ema ? "EMA " : "") + "checkpoint found in " + dir.string());
  return best;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0)
    throw LockedError("run directory is locked by another command: " + run_dir.string());
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

CsvWriter::CsvWriter(const fs::path& path, const std::string& config_hash, std::uint64_t seed,
                     const std::string& columns) {
  out_.open(path, std::ios::trunc);
  if (!out_) throw IoError("cannot open for writing: " + path.string());
  out_ << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out_ << columns << "\n";
}

void CsvWriter::row(const std::string& line) { out_ << line << "\n"; }

void CsvWriter::flush() { out_.flush(); }

void save_run_record(const fs::path& run_dir, const RunRecord& rec) {
  std::ostringstream o;
  o << "status = " << rec.status << "\n";
  o << "reason = " << rec.reason << "\n";
  o << "config_hash = " << rec.config_hash << "\n";
  o << "final_iter = " << rec.final_iter << "\n";
  o << "metrics = " << rec.metrics_path << "\n";
  o << "checkpoint_count = " << rec.checkpoints.size() << "\n";
  for (size_t i = 0; i < rec.checkpoints.size(); ++i)
    o << "checkpoint_" << i << " = " << rec.checkpoints[i] << "\n";
  atomic_write(run_dir / "run_record.txt", o.str());
}

RunRecord load_run_record(const fs::path& run_dir) {
  std::ifstream in(run_dir / "run_record.txt");
  if (!in) throw IoError("no run record in " + run_dir.string());
  RunRecord rec;
  std::string line;
  std::vector<std::pair<size_t, std::string>> ckpts;
  while (std::getline(in, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "status") rec.status = value;
    else if (key == "reason") rec.reason = value;
    else if (key == "config_hash") rec.config_hash = value;
    else if (key == "final_iter") rec.final_iter = std::stol(value);
    else if (key == "metrics") rec.metrics_path = value;
    else if (key.rfind("checkpoint_", 0) == 0 && key != "checkpoint_count")
      ckpts.emplace_back(std::stoul(key.substr(11)), value);
  }
  std::sort(ckpts.begin(), ckpts.end());
  for (auto& [i, p] : ckpts) rec.checkpoints.push_back(p);
  return rec;
}

}  // namespace selfe
