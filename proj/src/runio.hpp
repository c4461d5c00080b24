#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "backbone.hpp"

namespace selfe {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LockedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingCheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Write-temp-then-rename; readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

struct CheckpointMeta {
  long iter = 0;
  bool ema = false;
};

/// Flat binary checkpoint: magic, format version, layer shapes and the
/// network dimensions in the header, then little-endian 32-bit floats in
/// parameter declaration order. A structured-text sidecar (<path>.meta)
/// records the iteration and EMA flag.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const Network<double>& net,
                     const CheckpointMeta& meta);
Network<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

/// Latest checkpoint of the requested kind in <run_dir>/checkpoints, by
/// iteration; throws MissingCheckpointError when none exists.
std::filesystem::path find_latest_checkpoint(const std::filesystem::path& run_dir, bool ema);

/// Exclusive run-directory lock (.lock file, O_EXCL); released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// Append-only CSV with a reproducibility header comment.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& config_hash,
            std::uint64_t seed, const std::string& columns);
  void row(const std::string& line);
  void flush();

 private:
  std::ofstream out_;
};

/// Persisted experiment outcome.
struct RunRecord {
  std::string status;  // "completed" or "aborted"
  std::string reason;
  std::string config_hash;
  long final_iter = 0;
  std::string metrics_path;
  std::vector<std::string> checkpoints;  // run-dir-relative
};

void save_run_record(const std::filesystem::path& run_dir, const RunRecord& rec);
RunRecord load_run_record(const std::filesystem::path& run_dir);

}  // namespace selfe
