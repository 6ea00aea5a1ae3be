#pragma once

// Filesystem run store: content-addressed blobs, an append-only JSONL
// ledger and persisted dataset manifests.
//
//   <root>/blobs/<first two hex>/<sha256>
//   <root>/ledger.jsonl
//   <root>/datasets/<dataset_id>.json

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "langxai/blobs.hpp"
#include "langxai/domain.hpp"
#include "langxai/image_io.hpp"

namespace langxai {

namespace fs = std::filesystem;

enum class RecordKind { Explanation, MetricReport };

inline std::string_view to_string(RecordKind k) {
  return k == RecordKind::Explanation ? "explanation" : "metric_report";
}
inline RecordKind parse_record_kind(std::string_view s) {
  if (s == "explanation") return RecordKind::Explanation;
  if (s == "metric_report") return RecordKind::MetricReport;
  fail(ErrorCode::ParseError, "unknown record kind '" + std::string(s) + "'");
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
inline void write_atomically(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  const fs::path tmp = path.parent_path() /
                       (".tmp-" + path.filename().string() + "-" +
                        std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                        "-" + std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::StoreUnwritable, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorCode::StoreUnwritable, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::StoreUnwritable, "cannot publish " + path.string());
  }
}

class RunStore final : public BlobStore {
 public:
  using Clock = std::function<std::string()>;

  /// UTC ISO-8601 with seconds.
  static std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  explicit RunStore(fs::path root, Clock clock = utc_now) : root_(std::move(root)), clock_(std::move(clock)) {
    std::error_code ec;
    for (const auto& dir : {root_, root_ / "blobs", root_ / "datasets"}) {
      fs::create_directories(dir, ec);
      require(!ec && fs::is_directory(dir), ErrorCode::StoreUnwritable,
              "cannot create store directory " + dir.string());
    }
    const fs::path probe = root_ / ".write-probe";
    {
      std::ofstream out(probe);
      require(static_cast<bool>(out << "ok"), ErrorCode::StoreUnwritable,
              "store " + root_.string() + " is not writable");
    }
    fs::remove(probe, ec);
    load_ledger();
  }

  const fs::path& root() const { return root_; }

  // -- blobs ----------------------------------------------------------------

  std::string put(std::span<const std::uint8_t> bytes) override {
    std::string id = sha256_hex(bytes);
    const fs::path path = blob_path(id);
    std::lock_guard lock(blob_mutex_);
    if (!fs::exists(path)) {
      std::error_code ec;
      fs::create_directories(path.parent_path(), ec);
      require(!ec, ErrorCode::StoreUnwritable, "cannot create " + path.parent_path().string());
      write_atomically(path, bytes);
    }
    return id;
  }

  bool contains(const std::string& id) const override {
    return is_blob_id(id) && fs::exists(blob_path(id));
  }

  Bytes get(const std::string& id) const override {
    require(is_blob_id(id), ErrorCode::NotFound, "'" + id + "' is not a blob id");
    const fs::path path = blob_path(id);
    require(fs::exists(path), ErrorCode::NotFound, "no blob " + id);
    Bytes bytes = read_file(path);
    require(sha256_hex(bytes) == id, ErrorCode::IntegrityError,
            "blob " + id + " does not match its content hash");
    return bytes;
  }

  // -- ledger ---------------------------------------------------------------

  /// Appends one entry and returns it with its record_id and created_at.
  json append(RecordKind kind, json payload) {
    std::lock_guard lock(ledger_mutex_);
    json entry{{"record_id", next_id_},
               {"kind", std::string(to_string(kind))},
               {"created_at", clock_()}};
    for (auto& [k, v] : payload.items()) {
      if (!entry.contains(k)) entry[k] = v;
    }
    const std::string line = entry.dump() + "\n";
    std::FILE* f = std::fopen(ledger_path().c_str(), "ab");
    require(f != nullptr, ErrorCode::StoreUnwritable, "cannot open ledger");
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() &&
                    std::fflush(f) == 0;
    std::fclose(f);
    require(ok, ErrorCode::StoreUnwritable, "ledger append failed");
    ++next_id_;
    records_.push_back(entry);
    return entry;
  }

  std::size_t record_count() const {
    std::lock_guard lock(ledger_mutex_);
    return records_.size();
  }

  json record(std::int64_t id) const {
    std::lock_guard lock(ledger_mutex_);
    for (const auto& r : records_) {
      if (r.at("record_id").get<std::int64_t>() == id) return r;
    }
    fail(ErrorCode::NotFound, "no record " + std::to_string(id));
  }

  /// Newest first.
  std::vector<json> records(std::optional<TaskKind> task = std::nullopt,
                            std::optional<RecordKind> kind = std::nullopt,
                            std::size_t limit = 50) const {
    std::lock_guard lock(ledger_mutex_);
    std::vector<json> out;
    for (auto it = records_.rbegin(); it != records_.rend() && out.size() < limit; ++it) {
      if (kind && it->value("kind", "") != to_string(*kind)) continue;
      if (task && it->value("task", "") != to_string(*task)) continue;
      out.push_back(*it);
    }
    return out;
  }

  // -- datasets -------------------------------------------------------------

  void save_dataset(const std::string& dataset_id, const json& manifest) {
    require(valid_dataset_id(dataset_id), ErrorCode::InvalidParameter,
            "invalid dataset id '" + dataset_id + "'");
    write_atomically(root_ / "datasets" / (dataset_id + ".json"), as_bytes(manifest.dump(2) + "\n"));
  }

  json load_dataset(const std::string& dataset_id) const {
    require(valid_dataset_id(dataset_id), ErrorCode::InvalidParameter,
            "invalid dataset id '" + dataset_id + "'");
    const fs::path path = root_ / "datasets" / (dataset_id + ".json");
    require(fs::exists(path), ErrorCode::NotFound, "no dataset " + dataset_id);
    const Bytes bytes = read_file(path);
    return json::parse(bytes.begin(), bytes.end());
  }

  static bool valid_dataset_id(std::string_view id) {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
        return false;
      }
    }
    return id.front() != '.';
  }

 private:
  fs::path blob_path(const std::string& id) const { return root_ / "blobs" / id.substr(0, 2) / id; }
  fs::path ledger_path() const { return root_ / "ledger.jsonl"; }

  void load_ledger() {
    std::ifstream in(ledger_path());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        json entry = json::parse(line);
        next_id_ = std::max(next_id_, entry.at("record_id").get<std::int64_t>() + 1);
        records_.push_back(std::move(entry));
      } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, ledger_path().string() + ":" + std::to_string(line_no) +
                                        ": " + e.what());
      }
    }
  }

  fs::path root_;
  Clock clock_;
  std::mutex blob_mutex_;
  mutable std::mutex ledger_mutex_;
  std::int64_t next_id_ = 1;
  std::vector<json> records_;
};

}  // namespace langxai
