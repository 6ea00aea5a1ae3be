#pragma once

// Content-addressed blob access. Keys are lowercase SHA-256 hex of the bytes.

#include <map>
#include <mutex>
#include <string>

#include "langxai/codec.hpp"

namespace langxai {

inline bool is_blob_id(std::string_view id) {
  if (id.size() != 64) return false;
  for (char c : id) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

class BlobStore {
 public:
  virtual ~BlobStore() = default;
  /// Idempotent: identical bytes always yield the same id.
  virtual std::string put(std::span<const std::uint8_t> bytes) = 0;
  virtual bool contains(const std::string& id) const = 0;
  /// NotFound when absent; IntegrityError when the bytes no longer hash to `id`.
  virtual Bytes get(const std::string& id) const = 0;
};

class MemoryBlobStore final : public BlobStore {
 public:
  std::string put(std::span<const std::uint8_t> bytes) override {
    std::string id = sha256_hex(bytes);
    std::lock_guard lock(mutex_);
    blobs_.try_emplace(id, bytes.begin(), bytes.end());
    return id;
  }
  bool contains(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    return blobs_.contains(id);
  }
  Bytes get(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    auto it = blobs_.find(id);
    require(it != blobs_.end(), ErrorCode::NotFound, "no blob " + id);
    require(sha256_hex(it->second) == id, ErrorCode::IntegrityError, "blob " + id + " is corrupt");
    return it->second;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return blobs_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Bytes> blobs_;
};

}  // namespace langxai
