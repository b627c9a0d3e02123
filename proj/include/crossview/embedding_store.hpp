#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crossview/error.hpp"
#include "crossview/geo.hpp"

namespace crossview {

struct EmbeddingRecord {
  std::string id;
  std::string label;
  std::vector<float> vector;
  std::optional<GeoCoordinate> geo;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

enum class CollectionRole { Gallery, Query };

struct EmbeddingCollection {
  std::size_t dim = 0;
  std::vector<EmbeddingRecord> records;
  CollectionRole role = CollectionRole::Gallery;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  /// Index of the record with the given id, if any. Linear scan.
  std::optional<std::size_t> find(const std::string& id) const;
};

enum class FileFormat { Emb1, Csv };

/// Picks the format from a ".emb1" or ".csv" extension.
FileFormat format_from_path(const std::filesystem::path& path);

struct ValidationIssue {
  ErrorCode code;
  std::optional<std::size_t> record;
  std::optional<std::size_t> component;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const noexcept { return issues.empty(); }
};

ValidationReport validate_collection(const EmbeddingCollection& c);

/// Throws the first issue of a non-empty report as an Error.
void throw_if_invalid(const ValidationReport& report);

EmbeddingCollection read_collection(const std::filesystem::path& path,
                                    FileFormat format,
                                    CollectionRole role = CollectionRole::Gallery);

void write_collection(const EmbeddingCollection& c,
                      const std::filesystem::path& path, FileFormat format);

// In-memory codecs behind the file functions; the emb1 encoding is the exact
// byte sequence written to disk.
std::string encode_emb1(const EmbeddingCollection& c);
EmbeddingCollection decode_emb1(const std::string& bytes,
                                CollectionRole role = CollectionRole::Gallery);
std::string encode_csv(const EmbeddingCollection& c);
EmbeddingCollection decode_csv(const std::string& text,
                               CollectionRole role = CollectionRole::Gallery);

}  // namespace crossview
