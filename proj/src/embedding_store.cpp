#include "crossview/embedding_store.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include "io_util.hpp"

namespace crossview {

static_assert(std::endian::native == std::endian::little,
              "emb1 codec assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint8_t kVersion = 0x01;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(std::optional<std::size_t> record) {
    need(sizeof(T), record);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n, std::optional<std::size_t> record) {
    need(n, record);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, std::optional<std::size_t> record) const {
    if (remaining() < n) throw Error(ErrorCode::MalformedFile, "truncated emb1 data", record);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void append_short_string(std::string& out, const std::string& s,
                         std::size_t record, const char* what) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + " longer than 65535 bytes", record);
  }
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out += s;
}

bool has_text_separator(const std::string& s) {
  return s.find_first_of(",\n\r") != std::string::npos;
}

template <typename T>
T parse_number(std::string_view cell, std::size_t row, const char* what) {
  T value{};
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorCode::MalformedFile,
                std::string("cannot parse ") + what + " '" + std::string(cell) + "'", row);
  }
  return value;
}

}  // namespace

std::optional<std::size_t> EmbeddingCollection::find(const std::string& id) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].id == id) return i;
  }
  return std::nullopt;
}

FileFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".emb1") return FileFormat::Emb1;
  if (ext == ".csv") return FileFormat::Csv;
  throw Error(ErrorCode::InvalidArgument,
              "cannot infer embedding format from '" + path.string() + "' (expected .emb1 or .csv)");
}

ValidationReport validate_collection(const EmbeddingCollection& c) {
  ValidationReport report;
  auto add = [&](ErrorCode code, std::optional<std::size_t> rec,
                 std::optional<std::size_t> comp, std::string msg) {
    report.issues.push_back({code, rec, comp, std::move(msg)});
  };
  if (c.dim == 0) add(ErrorCode::DimensionMismatch, std::nullopt, std::nullopt, "dimension is 0");
  if (c.records.empty()) add(ErrorCode::MalformedFile, std::nullopt, std::nullopt, "collection is empty");

  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const auto& r = c.records[i];
    if (r.id.empty()) add(ErrorCode::MalformedFile, i, std::nullopt, "empty id");
    if (auto [it, inserted] = seen.emplace(r.id, i); !inserted) {
      add(ErrorCode::DuplicateId, i, std::nullopt,
          "id '" + r.id + "' already used by record " + std::to_string(it->second));
    }
    if (r.vector.size() != c.dim) {
      add(ErrorCode::DimensionMismatch, i, std::nullopt,
          "vector length " + std::to_string(r.vector.size()) + " != dim " + std::to_string(c.dim));
    }
    for (std::size_t j = 0; j < r.vector.size(); ++j) {
      if (!std::isfinite(r.vector[j])) {
        add(ErrorCode::NonFiniteValue, i, j,
            "non-finite value at component " + std::to_string(j) + " of '" + r.id + "'");
      }
    }
    if (r.geo && !is_valid(*r.geo)) {
      add(ErrorCode::NonFiniteValue, i, std::nullopt, "geo coordinate out of range");
    }
  }
  return report;
}

void throw_if_invalid(const ValidationReport& report) {
  if (report.ok()) return;
  const auto& first = report.issues.front();
  throw Error(first.code, first.message, first.record);
}

std::string encode_emb1(const EmbeddingCollection& c) {
  throw_if_invalid(validate_collection(c));
  std::string out;
  out.append(kMagic, 4);
  put<std::uint8_t>(out, kVersion);
  if (c.dim > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::DimensionMismatch, "dimension does not fit in u32");
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(c.records.size()));
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const auto& r = c.records[i];
    append_short_string(out, r.id, i, "id");
    append_short_string(out, r.label, i, "label");
    put<std::uint8_t>(out, r.geo ? 1 : 0);
    if (r.geo) {
      put<double>(out, r.geo->lat);
      put<double>(out, r.geo->lon);
    }
    out.append(reinterpret_cast<const char*>(r.vector.data()), r.vector.size() * sizeof(float));
  }
  return out;
}

EmbeddingCollection decode_emb1(const std::string& bytes, CollectionRole role) {
  Reader in(bytes);
  if (in.get_string(4, std::nullopt) != std::string(kMagic, 4)) {
    throw Error(ErrorCode::MalformedFile, "bad magic (expected EMB1)");
  }
  if (const auto v = in.get<std::uint8_t>(std::nullopt); v != kVersion) {
    throw Error(ErrorCode::MalformedFile, "unsupported emb1 version " + std::to_string(v));
  }
  EmbeddingCollection c;
  c.role = role;
  c.dim = in.get<std::uint32_t>(std::nullopt);
  const auto count = in.get<std::uint64_t>(std::nullopt);
  if (c.dim == 0) throw Error(ErrorCode::DimensionMismatch, "dimension is 0");
  // Lower bound on a record's size catches absurd counts before allocating.
  const std::uint64_t min_record = 5 + 4ull * c.dim;
  if (count == 0) throw Error(ErrorCode::MalformedFile, "collection is empty");
  if (count > in.remaining() / min_record) {
    throw Error(ErrorCode::MalformedFile, "record count exceeds file size");
  }
  c.records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.id = in.get_string(in.get<std::uint16_t>(i), i);
    r.label = in.get_string(in.get<std::uint16_t>(i), i);
    const auto flag = in.get<std::uint8_t>(i);
    if (flag > 1) throw Error(ErrorCode::MalformedFile, "geo flag must be 0 or 1", i);
    if (flag == 1) {
      GeoCoordinate g;
      g.lat = in.get<double>(i);
      g.lon = in.get<double>(i);
      r.geo = g;
    }
    r.vector.resize(c.dim);
    for (std::size_t j = 0; j < c.dim; ++j) r.vector[j] = in.get<float>(i);
    c.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) throw Error(ErrorCode::MalformedFile, "trailing bytes after last record");
  throw_if_invalid(validate_collection(c));
  return c;
}

std::string encode_csv(const EmbeddingCollection& c) {
  throw_if_invalid(validate_collection(c));
  std::string out = "id,label,lat,lon";
  for (std::size_t j = 0; j < c.dim; ++j) out += ",v" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const auto& r = c.records[i];
    if (has_text_separator(r.id) || has_text_separator(r.label)) {
      throw Error(ErrorCode::InvalidArgument, "id/label contains a comma or newline", i);
    }
    out += r.id;
    out += ',';
    out += r.label;
    out += ',';
    if (r.geo) {
      out += detail::format_double(r.geo->lat);
      out += ',';
      out += detail::format_double(r.geo->lon);
    } else {
      out += ',';
    }
    for (float v : r.vector) {
      out += ',';
      out += detail::format_float(v);
    }
    out += '\n';
  }
  return out;
}

EmbeddingCollection decode_csv(const std::string& text, CollectionRole role) {
  std::vector<std::string_view> lines;
  for (auto line : detail::split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw Error(ErrorCode::MalformedFile, "empty CSV input");

  const auto header = detail::split(lines.front(), ',');
  if (header.size() < 4 || header[0] != "id" || header[1] != "label" ||
      header[2] != "lat" || header[3] != "lon") {
    throw Error(ErrorCode::MalformedFile, "CSV header must start with id,label,lat,lon");
  }
  EmbeddingCollection c;
  c.role = role;
  c.dim = header.size() - 4;
  if (c.dim == 0) throw Error(ErrorCode::DimensionMismatch, "CSV header declares no vector columns");
  for (std::size_t j = 0; j < c.dim; ++j) {
    if (header[4 + j] != "v" + std::to_string(j)) {
      throw Error(ErrorCode::MalformedFile, "CSV header column " + std::to_string(4 + j) +
                                                " should be v" + std::to_string(j));
    }
  }
  if (lines.size() == 1) throw Error(ErrorCode::MalformedFile, "CSV has a header but no rows");

  for (std::size_t row = 0; row + 1 < lines.size(); ++row) {
    const auto cells = detail::split(lines[row + 1], ',');
    if (cells.size() < 4) throw Error(ErrorCode::MalformedFile, "row has fewer than 4 columns", row);
    if (cells.size() != 4 + c.dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "row has " + std::to_string(cells.size() - 4) + " vector values, expected " +
                      std::to_string(c.dim),
                  row);
    }
    EmbeddingRecord r;
    r.id = std::string(cells[0]);
    r.label = std::string(cells[1]);
    if (cells[2].empty() != cells[3].empty()) {
      throw Error(ErrorCode::MalformedFile, "lat and lon must both be present or both empty", row);
    }
    if (!cells[2].empty()) {
      r.geo = GeoCoordinate{parse_number<double>(cells[2], row, "lat"),
                            parse_number<double>(cells[3], row, "lon")};
    }
    r.vector.reserve(c.dim);
    for (std::size_t j = 0; j < c.dim; ++j) {
      r.vector.push_back(parse_number<float>(cells[4 + j], row, "vector value"));
    }
    c.records.push_back(std::move(r));
  }
  throw_if_invalid(validate_collection(c));
  return c;
}

EmbeddingCollection read_collection(const std::filesystem::path& path, FileFormat format,
                                    CollectionRole role) {
  const std::string bytes = detail::read_file(path);
  return format == FileFormat::Emb1 ? decode_emb1(bytes, role) : decode_csv(bytes, role);
}

void write_collection(const EmbeddingCollection& c, const std::filesystem::path& path,
                      FileFormat format) {
  const std::string bytes = format == FileFormat::Emb1 ? encode_emb1(c) : encode_csv(c);
  detail::write_file(path, bytes);
}

}  // namespace crossview
