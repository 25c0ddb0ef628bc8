#include "iia/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "binary_io.hpp"
#include "iia/error.hpp"

namespace iia {

namespace {

constexpr std::string_view kEmbeddingMagic = "EMB1";

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_number(std::string_view field, const std::string& where) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(where + ": cannot parse '" + std::string(field) + "'");
  }
  return value;
}

std::string format_float(float value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

EmbeddingSet load_binary(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const auto header = detail::parse_header(bytes, kEmbeddingMagic, path.string());
  const std::size_t dim = header.first;
  const std::size_t count = header.second;

  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  std::size_t offset = detail::kHeaderSize;
  for (std::size_t c = 0; c < count; ++c) {
    for (std::size_t r = 0; r < dim; ++r, offset += 4) {
      matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          detail::read_f32(bytes, offset);
    }
  }

  const auto sidecar = metadata_sidecar_path(path);
  if (!std::filesystem::exists(sidecar)) {
    throw FormatError("missing metadata sidecar " + sidecar.string());
  }
  auto items = load_metadata(sidecar);
  if (items.size() != count) {
    throw FormatError(sidecar.string() + ": " + std::to_string(items.size()) +
                      " metadata lines for " + std::to_string(count) + " vectors");
  }
  return EmbeddingSet(dim, std::move(items), std::move(matrix));
}

void save_binary(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(detail::kHeaderSize + set.size() * set.dim() * 4);
  detail::append_header(bytes, kEmbeddingMagic, static_cast<std::uint32_t>(set.dim()),
                        static_cast<std::uint32_t>(set.size()));
  const auto& m = set.matrix();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      detail::append_f32(bytes, static_cast<float>(m(r, c)));
    }
  }
  detail::write_file_bytes(path, bytes);
  save_metadata(set.items(), metadata_sidecar_path(path));
}

EmbeddingSet load_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing CSV header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "item_id" || header[1] != "person_id" ||
      header[2] != "camera_id" || header[3] != "role") {
    throw FormatError(path.string() + ": header must start with item_id,person_id,camera_id,role");
  }
  const std::size_t dim = header.size() - 4;
  for (std::size_t f = 0; f < dim; ++f) {
    if (header[4 + f] != "f" + std::to_string(f)) {
      throw FormatError(path.string() + ": unexpected header column '" +
                        std::string(header[4 + f]) + "'");
    }
  }

  std::vector<ItemRecord> items;
  std::vector<float> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw FormatError(where + ": expected " + std::to_string(header.size()) + " columns, got " +
                        std::to_string(fields.size()));
    }
    ItemRecord rec;
    rec.item_id = std::string(fields[0]);
    rec.person_id = parse_number<int>(fields[1], where);
    rec.camera_id = parse_number<int>(fields[2], where);
    rec.role = role_from_string(fields[3]);
    items.push_back(std::move(rec));
    for (std::size_t f = 0; f < dim; ++f) values.push_back(parse_number<float>(fields[4 + f], where));
  }

  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(items.size()));
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
      matrix(r, c) = values[static_cast<std::size_t>(c) * dim + static_cast<std::size_t>(r)];
    }
  }
  return EmbeddingSet(dim, std::move(items), std::move(matrix));
}

void save_text(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "item_id,person_id,camera_id,role";
  for (std::size_t f = 0; f < set.dim(); ++f) out << ",f" << f;
  out << '\n';
  const auto& m = set.matrix();
  for (std::size_t c = 0; c < set.size(); ++c) {
    const auto& rec = set.item(c);
    if (rec.item_id.find_first_of(",\n\r") != std::string::npos) {
      throw DataError("item_id '" + rec.item_id + "' cannot be written to CSV");
    }
    out << rec.item_id << ',' << rec.person_id << ',' << rec.camera_id << ',' << to_string(rec.role);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << ',' << format_float(static_cast<float>(m(r, static_cast<Eigen::Index>(c))));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string_view to_string(Role role) { return role == Role::query ? "query" : "gallery"; }

Role role_from_string(std::string_view text) {
  if (text == "query") return Role::query;
  if (text == "gallery") return Role::gallery;
  throw FormatError("role must be 'query' or 'gallery', got '" + std::string(text) + "'");
}

EmbeddingSet::EmbeddingSet(std::size_t dim, std::vector<ItemRecord> items, Eigen::MatrixXd matrix,
                           bool normalized)
    : dim_(dim), items_(std::move(items)), matrix_(std::move(matrix)), normalized_(normalized) {
  if (dim_ == 0) throw DataError("embedding dimension must be positive");
  if (static_cast<std::size_t>(matrix_.rows()) != dim_) {
    throw DataError("matrix has " + std::to_string(matrix_.rows()) + " rows, expected dim " +
                    std::to_string(dim_));
  }
  if (static_cast<std::size_t>(matrix_.cols()) != items_.size()) {
    throw DataError("matrix has " + std::to_string(matrix_.cols()) + " columns but " +
                    std::to_string(items_.size()) + " items");
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& rec = items_[i];
    if (!seen.insert(rec.item_id).second) throw DataError("duplicate item_id '" + rec.item_id + "'");
    if (rec.camera_id < 0) throw DataError("negative camera_id for item '" + rec.item_id + "'");
    const auto col = matrix_.col(static_cast<Eigen::Index>(i));
    if (!col.allFinite()) throw DataError("non-finite value in item '" + rec.item_id + "'");
    if (normalized_ && std::abs(col.norm() - 1.0) > 1e-6) {
      throw DataError("item '" + rec.item_id + "' is not unit-norm");
    }
  }
}

EmbeddingSet EmbeddingSet::empty(std::size_t dim) {
  return EmbeddingSet(dim, {}, Eigen::MatrixXd(static_cast<Eigen::Index>(dim), 0));
}

EmbeddingSet EmbeddingSet::with_matrix(Eigen::MatrixXd matrix) const {
  return EmbeddingSet(dim_, items_, std::move(matrix));
}

EmbeddingSet EmbeddingSet::subset(std::span<const std::size_t> indices) const {
  std::vector<ItemRecord> items;
  items.reserve(indices.size());
  Eigen::MatrixXd m(matrix_.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    items.push_back(items_.at(indices[j]));
    m.col(static_cast<Eigen::Index>(j)) = matrix_.col(static_cast<Eigen::Index>(indices[j]));
  }
  return EmbeddingSet(dim_, std::move(items), std::move(m), normalized_);
}

EmbeddingSet EmbeddingSet::concat(const EmbeddingSet& first, const EmbeddingSet& second) {
  if (first.dim() != second.dim()) {
    throw ShapeError("cannot stack dim " + std::to_string(first.dim()) + " with dim " +
                     std::to_string(second.dim()));
  }
  std::vector<ItemRecord> items = first.items();
  items.insert(items.end(), second.items().begin(), second.items().end());
  Eigen::MatrixXd m(first.matrix().rows(), first.matrix().cols() + second.matrix().cols());
  m << first.matrix(), second.matrix();
  return EmbeddingSet(first.dim(), std::move(items), std::move(m),
                      first.is_normalized() && second.is_normalized());
}

EmbeddingFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".emb" || ext == ".bin") return EmbeddingFormat::binary;
  if (ext == ".csv") return EmbeddingFormat::text;
  throw ConfigError("unknown embedding file extension '" + ext + "' (expected .emb, .bin or .csv)");
}

std::filesystem::path metadata_sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.jsonl");
}

std::vector<ItemRecord> load_metadata(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw FormatError("missing metadata sidecar " + sidecar.string());
  std::vector<ItemRecord> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = sidecar.string() + ":" + std::to_string(line_no);
    try {
      const auto obj = nlohmann::json::parse(line);
      ItemRecord rec;
      rec.item_id = obj.at("item_id").get<std::string>();
      rec.person_id = obj.at("person_id").get<int>();
      rec.camera_id = obj.at("camera_id").get<int>();
      rec.role = role_from_string(obj.at("role").get<std::string>());
      items.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return items;
}

void save_metadata(std::span<const ItemRecord> items, const std::filesystem::path& sidecar) {
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot open " + sidecar.string() + " for writing");
  for (const auto& rec : items) {
    nlohmann::ordered_json obj;
    obj["item_id"] = rec.item_id;
    obj["person_id"] = rec.person_id;
    obj["camera_id"] = rec.camera_id;
    obj["role"] = to_string(rec.role);
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + sidecar.string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return format == EmbeddingFormat::binary ? load_binary(path) : load_text(path);
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     EmbeddingFormat format) {
  if (format == EmbeddingFormat::binary) {
    save_binary(set, path);
  } else {
    save_text(set, path);
  }
}

EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  Eigen::MatrixXd m = set.matrix();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double norm = m.col(c).norm();
    if (!(norm > 0.0)) {
      throw DataError("zero-norm vector for item '" + set.item(static_cast<std::size_t>(c)).item_id +
                      "'");
    }
    m.col(c) /= norm;
  }
  return EmbeddingSet(set.dim(), set.items(), std::move(m), true);
}

std::pair<EmbeddingSet, EmbeddingSet> split_by_role(const EmbeddingSet& set) {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> gallery;
  for (std::size_t i = 0; i < set.size(); ++i) {
    (set.item(i).role == Role::query ? queries : gallery).push_back(i);
  }
  return {set.subset(queries), set.subset(gallery)};
}

}  // namespace iia
