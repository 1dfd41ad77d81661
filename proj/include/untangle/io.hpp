#pragma once

// File formats.
//
// Predictions, binary (all integers little-endian):
//   offset 0   magic "UQP1"
//   offset 4   u16 version (1)
//   offset 6   u16 flags: bit0 dirichlet payload, bit1 logits payload
//   offset 8   u64 n
//   offset 16  u32 M (members; 0 for a dirichlet payload)
//   offset 20  u32 C
//   offset 24  payload of f32: n*M*C logits (sample, member, class order)
//              or n*C Dirichlet parameters
// Ids are implicit, "0" .. "n-1".
//
// Predictions, text: one JSON object per line with "id" and either
// "logits" (array of M arrays of C numbers) or "dirichlet" (C numbers).
// Values are 32-bit floats written as shortest round-trip decimals.
//
// Labels: one JSON object per line with "id", "label", optional "votes",
// "ood" and "severity".
//
// Embeddings, binary:
//   "UQE1", u16 version (1), u16 flags (0), u64 n, u32 L, then L u32 layer
//   sizes, then per record the f32 values of every layer in order.
//
// Reports: JSON, keys sorted, numbers printed with 17 significant digits,
// missing values as null.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "untangle/core.hpp"
#include "untangle/posthoc.hpp"

namespace untangle {

using Json = nlohmann::json;

inline constexpr char kPredictionMagic[4] = {'U', 'Q', 'P', '1'};
inline constexpr char kEmbeddingMagic[4] = {'U', 'Q', 'E', '1'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint16_t kFlagDirichlet = 1u << 0;
inline constexpr std::uint16_t kFlagLogits = 1u << 1;
inline constexpr std::size_t kPredictionHeaderSize = 24;
inline constexpr int kReportSchemaVersion = 1;

enum class PredictionFormat { Binary, Text };

struct PredictionData {
  std::vector<std::string> ids;
  std::vector<Prediction> predictions;
};

struct LabelRecord {
  std::string id;
  std::size_t label = 0;
  std::optional<std::vector<std::uint32_t>> votes;
  bool ood = false;
  int severity = 0;
};

namespace detail {

// ---- little-endian byte helpers ------------------------------------------

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

inline void put_f32(std::string& out, double value) {
  put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return static_cast<T>(u);
}

inline double get_f32(std::string_view bytes, std::size_t offset) {
  return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset)));
}

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw Error(ErrorKind::ShapeError, "declared sizes overflow");
  }
  return a * b;
}

inline void require_payload(std::string_view bytes, std::size_t header, std::uint64_t payload_bytes) {
  const std::uint64_t available = bytes.size() - header;
  if (available < payload_bytes) {
    throw Error(ErrorKind::TruncatedPayload, "payload ends at byte offset " + std::to_string(bytes.size()) +
                                                 ", expected " + std::to_string(header + payload_bytes));
  }
  if (available > payload_bytes) {
    throw Error(ErrorKind::TrailingData, "unexpected data after byte offset " + std::to_string(header + payload_bytes));
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

/// Shortest decimal that round-trips the value as a 32-bit float.
inline void append_float(std::string& out, double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(value));
  out.append(buf, res.ptr);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline Json parse_line(std::string_view line, std::size_t lineno) {
  try {
    return Json::parse(line);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
  }
}

inline double json_float(const Json& v, std::size_t lineno) {
  if (!v.is_number()) throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": expected a number");
  return static_cast<double>(static_cast<float>(v.get<double>()));
}

inline std::string id_of(const Json& obj, std::size_t lineno) {
  if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_string()) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": missing string field \"id\"");
  }
  return obj["id"].get<std::string>();
}

}  // namespace detail

// ---- predictions -----------------------------------------------------------

/// Binary encoding; every prediction must share kind and shape.
inline std::string encode_predictions(const PredictionData& data) {
  if (data.predictions.empty()) throw Error(ErrorKind::EmptyInput, "no predictions to write");
  const bool dirichlet = std::holds_alternative<DirichletPrediction>(data.predictions.front());
  std::size_t members = 0;
  std::size_t classes = num_classes(data.predictions.front());
  if (!dirichlet) members = std::get<PredictionSet>(data.predictions.front()).members();
  std::string out;
  out.append(kPredictionMagic, 4);
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  detail::put_le<std::uint16_t>(out, dirichlet ? kFlagDirichlet : kFlagLogits);
  detail::put_le<std::uint64_t>(out, data.predictions.size());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(members));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(classes));
  for (const auto& p : data.predictions) {
    if (std::holds_alternative<DirichletPrediction>(p) != dirichlet || num_classes(p) != classes) {
      throw Error(ErrorKind::ShapeError, "predictions differ in kind or class count");
    }
    if (dirichlet) {
      for (double b : std::get<DirichletPrediction>(p).beta()) detail::put_f32(out, b);
    } else {
      const auto& set = std::get<PredictionSet>(p);
      if (set.members() != members) throw Error(ErrorKind::ShapeError, "predictions differ in member count");
      for (double v : set.logits()) detail::put_f32(out, v);
    }
  }
  return out;
}

inline PredictionData decode_predictions(std::string_view bytes) {
  if (bytes.size() < 4) throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kPredictionMagic, 4) != 0) throw Error(ErrorKind::BadMagic, "expected magic UQP1");
  if (bytes.size() < kPredictionHeaderSize) {
    throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  }
  const auto version = detail::get_le<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion) throw Error(ErrorKind::BadVersion, "unsupported version " + std::to_string(version));
  const auto flags = detail::get_le<std::uint16_t>(bytes, 6);
  if ((flags & ~(kFlagDirichlet | kFlagLogits)) != 0) throw Error(ErrorKind::FlagConflict, "unknown flag bits set");
  if (flags == (kFlagDirichlet | kFlagLogits)) throw Error(ErrorKind::FlagConflict, "both payload flags set");
  if (flags == 0) throw Error(ErrorKind::FlagConflict, "no payload flag set");
  const bool dirichlet = flags == kFlagDirichlet;
  const auto n = detail::get_le<std::uint64_t>(bytes, 8);
  const auto members = detail::get_le<std::uint32_t>(bytes, 16);
  const auto classes = detail::get_le<std::uint32_t>(bytes, 20);
  if (classes < 2) throw Error(ErrorKind::ShapeError, "class count below 2");
  if (dirichlet && members != 0) throw Error(ErrorKind::ShapeError, "dirichlet payload must declare 0 members");
  if (!dirichlet && members == 0) throw Error(ErrorKind::ShapeError, "logits payload must declare at least 1 member");
  const std::uint64_t per_sample = dirichlet ? classes : detail::checked_mul(members, classes);
  const std::uint64_t payload = detail::checked_mul(detail::checked_mul(n, per_sample), 4);
  detail::require_payload(bytes, kPredictionHeaderSize, payload);

  PredictionData data;
  data.ids.reserve(n);
  data.predictions.reserve(n);
  std::size_t offset = kPredictionHeaderSize;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<double> values(per_sample);
    for (double& v : values) {
      v = detail::get_f32(bytes, offset);
      offset += 4;
    }
    data.ids.push_back(std::to_string(i));
    try {
      if (dirichlet) {
        data.predictions.emplace_back(DirichletPrediction(std::move(values)));
      } else {
        data.predictions.emplace_back(PredictionSet(members, classes, std::move(values)));
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "sample " + std::to_string(i) + ": " + e.message());
    }
  }
  return data;
}

inline std::string format_predictions_text(const PredictionData& data) {
  std::string out;
  for (std::size_t i = 0; i < data.predictions.size(); ++i) {
    const std::string id = i < data.ids.size() ? data.ids[i] : std::to_string(i);
    out += "{\"id\":";
    out += Json(id).dump();
    if (const auto* d = std::get_if<DirichletPrediction>(&data.predictions[i])) {
      out += ",\"dirichlet\":[";
      for (std::size_t c = 0; c < d->classes(); ++c) {
        if (c) out += ',';
        detail::append_float(out, d->beta()[c]);
      }
      out += ']';
    } else {
      const auto& set = std::get<PredictionSet>(data.predictions[i]);
      out += ",\"logits\":[";
      for (std::size_t m = 0; m < set.members(); ++m) {
        if (m) out += ',';
        out += '[';
        const auto row = set.logit_row(m);
        for (std::size_t c = 0; c < row.size(); ++c) {
          if (c) out += ',';
          detail::append_float(out, row[c]);
        }
        out += ']';
      }
      out += ']';
    }
    out += "}\n";
  }
  return out;
}

inline PredictionData parse_predictions_text(std::string_view text) {
  PredictionData data;
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::EmptyInput, "prediction file has no records");
  std::optional<bool> dirichlet_kind;
  std::size_t classes = 0;
  std::size_t members = 0;
  std::set<std::string> seen;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t lineno = li + 1;
    const Json obj = detail::parse_line(lines[li], lineno);
    std::string id = detail::id_of(obj, lineno);
    if (!seen.insert(id).second) throw Error(ErrorKind::IdMismatch, "duplicate id " + id);
    const bool has_logits = obj.contains("logits");
    const bool has_dir = obj.contains("dirichlet");
    if (has_logits && has_dir) throw Error(ErrorKind::FlagConflict, "line " + std::to_string(lineno) + ": both logits and dirichlet present");
    if (!has_logits && !has_dir) throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": no logits or dirichlet field");
    if (dirichlet_kind && *dirichlet_kind != has_dir) throw Error(ErrorKind::FlagConflict, "line " + std::to_string(lineno) + ": mixed payload kinds");
    dirichlet_kind = has_dir;
    try {
      if (has_dir) {
        const Json& arr = obj["dirichlet"];
        if (!arr.is_array()) throw Error(ErrorKind::ParseError, "dirichlet must be an array");
        std::vector<double> beta;
        for (const auto& v : arr) beta.push_back(detail::json_float(v, lineno));
        if (classes == 0) classes = beta.size();
        if (beta.size() != classes) throw Error(ErrorKind::ShapeError, "class count differs");
        data.predictions.emplace_back(DirichletPrediction(std::move(beta)));
      } else {
        const Json& rows = obj["logits"];
        if (!rows.is_array() || rows.empty()) throw Error(ErrorKind::ParseError, "logits must be a nonempty array of arrays");
        std::vector<double> flat;
        std::size_t row_classes = 0;
        for (const auto& row : rows) {
          if (!row.is_array()) throw Error(ErrorKind::ParseError, "logits must be an array of arrays");
          if (row_classes == 0) row_classes = row.size();
          if (row.size() != row_classes) throw Error(ErrorKind::ShapeError, "ragged logit rows");
          for (const auto& v : row) flat.push_back(detail::json_float(v, lineno));
        }
        if (classes == 0) {
          classes = row_classes;
          members = rows.size();
        }
        if (row_classes != classes || rows.size() != members) throw Error(ErrorKind::ShapeError, "member or class count differs");
        data.predictions.emplace_back(PredictionSet(members, classes, std::move(flat)));
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(lineno) + ": " + e.message());
    }
    data.ids.push_back(std::move(id));
  }
  return data;
}

/// Detects the binary format by its magic, anything starting with '{' as text.
inline PredictionData parse_predictions(std::string_view bytes) {
  if (bytes.empty()) throw Error(ErrorKind::EmptyInput, "prediction file is empty");
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPredictionMagic, 4) == 0) return decode_predictions(bytes);
  const auto first = bytes.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw Error(ErrorKind::EmptyInput, "prediction file is empty");
  if (bytes[first] == '{') return parse_predictions_text(bytes);
  if (bytes.size() < 4) throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  throw Error(ErrorKind::BadMagic, "expected magic UQP1 or JSON lines");
}

inline PredictionData read_predictions(const std::string& path) { return parse_predictions(detail::read_file(path)); }

inline void write_predictions(const std::string& path, const PredictionData& data,
                              PredictionFormat format = PredictionFormat::Binary) {
  detail::write_file(path, format == PredictionFormat::Binary ? encode_predictions(data) : format_predictions_text(data));
}

// ---- labels ----------------------------------------------------------------

inline std::string format_labels(const std::vector<LabelRecord>& labels) {
  std::string out;
  for (const auto& l : labels) {
    out += "{\"id\":" + Json(l.id).dump() + ",\"label\":" + std::to_string(l.label);
    if (l.votes) {
      out += ",\"votes\":[";
      for (std::size_t c = 0; c < l.votes->size(); ++c) {
        if (c) out += ',';
        out += std::to_string((*l.votes)[c]);
      }
      out += ']';
    }
    out += std::string(",\"ood\":") + (l.ood ? "true" : "false") + ",\"severity\":" + std::to_string(l.severity) + "}\n";
  }
  return out;
}

inline std::vector<LabelRecord> parse_labels(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::EmptyInput, "label file has no records");
  std::vector<LabelRecord> out;
  std::set<std::string> seen;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t lineno = li + 1;
    const Json obj = detail::parse_line(lines[li], lineno);
    LabelRecord rec;
    rec.id = detail::id_of(obj, lineno);
    if (!seen.insert(rec.id).second) throw Error(ErrorKind::IdMismatch, "duplicate id " + rec.id);
    const auto where = "line " + std::to_string(lineno) + ": ";
    if (!obj.contains("label") || !obj["label"].is_number_unsigned()) throw Error(ErrorKind::ParseError, where + "missing non-negative integer \"label\"");
    rec.label = obj["label"].get<std::size_t>();
    if (obj.contains("votes") && !obj["votes"].is_null()) {
      if (!obj["votes"].is_array()) throw Error(ErrorKind::ParseError, where + "votes must be an array");
      std::vector<std::uint32_t> votes;
      for (const auto& v : obj["votes"]) {
        if (!v.is_number_unsigned()) throw Error(ErrorKind::ParseError, where + "votes must be non-negative integers");
        votes.push_back(v.get<std::uint32_t>());
      }
      rec.votes = std::move(votes);
    }
    if (obj.contains("ood")) {
      if (!obj["ood"].is_boolean()) throw Error(ErrorKind::ParseError, where + "ood must be a boolean");
      rec.ood = obj["ood"].get<bool>();
    }
    if (obj.contains("severity")) {
      if (!obj["severity"].is_number_integer()) throw Error(ErrorKind::ParseError, where + "severity must be an integer");
      rec.severity = obj["severity"].get<int>();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<LabelRecord> read_labels(const std::string& path) { return parse_labels(detail::read_file(path)); }

inline void write_labels(const std::string& path, const std::vector<LabelRecord>& labels) {
  detail::write_file(path, format_labels(labels));
}

inline LabelRecord label_of(const SampleRecord& s) {
  LabelRecord l;
  l.id = s.id;
  l.label = s.label;
  if (s.soft_label) l.votes = std::vector<std::uint32_t>(s.soft_label->votes().begin(), s.soft_label->votes().end());
  l.ood = s.ood;
  l.severity = s.severity;
  return l;
}

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_labels(const std::vector<LabelRecord>& labels,
                                                                 const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id.emplace(labels[i].id, i);
  std::set<std::string> id_set(ids.begin(), ids.end());
  std::vector<std::string> offenders;
  for (const auto& id : ids) {
    if (!by_id.count(id)) offenders.push_back(id);
  }
  for (const auto& l : labels) {
    if (!id_set.count(l.id)) offenders.push_back(l.id);
  }
  if (!offenders.empty()) {
    std::string msg = std::to_string(offenders.size()) + " ids differ between predictions and labels:";
    for (std::size_t i = 0; i < std::min<std::size_t>(10, offenders.size()); ++i) msg += " " + offenders[i];
    throw Error(ErrorKind::IdMismatch, msg);
  }
  return by_id;
}

}  // namespace detail

/// Pairs predictions with labels by id, in prediction order.
inline std::vector<SampleRecord> join_labels(const PredictionData& data, const std::vector<LabelRecord>& labels) {
  const auto by_id = detail::index_labels(labels, data.ids);
  std::vector<SampleRecord> out;
  out.reserve(data.predictions.size());
  for (std::size_t i = 0; i < data.predictions.size(); ++i) {
    const LabelRecord& l = labels[by_id.at(data.ids[i])];
    const std::size_t c = num_classes(data.predictions[i]);
    if (l.votes && l.votes->size() != c) {
      throw Error(ErrorKind::ShapeError, "votes length " + std::to_string(l.votes->size()) + " differs from class count " +
                                             std::to_string(c) + " for id " + l.id);
    }
    SampleRecord s{data.ids[i], data.predictions[i], l.label, std::nullopt, l.ood, l.severity};
    if (l.votes) s.soft_label.emplace(*l.votes);
    s.validate();
    out.push_back(std::move(s));
  }
  dataset_classes(out);
  return out;
}

// ---- embeddings --------------------------------------------------------------

inline std::string encode_embeddings(const std::vector<EmbeddingRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no embeddings to write");
  std::string out;
  out.append(kEmbeddingMagic, 4);
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  detail::put_le<std::uint16_t>(out, 0);
  detail::put_le<std::uint64_t>(out, records.size());
  const auto& first = records.front().layers;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(first.size()));
  for (const auto& l : first) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.size()));
  for (const auto& r : records) {
    if (r.layers.size() != first.size()) throw Error(ErrorKind::ShapeError, "layer count differs for record " + r.id);
    for (std::size_t l = 0; l < first.size(); ++l) {
      if (r.layers[l].size() != first[l].size()) throw Error(ErrorKind::ShapeError, "layer size differs for record " + r.id);
      for (double v : r.layers[l]) detail::put_f32(out, v);
    }
  }
  return out;
}

/// Records carry ids "0".."n-1"; labels and OOD flags are joined separately.
inline std::vector<EmbeddingRecord> decode_embeddings(std::string_view bytes) {
  constexpr std::size_t fixed = 20;
  if (bytes.empty()) throw Error(ErrorKind::EmptyInput, "embedding file is empty");
  if (bytes.size() < 4) throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0) throw Error(ErrorKind::BadMagic, "expected magic UQE1");
  if (bytes.size() < fixed) throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  const auto version = detail::get_le<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion) throw Error(ErrorKind::BadVersion, "unsupported version " + std::to_string(version));
  if (detail::get_le<std::uint16_t>(bytes, 6) != 0) throw Error(ErrorKind::FlagConflict, "unknown flag bits set");
  const auto n = detail::get_le<std::uint64_t>(bytes, 8);
  const auto layers = detail::get_le<std::uint32_t>(bytes, 16);
  if (layers == 0) throw Error(ErrorKind::ShapeError, "embedding file declares no layers");
  const std::uint64_t header = fixed + detail::checked_mul(layers, 4);
  if (bytes.size() < header) throw Error(ErrorKind::TruncatedPayload, "header ends at byte offset " + std::to_string(bytes.size()));
  std::vector<std::size_t> dims(layers);
  std::uint64_t per_record = 0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    dims[l] = detail::get_le<std::uint32_t>(bytes, fixed + 4 * l);
    if (dims[l] == 0) throw Error(ErrorKind::ShapeError, "zero-sized layer");
    per_record += dims[l];
  }
  detail::require_payload(bytes, header, detail::checked_mul(detail::checked_mul(n, per_record), 4));
  std::vector<EmbeddingRecord> out(n);
  std::size_t offset = header;
  for (std::uint64_t i = 0; i < n; ++i) {
    out[i].id = std::to_string(i);
    for (std::size_t d : dims) {
      std::vector<double> v(d);
      for (double& x : v) {
        x = detail::get_f32(bytes, offset);
        offset += 4;
      }
      out[i].layers.push_back(std::move(v));
    }
  }
  return out;
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::string& path) {
  return decode_embeddings(detail::read_file(path));
}

inline void write_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& records) {
  detail::write_file(path, encode_embeddings(records));
}

/// Copies label and OOD flag from the label file into embedding records.
inline void join_embedding_labels(std::vector<EmbeddingRecord>& records, const std::vector<LabelRecord>& labels) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);
  const auto by_id = detail::index_labels(labels, ids);
  for (auto& r : records) {
    const auto& l = labels[by_id.at(r.id)];
    r.label = l.label;
    r.ood = l.ood;
  }
}

// ---- reports ---------------------------------------------------------------

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

/// Report skeleton with every section present.
inline Json make_report(Json config) {
  Json r = Json::object();
  r["schema_version"] = kReportSchemaVersion;
  r["config"] = std::move(config);
  r["metrics"] = Json::object();
  r["per_severity"] = Json::array();
  r["correlations"] = Json::object();
  r["disentanglement"] = nullptr;
  r["per_sample"] = nullptr;
  return r;
}

namespace detail {

inline void append_number(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void dump_value(std::string& out, const Json& v, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (v.type()) {
    case Json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {  // std::map order: sorted keys
        if (!first) out += ",\n";
        first = false;
        out += inner + Json(it.key()).dump() + ": ";
        dump_value(out, it.value(), indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",\n";
        out += inner;
        dump_value(out, v[i], indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case Json::value_t::number_float: append_number(out, v.get<double>()); return;
    default: out += v.dump(); return;
  }
}

}  // namespace detail

/// Deterministic serialization: sorted keys, 2-space indent, %.17g numbers.
inline std::string dump_report(const Json& report) {
  std::string out;
  detail::dump_value(out, report, 0);
  out += '\n';
  return out;
}

namespace detail {

inline std::string csv_scalar(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    std::string out;
    append_number(out, v.get<double>());
    return out == "null" ? "" : out;
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  return v.dump();
}

inline void flatten(const Json& v, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (v.is_object() || v.is_array()) {
    if (v.empty()) return;
    if (v.is_object()) {
      for (auto it = v.begin(); it != v.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) flatten(v[i], prefix + "." + std::to_string(i), out);
    }
    return;
  }
  out.emplace_back(prefix, csv_scalar(v));
}

}  // namespace detail

/// Per-sample rows as a table when present, otherwise every result as a
/// dotted-path key,value pair. The config section is left out.
inline std::string report_to_csv(const Json& report) {
  std::string out;
  if (report.contains("per_sample") && report["per_sample"].is_array() && !report["per_sample"].empty()) {
    std::vector<std::vector<std::pair<std::string, std::string>>> rows;
    std::vector<std::string> header;
    for (const auto& row : report["per_sample"]) {
      std::vector<std::pair<std::string, std::string>> flat;
      detail::flatten(row, "", flat);
      if (header.empty()) {
        for (const auto& [k, v] : flat) header.push_back(k);
        std::stable_partition(header.begin(), header.end(), [](const std::string& k) { return k == "id"; });
      }
      rows.push_back(std::move(flat));
    }
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        for (const auto& [k, v] : row) {
          if (k == header[i]) {
            out += v;
            break;
          }
        }
      }
      out += '\n';
    }
    return out;
  }
  std::vector<std::pair<std::string, std::string>> flat;
  for (auto it = report.begin(); it != report.end(); ++it) {
    if (it.key() == "config" || it.key() == "schema_version" || it.key() == "per_sample" || it.value().is_null()) continue;
    detail::flatten(it.value(), it.key(), flat);
  }
  out += "key,value\n";
  for (const auto& [k, v] : flat) out += k + "," + v + "\n";
  return out;
}

/// Structural schema check; returns an empty string when valid.
inline std::string validate_report(const Json& r) {
  if (!r.is_object()) return "report is not an object";
  if (!r.contains("schema_version") || r["schema_version"] != kReportSchemaVersion) return "schema_version missing or unsupported";
  if (!r.contains("config") || !r["config"].is_object()) return "config must be an object";
  if (!r["config"].contains("invocation") || !r["config"]["invocation"].is_array()) return "config.invocation must be an array";
  if (!r["config"].contains("seed")) return "config.seed missing";
  if (!r.contains("metrics") || !r["metrics"].is_object()) return "metrics must be an object";
  for (const auto& [k, v] : r["metrics"].items()) {
    if (!(v.is_number() || v.is_null() || v.is_object())) return "metric " + k + " must be a number, null or a group";
  }
  if (!r.contains("per_severity") || !r["per_severity"].is_array()) return "per_severity must be an array";
  if (!r.contains("correlations") || !r["correlations"].is_object()) return "correlations must be an object";
  if (!r.contains("disentanglement")) return "disentanglement missing";
  const auto& d = r["disentanglement"];
  if (!d.is_null()) {
    if (!d.is_object()) return "disentanglement must be an object or null";
    for (const char* cell : {"corr_ua_ue", "corr_ua_gtA", "corr_ue_proxyE", "corr_ua_proxyE", "corr_ue_gtA"}) {
      if (!d.contains(cell) || !(d[cell].is_number() || d[cell].is_null())) return std::string("disentanglement.") + cell + " missing";
    }
  }
  if (!r.contains("per_sample") || !(r["per_sample"].is_null() || r["per_sample"].is_array())) return "per_sample must be an array or null";
  return {};
}

}  // namespace untangle
