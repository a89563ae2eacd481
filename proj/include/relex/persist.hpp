#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relex/digest.hpp"
#include "relex/errors.hpp"
#include "relex/model.hpp"
#include "relex/saliency.hpp"
#include "relex/tensor.hpp"

namespace relex {

// Container layout shared by every persisted artifact:
//
//   RELEX <kind> <version>
//   <key> <value...>            (zero or more header lines)
//   payload_doubles <n>
//   payload_sha256 <hex>        (hash of all preceding header bytes + payload)
//   end
//   <n little-endian IEEE-754 doubles>

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kSaliencyFormatVersion = 1;
inline constexpr int kAdvSetFormatVersion = 1;

struct Container {
  std::string kind;
  int version = 0;
  std::vector<std::pair<std::string, std::string>> fields;
  std::vector<double> payload;

  const std::string& field(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return v;
    throw FormatError(FormatErrc::malformed_header, kind + ": missing header field '" + key + "'");
  }
  std::vector<std::string> all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : fields)
      if (k == key) out.push_back(v);
    return out;
  }
};

namespace detail {

/// Round-trip-exact text for a double (hex float).
inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError(FormatErrc::malformed_header, "bad number '" + s + "'");
  return v;
}

inline std::size_t parse_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError(FormatErrc::malformed_header, "bad count '" + s + "'");
  }
  return std::stoull(s);
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? " " : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape(const std::string& text) {
  Shape s;
  for (const auto& tok : split_ws(text)) s.push_back(parse_size(tok));
  if (s.empty() || shape_numel(s) == 0) throw FormatError(FormatErrc::malformed_header, "bad shape '" + text + "'");
  return s;
}

inline void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<unsigned char>(p[i])} << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode(const Container& c) {
  std::string head = "RELEX " + c.kind + " " + std::to_string(c.version) + "\n";
  for (const auto& [k, v] : c.fields) head += k + (v.empty() ? "" : " " + v) + "\n";
  head += "payload_doubles " + std::to_string(c.payload.size()) + "\n";
  std::string body;
  body.reserve(c.payload.size() * 8);
  for (double v : c.payload) detail::append_le(body, v);
  const std::string digest = Sha256().update(head).update(body).hex();
  return head + "payload_sha256 " + digest + "\nend\n" + body;
}

/// Parses a container, checking magic, kind, version, length and digest.
inline Container decode(const std::string& bytes, const std::string& kind, int version) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(FormatErrc::truncated, kind + ": header truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  const auto magic = detail::split_ws(next_line());
  if (magic.size() != 3 || magic[0] != "RELEX") throw FormatError(FormatErrc::bad_magic, "not a RELEX container");
  if (magic[1] != kind) throw FormatError(FormatErrc::bad_magic, "expected kind '" + kind + "', found '" + magic[1] + "'");
  Container c;
  c.kind = kind;
  try {
    c.version = std::stoi(magic[2]);
  } catch (const std::exception&) {
    throw FormatError(FormatErrc::malformed_header, "bad version '" + magic[2] + "'");
  }
  if (c.version != version) {
    throw FormatError(FormatErrc::version_mismatch,
                      kind + ": version " + magic[2] + " unsupported (expected " + std::to_string(version) + ")");
  }
  std::size_t count = 0;
  for (;;) {
    const std::string line = next_line();
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "payload_doubles") {
      count = detail::parse_size(value);
      break;
    }
    if (key.empty()) throw FormatError(FormatErrc::malformed_header, kind + ": empty header line");
    c.fields.emplace_back(key, value);
  }
  const std::size_t head_end = pos;
  const auto digest_line = detail::split_ws(next_line());
  if (digest_line.size() != 2 || digest_line[0] != "payload_sha256") {
    throw FormatError(FormatErrc::malformed_header, kind + ": missing payload_sha256");
  }
  if (next_line() != "end") throw FormatError(FormatErrc::malformed_header, kind + ": missing end marker");
  if (bytes.size() - pos < count * 8) throw FormatError(FormatErrc::truncated, kind + ": payload truncated");
  if (bytes.size() - pos > count * 8) throw FormatError(FormatErrc::malformed_header, kind + ": trailing bytes after payload");
  const std::string_view body(bytes.data() + pos, count * 8);
  if (Sha256().update(std::string_view(bytes.data(), head_end)).update(body).hex() != digest_line[1]) {
    throw FormatError(FormatErrc::digest_mismatch, kind + ": digest mismatch");
  }
  c.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) c.payload[i] = detail::read_le(bytes.data() + pos + 8 * i);
  return c;
}

inline void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrc::io, "write failed: " + path);
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Models

inline std::string encode_model(const Model& model) {
  Container c{"model", kModelFormatVersion, {}, {}};
  c.fields.emplace_back("class_count", std::to_string(model.class_count()));
  c.fields.emplace_back("input_shape", detail::shape_text(model.input_shape()));
  c.fields.emplace_back("layer_count", std::to_string(model.layers().size()));
  auto push = [&](const Tensor& t) { c.payload.insert(c.payload.end(), t.begin(), t.end()); };
  for (const auto& layer : model.layers()) {
    std::string desc = layer_kind(layer);
    if (auto* d = std::get_if<Dense>(&layer)) {
      desc += " weight " + detail::shape_text(d->weight.shape()) + " bias " + detail::shape_text(d->bias.shape());
      push(d->weight);
      push(d->bias);
    } else if (auto* cv = std::get_if<Conv2D>(&layer)) {
      desc += " weight " + detail::shape_text(cv->weight.shape()) + " bias " + detail::shape_text(cv->bias.shape()) +
              " padding " + std::to_string(cv->padding);
      push(cv->weight);
      push(cv->bias);
    } else if (auto* sp = std::get_if<Softplus>(&layer)) {
      desc += " beta " + detail::exact(sp->beta);
    }
    c.fields.emplace_back("layer", desc);
  }
  return encode(c);
}

inline Model decode_model(const std::string& bytes) {
  const Container c = decode(bytes, "model", kModelFormatVersion);
  const Shape input = detail::parse_shape(c.field("input_shape"));
  const auto descs = c.all("layer");
  if (descs.size() != detail::parse_size(c.field("layer_count"))) {
    throw FormatError(FormatErrc::count_mismatch, "model: layer_count disagrees with layer lines");
  }
  std::size_t off = 0;
  auto take = [&](const Shape& s) {
    const std::size_t n = shape_numel(s);
    if (off + n > c.payload.size()) throw FormatError(FormatErrc::count_mismatch, "model: payload shorter than layers need");
    Tensor t(s, std::vector<double>(c.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                    c.payload.begin() + static_cast<std::ptrdiff_t>(off + n)));
    off += n;
    return t;
  };
  // Splits "weight a b c bias d" into the two shapes.
  auto shapes = [](const std::vector<std::string>& tok, std::size_t& i) {
    Shape w, b;
    if (i >= tok.size() || tok[i] != "weight") throw FormatError(FormatErrc::malformed_header, "model: expected weight");
    for (++i; i < tok.size() && tok[i] != "bias"; ++i) w.push_back(detail::parse_size(tok[i]));
    if (i >= tok.size()) throw FormatError(FormatErrc::malformed_header, "model: expected bias");
    for (++i; i < tok.size() && tok[i] != "padding"; ++i) b.push_back(detail::parse_size(tok[i]));
    if (w.empty() || b.empty()) throw FormatError(FormatErrc::malformed_header, "model: empty parameter shape");
    return std::pair{w, b};
  };
  std::vector<Layer> layers;
  for (const auto& d : descs) {
    const auto tok = detail::split_ws(d);
    if (tok.empty()) throw FormatError(FormatErrc::malformed_header, "model: empty layer line");
    const std::string& kind = tok[0];
    std::size_t i = 1;
    if (kind == "dense") {
      auto [ws, bs] = shapes(tok, i);
      Tensor w = take(ws);
      layers.emplace_back(Dense{std::move(w), take(bs)});
    } else if (kind == "conv2d") {
      auto [ws, bs] = shapes(tok, i);
      if (i + 1 >= tok.size()) throw FormatError(FormatErrc::malformed_header, "model: conv2d without padding");
      const std::size_t pad = detail::parse_size(tok[i + 1]);
      Tensor w = take(ws);
      layers.emplace_back(Conv2D{std::move(w), take(bs), pad});
    } else if (kind == "relu") {
      layers.emplace_back(ReLU{});
    } else if (kind == "softplus") {
      if (tok.size() != 3 || tok[1] != "beta") throw FormatError(FormatErrc::malformed_header, "model: softplus needs beta");
      layers.emplace_back(Softplus{detail::parse_double(tok[2])});
    } else if (kind == "maxpool2x2") {
      layers.emplace_back(MaxPool2x2{});
    } else if (kind == "flatten") {
      layers.emplace_back(Flatten{});
    } else if (kind == "softmax") {
      layers.emplace_back(Softmax{});
    } else {
      throw FormatError(FormatErrc::malformed_header, "model: unknown layer kind '" + kind + "'");
    }
  }
  if (off != c.payload.size()) throw FormatError(FormatErrc::count_mismatch, "model: payload longer than layers need");
  try {
    Model m(input, std::move(layers));
    if (m.class_count() != detail::parse_size(c.field("class_count"))) {
      throw FormatError(FormatErrc::count_mismatch, "model: class_count disagrees with layers");
    }
    return m;
  } catch (const ShapeError& e) {
    throw FormatError(FormatErrc::malformed_header, std::string("model: ") + e.what());
  }
}

inline void save_model(const Model& model, const std::string& path) { write_bytes(path, encode_model(model)); }
inline Model load_model(const std::string& path) { return decode_model(read_bytes(path)); }

// ---------------------------------------------------------------------------
// Saliency maps

struct StoredSaliency {
  SaliencyMap map;
  std::string method;
  std::string config_digest;
};

inline std::string encode_saliency(const SaliencyMap& m, const std::string& method, const std::string& config_digest) {
  Container c{"saliency", kSaliencyFormatVersion, {}, {}};
  c.fields.emplace_back("method", method);
  c.fields.emplace_back("config_digest", config_digest);
  c.fields.emplace_back("shape", detail::shape_text(m.shape()));
  c.payload = m.values().values();
  return encode(c);
}

inline StoredSaliency decode_saliency(const std::string& bytes) {
  const Container c = decode(bytes, "saliency", kSaliencyFormatVersion);
  const Shape shape = detail::parse_shape(c.field("shape"));
  if (shape_numel(shape) != c.payload.size()) throw FormatError(FormatErrc::count_mismatch, "saliency: shape vs payload");
  try {
    return {SaliencyMap(Tensor(shape, c.payload)), c.field("method"), c.field("config_digest")};
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrc::malformed_header, std::string("saliency: ") + e.what());
  }
}

inline void save_saliency(const SaliencyMap& m, const std::string& method, const std::string& config_digest,
                          const std::string& path) {
  write_bytes(path, encode_saliency(m, method, config_digest));
}
inline StoredSaliency load_saliency(const std::string& path) { return decode_saliency(read_bytes(path)); }

/// 8-bit binary PGM preview; values scaled by 255 and rounded half-up.
inline std::string encode_pgm(const SaliencyMap& m) {
  const auto& s = m.shape();
  const std::size_t w = s.back();
  const std::size_t h = m.size() / w;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : m.values()) out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5))));
  return out;
}

inline void save_pgm(const SaliencyMap& m, const std::string& path) { write_bytes(path, encode_pgm(m)); }

// ---------------------------------------------------------------------------
// Adversarial sets

struct AdversarialSet {
  std::string source;       ///< dataset digest or provenance of the clean inputs
  std::string attack;       ///< attack name, e.g. "pgd"
  std::string attack_config;  ///< single-line key=value description
  std::uint64_t seed = 0;
  std::vector<std::size_t> ids;  ///< indices into the source dataset
  std::vector<ClassId> labels;
  std::vector<Tensor> samples;
};

inline std::string encode_adv_set(const AdversarialSet& a) {
  if (a.ids.size() != a.samples.size() || a.labels.size() != a.samples.size()) {
    throw ShapeError("adversarial set: ids, labels and samples differ in length");
  }
  Container c{"advset", kAdvSetFormatVersion, {}, {}};
  c.fields.emplace_back("source", a.source);
  c.fields.emplace_back("attack", a.attack);
  c.fields.emplace_back("config", a.attack_config);
  c.fields.emplace_back("seed", std::to_string(a.seed));
  c.fields.emplace_back("count", std::to_string(a.samples.size()));
  c.fields.emplace_back("shape", a.samples.empty() ? "1" : detail::shape_text(a.samples.front().shape()));
  std::string ids, labels;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    ids += (i ? " " : "") + std::to_string(a.ids[i]);
    labels += (i ? " " : "") + std::to_string(a.labels[i].index);
    if (a.samples[i].shape() != a.samples.front().shape()) throw ShapeError("adversarial set: non-uniform shapes");
    c.payload.insert(c.payload.end(), a.samples[i].begin(), a.samples[i].end());
  }
  c.fields.emplace_back("ids", ids);
  c.fields.emplace_back("labels", labels);
  return encode(c);
}

inline AdversarialSet decode_adv_set(const std::string& bytes) {
  const Container c = decode(bytes, "advset", kAdvSetFormatVersion);
  AdversarialSet a;
  a.source = c.field("source");
  a.attack = c.field("attack");
  a.attack_config = c.field("config");
  a.seed = detail::parse_size(c.field("seed"));
  const std::size_t n = detail::parse_size(c.field("count"));
  const Shape shape = detail::parse_shape(c.field("shape"));
  const auto ids = detail::split_ws(c.field("ids"));
  const auto labels = detail::split_ws(c.field("labels"));
  if (ids.size() != n || labels.size() != n || c.payload.size() != n * shape_numel(shape)) {
    throw FormatError(FormatErrc::count_mismatch, "advset: count disagrees with ids, labels or payload");
  }
  const std::size_t d = shape_numel(shape);
  for (std::size_t i = 0; i < n; ++i) {
    a.ids.push_back(detail::parse_size(ids[i]));
    a.labels.push_back(ClassId{detail::parse_size(labels[i])});
    a.samples.emplace_back(shape, std::vector<double>(c.payload.begin() + static_cast<std::ptrdiff_t>(i * d),
                                                      c.payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
  }
  return a;
}

inline void save_adv_set(const AdversarialSet& a, const std::string& path) { write_bytes(path, encode_adv_set(a)); }
inline AdversarialSet load_adv_set(const std::string& path) { return decode_adv_set(read_bytes(path)); }

}  // namespace relex
