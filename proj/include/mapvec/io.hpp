#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "mapvec/align_scores.hpp"
#include "mapvec/core/error.hpp"
#include "mapvec/core/matrix.hpp"
#include "mapvec/evaluation.hpp"
#include "mapvec/gradcheck.hpp"
#include "mapvec/geometry.hpp"
#include "mapvec/instance_mask.hpp"
#include "mapvec/matcher.hpp"
#include "mapvec/relation_attention.hpp"
#include "mapvec/synthetic.hpp"
#include "mapvec/temporal_fusion.hpp"

namespace mapvec::io {

using nlohmann::json;

inline constexpr const char* kFormatVersion = "1";

// ---------------------------------------------------------------------------
// Small utilities

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  out << content;
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(what + ": invalid JSON (" + e.what() + ")");
  }
}

inline json load_json(const std::string& path) { return parse_json(read_file(path), path); }

// Stable text form used for every file we write.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// 64-bit FNV-1a, printed as 16 hex digits.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline constexpr char kBase64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::string& in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) |
                            (static_cast<unsigned char>(in[i + 1]) << 8) | static_cast<unsigned char>(in[i + 2]);
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += kBase64Alphabet[(v >> 6) & 63];
    out += kBase64Alphabet[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) v |= static_cast<unsigned char>(in[i + 1]) << 8;
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += i + 1 < in.size() ? kBase64Alphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  require(in.size() % 4 == 0, "base64: length must be a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        require(i + 4 == in.size() && k >= 2, "base64: misplaced padding");
        v[k] = 0;
        ++pad;
      } else {
        require(pad == 0, "base64: data after padding");
        v[k] = value(c);
        require(v[k] >= 0, "base64: invalid character");
      }
    }
    const std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                            (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
    out += static_cast<char>((n >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((n >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(n & 0xFF);
  }
  return out;
}

// Doubles as little-endian IEEE-754 binary64.
inline std::string pack_f64le(const std::vector<double>& values) {
  std::string out(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

inline std::vector<double> unpack_f64le(const std::string& bytes) {
  require(bytes.size() % 8 == 0, "binary payload is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strict object reader: every key must be consumed, unknown keys are errors.

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), path_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    require(j_.contains(key), path_ + ": missing key '" + key + "'");
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child_path(const std::string& key) const { return path_ + "." + key; }

  template <typename T>
  void opt(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    out = get<T>(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        require(v.is_number(), child_path(key) + ": expected a number");
        const double d = v.get<double>();
        require(std::isfinite(d), child_path(key) + ": must be finite");
        return d;
      } else if constexpr (std::is_same_v<T, bool>) {
        require(v.is_boolean(), child_path(key) + ": expected a boolean");
        return v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        require(v.is_number_integer(), child_path(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          require(v.is_number_unsigned() || v.get<long long>() >= 0, child_path(key) + ": must be non-negative");
        }
        return v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        require(v.is_string(), child_path(key) + ": expected a string");
        return v.get<std::string>();
      } else {
        return v.get<T>();
      }
    } catch (const json::exception& e) {
      throw ValidationError(child_path(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      require(seen_.count(it.key()) > 0, path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<double> number_array(const json& j, const std::string& path) {
  require(j.is_array(), path + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    require(v.is_number(), path + ": expected numbers");
    out.push_back(v.get<double>());
    require(std::isfinite(out.back()), path + ": values must be finite");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map frames

inline json to_json(const BevExtent& e) {
  return {{"x_min", e.x_min}, {"x_max", e.x_max}, {"y_min", e.y_min}, {"y_max", e.y_max}};
}

inline BevExtent extent_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  BevExtent e;
  r.opt("x_min", e.x_min);
  r.opt("x_max", e.x_max);
  r.opt("y_min", e.y_min);
  r.opt("y_max", e.y_max);
  r.finish();
  e.validate();
  return e;
}

inline json to_json(const Pose2& p) { return {{"x", p.x}, {"y", p.y}, {"yaw", p.yaw}}; }

inline Pose2 pose_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  Pose2 p{r.get<double>("x"), r.get<double>("y"), r.get<double>("yaw")};
  r.finish();
  return p;
}

inline json to_json(const MapInstance& inst) {
  json pts = json::array();
  for (const auto& p : inst.points) pts.push_back({p.x, p.y});
  return {{"class", std::string(class_name(inst.class_id))},
          {"closed", inst.closed},
          {"score", inst.score},
          {"points", pts}};
}

inline MapInstance instance_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  MapInstance inst;
  inst.class_id = parse_class(r.get<std::string>("class"));
  inst.closed = r.get<bool>("closed");
  inst.score = r.get<double>("score");
  const json& pts = r.raw("points");
  require(pts.is_array(), path + ".points: expected an array");
  for (const auto& p : pts) {
    const auto xy = number_array(p, path + ".points");
    require(xy.size() == 2, path + ".points: each point must be [x, y]");
    inst.points.push_back({xy[0], xy[1]});
  }
  r.finish();
  try {
    inst.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return inst;
}

struct FrameFile {
  BevExtent extent;
  std::vector<MapFrame> frames;

  friend bool operator==(const FrameFile&, const FrameFile&) = default;
};

inline json to_json(const FrameFile& f) {
  json frames = json::array();
  for (const auto& fr : f.frames) {
    json insts = json::array();
    for (const auto& inst : fr.instances) insts.push_back(to_json(inst));
    frames.push_back({{"timestamp_s", fr.timestamp_s}, {"ego_pose", to_json(fr.ego_pose)}, {"instances", insts}});
  }
  return {{"version", kFormatVersion}, {"extent", to_json(f.extent)}, {"frames", frames}};
}

inline FrameFile frame_file_from_json(const json& j) {
  ObjectReader r(j, "frames file");
  require(r.get<std::string>("version") == kFormatVersion, "frames file: unsupported version");
  FrameFile out;
  out.extent = extent_from_json(r.raw("extent"), "frames file.extent");
  const json& frames = r.raw("frames");
  require(frames.is_array(), "frames file.frames: expected an array");
  std::size_t n_points = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string path = "frames[" + std::to_string(f) + "]";
    ObjectReader fr(frames[f], path);
    MapFrame frame;
    frame.timestamp_s = fr.get<double>("timestamp_s");
    frame.ego_pose = pose_from_json(fr.raw("ego_pose"), path + ".ego_pose");
    const json& insts = fr.raw("instances");
    require(insts.is_array(), path + ".instances: expected an array");
    for (std::size_t i = 0; i < insts.size(); ++i) {
      auto inst = instance_from_json(insts[i], path + ".instances[" + std::to_string(i) + "]");
      if (n_points == 0) n_points = inst.points.size();
      require(inst.points.size() == n_points, path + ".instances[" + std::to_string(i) +
                                                  "]: every instance must have the same point count (" +
                                                  std::to_string(n_points) + ")");
      frame.instances.push_back(std::move(inst));
    }
    fr.finish();
    out.frames.push_back(std::move(frame));
  }
  r.finish();
  return out;
}

inline FrameFile load_frames(const std::string& path) { return frame_file_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// BEV fixtures: grids stored as base64 of little-endian f64, row-major
// [height][width][channels].

inline json to_json(const BevGrid& g) {
  return {{"timestamp_s", g.timestamp_s},
          {"ego_pose", to_json(g.pose)},
          {"height", g.height},
          {"width", g.width},
          {"channels", g.channels},
          {"cell_size", g.cell_size},
          {"data", base64_encode(pack_f64le(g.data))}};
}

inline BevGrid grid_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  BevGrid g(r.get<std::size_t>("height"), r.get<std::size_t>("width"), r.get<std::size_t>("channels"),
            r.get<double>("cell_size"));
  g.timestamp_s = r.get<double>("timestamp_s");
  g.pose = pose_from_json(r.raw("ego_pose"), path + ".ego_pose");
  g.data = unpack_f64le(base64_decode(r.get<std::string>("data")));
  r.finish();
  require(g.data.size() == g.height * g.width * g.channels, path + ": data size does not match shape");
  g.validate();
  return g;
}

inline json bev_fixture_to_json(const std::vector<BevGrid>& grids) {
  json arr = json::array();
  for (const auto& g : grids) arr.push_back(to_json(g));
  return {{"version", kFormatVersion}, {"layout", "base64 f64le row-major [height][width][channels]"}, {"grids", arr}};
}

inline std::vector<BevGrid> bev_fixture_from_json(const json& j) {
  ObjectReader r(j, "bev fixture");
  require(r.get<std::string>("version") == kFormatVersion, "bev fixture: unsupported version");
  r.get<std::string>("layout");
  const json& arr = r.raw("grids");
  require(arr.is_array(), "bev fixture.grids: expected an array");
  std::vector<BevGrid> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(grid_from_json(arr[i], "grids[" + std::to_string(i) + "]"));
    require(out.back().same_shape(out.front()), "bev fixture: grids[" + std::to_string(i) + "] shape mismatch");
  }
  r.finish();
  return out;
}

// ---------------------------------------------------------------------------
// Weights

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& path) {
  require(j.is_array(), path + ": expected a matrix (array of rows)");
  std::vector<std::vector<double>> rows;
  for (const auto& row : j) rows.push_back(number_array(row, path));
  for (const auto& row : rows) require(row.size() == rows.front().size(), path + ": ragged matrix");
  return Matrix::from_rows(rows);
}

inline json to_json(const Linear& l) { return {{"weight", to_json(l.weight)}, {"bias", l.bias}}; }

inline Linear linear_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  Linear l{matrix_from_json(r.raw("weight"), r.child_path("weight")),
           number_array(r.raw("bias"), r.child_path("bias"))};
  r.finish();
  l.validate(path);
  return l;
}

inline json to_json(const LayerNormParams& p) { return {{"gamma", p.gamma}, {"beta", p.beta}, {"eps", p.eps}}; }

inline LayerNormParams layer_norm_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  LayerNormParams p;
  p.gamma = number_array(r.raw("gamma"), r.child_path("gamma"));
  p.beta = number_array(r.raw("beta"), r.child_path("beta"));
  r.opt("eps", p.eps);
  r.finish();
  require(p.gamma.size() == p.beta.size(), path + ": gamma/beta width mismatch");
  require(p.eps > 0.0, path + ": eps must be positive");
  return p;
}

inline AttentionWeights attention_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  AttentionWeights w;
  w.heads = r.get<std::size_t>("heads");
  w.q = linear_from_json(r.raw("q"), r.child_path("q"));
  w.k = linear_from_json(r.raw("k"), r.child_path("k"));
  w.v = linear_from_json(r.raw("v"), r.child_path("v"));
  w.out = linear_from_json(r.raw("out"), r.child_path("out"));
  r.finish();
  w.validate();
  return w;
}

inline RelationWeights relation_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  RelationWeights w{linear_from_json(r.raw("projection"), r.child_path("projection"))};
  r.finish();
  return w;
}

inline DecoderLayerWeights decoder_layer_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DecoderLayerWeights w;
  w.instance_attention = attention_from_json(r.raw("instance_attention"), r.child_path("instance_attention"));
  w.point_attention = attention_from_json(r.raw("point_attention"), r.child_path("point_attention"));
  {
    ObjectReader f(r.raw("ffn"), r.child_path("ffn"));
    w.ffn.fc1 = linear_from_json(f.raw("fc1"), f.child_path("fc1"));
    w.ffn.fc2 = linear_from_json(f.raw("fc2"), f.child_path("fc2"));
    f.finish();
  }
  w.norm1 = layer_norm_from_json(r.raw("norm1"), r.child_path("norm1"));
  w.norm2 = layer_norm_from_json(r.raw("norm2"), r.child_path("norm2"));
  w.norm3 = layer_norm_from_json(r.raw("norm3"), r.child_path("norm3"));
  r.finish();
  return w;
}

inline MaskMlpWeights mask_mlp_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  MaskMlpWeights w{linear_from_json(r.raw("fc1"), r.child_path("fc1")),
                   linear_from_json(r.raw("fc2"), r.child_path("fc2"))};
  r.finish();
  return w;
}

// Conv weights are a flat list in [out][in][ky][kx] order.
inline json to_json(const Conv2d& c) {
  return {{"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"kernel", c.kernel},
          {"weight", c.weight},
          {"bias", c.bias}};
}

inline Conv2d conv_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  Conv2d c(r.get<std::size_t>("in_channels"), r.get<std::size_t>("out_channels"), r.get<std::size_t>("kernel"));
  c.weight = number_array(r.raw("weight"), r.child_path("weight"));
  c.bias = number_array(r.raw("bias"), r.child_path("bias"));
  r.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return c;
}

inline json to_json(const GruWeights& g) {
  return {{"update", to_json(g.update)}, {"reset", to_json(g.reset)}, {"candidate", to_json(g.candidate)}};
}

inline GruWeights gru_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  GruWeights g{conv_from_json(r.raw("update"), r.child_path("update")),
               conv_from_json(r.raw("reset"), r.child_path("reset")),
               conv_from_json(r.raw("candidate"), r.child_path("candidate"))};
  r.finish();
  return g;
}

inline json to_json(const ResBlock& b) {
  return {{"conv1", to_json(b.conv1)},
          {"conv2", to_json(b.conv2)},
          {"shortcut", b.shortcut ? to_json(*b.shortcut) : json(nullptr)}};
}

inline ResBlock resblock_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ResBlock b{conv_from_json(r.raw("conv1"), r.child_path("conv1")),
             conv_from_json(r.raw("conv2"), r.child_path("conv2")), std::nullopt};
  if (r.has("shortcut") && !r.raw("shortcut").is_null()) {
    b.shortcut = conv_from_json(r.raw("shortcut"), r.child_path("shortcut"));
  }
  r.finish();
  return b;
}

inline json to_json(const FusionWeights& w) {
  return {{"local_gru", to_json(w.local_gru)},       {"global_gru", to_json(w.global_gru)},
          {"local_norm", to_json(w.local_norm)},     {"global_norm", to_json(w.global_norm)},
          {"layer_norm", w.layer_norm_enabled},      {"local_res", to_json(w.local_res)},
          {"stacking_res", to_json(w.stacking_res)}};
}

inline FusionWeights fusion_weights_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  FusionWeights w;
  w.local_gru = gru_from_json(r.raw("local_gru"), r.child_path("local_gru"));
  w.global_gru = gru_from_json(r.raw("global_gru"), r.child_path("global_gru"));
  w.local_norm = layer_norm_from_json(r.raw("local_norm"), r.child_path("local_norm"));
  w.global_norm = layer_norm_from_json(r.raw("global_norm"), r.child_path("global_norm"));
  r.opt("layer_norm", w.layer_norm_enabled);
  w.local_res = resblock_from_json(r.raw("local_res"), r.child_path("local_res"));
  w.stacking_res = resblock_from_json(r.raw("stacking_res"), r.child_path("stacking_res"));
  r.finish();
  return w;
}

// ---------------------------------------------------------------------------
// Run configuration

struct KfsRunConfig {
  KfsConfig kfs;
  std::size_t gate_kernel = 1;
  std::uint64_t weight_seed = 7;
  double weight_scale = 0.1;
  bool layer_norm = true;
  std::string weights_path;  // empty: random weights from weight_seed
};

struct RunConfig {
  FocalParams focal;
  GcsConfig gcs;
  LossWeights loss_weights;
  MatcherConfig matcher;
  EvalConfig eval;
  BevExtent extent;
  KfsRunConfig kfs;
  SpeConfig spe;
  ScenarioConfig scenario;
  GradcheckConfig gradcheck;
};

namespace detail {

inline void read_focal(const json& j, FocalParams& f) {
  ObjectReader r(j, "config.focal");
  r.opt("alpha", f.alpha);
  r.opt("gamma", f.gamma);
  r.finish();
  f.validate();
}

inline void read_gcs(const json& j, GcsConfig& g) {
  ObjectReader r(j, "config.gcs");
  r.opt("use_p2p", g.use_p2p);
  r.opt("use_dir", g.use_dir);
  r.opt("use_giou", g.use_giou);
  if (r.has("combine")) {
    const auto mode = r.get<std::string>("combine");
    require(mode == "product" || mode == "mean", "config.gcs.combine: expected 'product' or 'mean'");
    g.combine = mode == "product" ? GcsCombine::product : GcsCombine::mean;
  }
  r.finish();
  g.validate();
}

inline void read_loss_weights(const json& j, LossWeights& w) {
  ObjectReader r(j, "config.loss_weights");
  r.opt("cls", w.lambda_cls);
  r.opt("p2p", w.lambda_p2p);
  r.opt("dir", w.lambda_dir);
  r.opt("mgf", w.lambda_mgf);
  r.opt("dice", w.lambda_dice);
  r.finish();
  w.validate();
}

inline void read_matcher(const json& j, MatcherConfig& m) {
  ObjectReader r(j, "config.matcher");
  r.opt("w_cls", m.w_cls);
  r.opt("w_pts", m.w_pts);
  r.opt("w_dir", m.w_dir);
  if (r.has("class_cost")) {
    const auto mode = r.get<std::string>("class_cost");
    require(mode == "geometry_aware" || mode == "focal", "config.matcher.class_cost: expected 'geometry_aware' or 'focal'");
    m.class_cost = mode == "focal" ? ClassCost::focal : ClassCost::geometry_aware;
  }
  r.finish();
}

inline void read_eval(const json& j, EvalConfig& e) {
  ObjectReader r(j, "config.eval");
  if (r.has("thresholds")) e.thresholds = number_array(r.raw("thresholds"), "config.eval.thresholds");
  if (r.has("classes")) {
    const json& arr = r.raw("classes");
    require(arr.is_array(), "config.eval.classes: expected an array");
    e.classes.clear();
    for (const auto& c : arr) {
      require(c.is_string(), "config.eval.classes: expected class names");
      e.classes.push_back(parse_class(c.get<std::string>()));
    }
  }
  r.opt("score_floor", e.score_floor);
  r.finish();
}

inline void read_kfs(const json& j, KfsRunConfig& k) {
  ObjectReader r(j, "config.kfs");
  r.opt("n_pre", k.kfs.n_pre);
  r.opt("d_stride", k.kfs.d_stride);
  if (r.has("mode")) {
    const auto mode = r.get<std::string>("mode");
    require(mode == "stride" || mode == "random", "config.kfs.mode: expected 'stride' or 'random'");
    k.kfs.mode = mode == "random" ? KeyframeMode::random : KeyframeMode::stride;
  }
  r.opt("seed", k.kfs.seed);
  r.opt("gate_kernel", k.gate_kernel);
  r.opt("weight_seed", k.weight_seed);
  r.opt("weight_scale", k.weight_scale);
  r.opt("layer_norm", k.layer_norm);
  r.opt("weights_path", k.weights_path);
  r.finish();
  k.kfs.validate();
  require(k.gate_kernel % 2 == 1, "config.kfs.gate_kernel must be odd");
  require(k.weight_scale >= 0.0, "config.kfs.weight_scale must be >= 0");
}

inline void read_spe(const json& j, SpeConfig& s) {
  ObjectReader r(j, "config.spe");
  r.opt("dim", s.dim);
  r.opt("temperature", s.temperature);
  r.finish();
  s.validate();
}

inline void read_scenario(const json& j, ScenarioConfig& s) {
  ObjectReader r(j, "config.scenario");
  r.opt("seed", s.seed);
  r.opt("num_frames", s.num_frames);
  if (r.has("road_template")) s.road_template = parse_template(r.get<std::string>("road_template"));
  r.opt("lane_count", s.lane_count);
  r.opt("lane_width", s.lane_width);
  r.opt("ego_speed", s.ego_speed);
  r.opt("frame_interval_s", s.frame_interval_s);
  if (r.has("noise")) {
    ObjectReader n(r.raw("noise"), "config.scenario.noise");
    if (n.has("sigma")) {
      const json& sig = n.raw("sigma");
      if (sig.is_number()) {
        s.noise.sigma.fill(sig.get<double>());
      } else {
        ObjectReader sr(sig, "config.scenario.noise.sigma");
        for (MapClass c : kAllClasses) sr.opt(std::string(class_name(c)), s.noise.sigma[class_index(c)]);
        sr.finish();
      }
    }
    n.opt("dropout", s.noise.dropout);
    n.opt("spurious_rate", s.noise.spurious_rate);
    n.finish();
  }
  if (r.has("score_model")) {
    ObjectReader m(r.raw("score_model"), "config.scenario.score_model");
    m.opt("score_noise", s.score_model.score_noise);
    m.opt("spurious_score_min", s.score_model.spurious_score_min);
    m.opt("spurious_score_max", s.score_model.spurious_score_max);
    m.finish();
  }
  if (r.has("bev")) {
    ObjectReader b(r.raw("bev"), "config.scenario.bev");
    b.opt("channels", s.bev.channels);
    b.opt("height", s.bev.height);
    b.opt("width", s.bev.width);
    b.opt("cell_size", s.bev.cell_size);
    b.opt("bump_sigma", s.bev.bump_sigma);
    b.opt("noise_amplitude", s.bev.noise_amplitude);
    b.finish();
  }
  r.finish();
}

inline void read_gradcheck(const json& j, GradcheckConfig& g) {
  ObjectReader r(j, "config.gradcheck");
  r.opt("grid_step", g.grid_step);
  r.opt("fd_step", g.fd_step);
  r.opt("tolerance", g.tolerance);
  if (r.has("eps_sweep")) g.eps_sweep = number_array(r.raw("eps_sweep"), "config.gradcheck.eps_sweep");
  r.finish();
  require(g.grid_step > 0.0 && g.grid_step < 1.0, "config.gradcheck.grid_step must lie in (0,1)");
  require(g.fd_step > 0.0 && g.tolerance > 0.0, "config.gradcheck: step and tolerance must be positive");
  for (double e : g.eps_sweep) require(e > 0.0, "config.gradcheck.eps_sweep: values must be positive");
}

}  // namespace detail

// Copies shared settings (focal, gcs, extent) into the sub-configs that use them.
inline void propagate(RunConfig& c) {
  c.matcher.gcs = c.gcs;
  c.matcher.focal = c.focal;
  c.matcher.extent = c.extent;
  c.eval.extent = c.extent;
  c.scenario.extent = c.extent;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (r.has("focal")) detail::read_focal(r.raw("focal"), c.focal);
  if (r.has("gcs")) detail::read_gcs(r.raw("gcs"), c.gcs);
  if (r.has("loss_weights")) detail::read_loss_weights(r.raw("loss_weights"), c.loss_weights);
  if (r.has("matcher")) detail::read_matcher(r.raw("matcher"), c.matcher);
  if (r.has("eval")) detail::read_eval(r.raw("eval"), c.eval);
  if (r.has("extent")) c.extent = extent_from_json(r.raw("extent"), "config.extent");
  if (r.has("kfs")) detail::read_kfs(r.raw("kfs"), c.kfs);
  if (r.has("spe")) detail::read_spe(r.raw("spe"), c.spe);
  if (r.has("scenario")) detail::read_scenario(r.raw("scenario"), c.scenario);
  if (r.has("gradcheck")) detail::read_gradcheck(r.raw("gradcheck"), c.gradcheck);
  r.finish();
  propagate(c);
  c.eval.validate();
  c.scenario.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    propagate(c);
    return c;
  }
  return run_config_from_json(load_json(path));
}

inline json to_json(const RunConfig& c) {
  json sigma = json::object();
  for (MapClass cls : kAllClasses) sigma[std::string(class_name(cls))] = c.scenario.noise.sigma[class_index(cls)];
  json classes = json::array();
  for (MapClass cls : c.eval.classes) classes.push_back(std::string(class_name(cls)));
  return {
      {"focal", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
      {"gcs",
       {{"use_p2p", c.gcs.use_p2p},
        {"use_dir", c.gcs.use_dir},
        {"use_giou", c.gcs.use_giou},
        {"combine", c.gcs.combine == GcsCombine::product ? "product" : "mean"}}},
      {"loss_weights",
       {{"cls", c.loss_weights.lambda_cls},
        {"p2p", c.loss_weights.lambda_p2p},
        {"dir", c.loss_weights.lambda_dir},
        {"mgf", c.loss_weights.lambda_mgf},
        {"dice", c.loss_weights.lambda_dice}}},
      {"matcher",
       {{"w_cls", c.matcher.w_cls},
        {"w_pts", c.matcher.w_pts},
        {"w_dir", c.matcher.w_dir},
        {"class_cost", c.matcher.class_cost == ClassCost::focal ? "focal" : "geometry_aware"}}},
      {"eval", {{"thresholds", c.eval.thresholds}, {"classes", classes}, {"score_floor", c.eval.score_floor}}},
      {"extent", to_json(c.extent)},
      {"kfs",
       {{"n_pre", c.kfs.kfs.n_pre},
        {"d_stride", c.kfs.kfs.d_stride},
        {"mode", c.kfs.kfs.mode == KeyframeMode::random ? "random" : "stride"},
        {"seed", c.kfs.kfs.seed},
        {"gate_kernel", c.kfs.gate_kernel},
        {"weight_seed", c.kfs.weight_seed},
        {"weight_scale", c.kfs.weight_scale},
        {"layer_norm", c.kfs.layer_norm},
        {"weights_path", c.kfs.weights_path}}},
      {"spe", {{"dim", c.spe.dim}, {"temperature", c.spe.temperature}}},
      {"scenario",
       {{"seed", c.scenario.seed},
        {"num_frames", c.scenario.num_frames},
        {"road_template", std::string(template_name(c.scenario.road_template))},
        {"lane_count", c.scenario.lane_count},
        {"lane_width", c.scenario.lane_width},
        {"ego_speed", c.scenario.ego_speed},
        {"frame_interval_s", c.scenario.frame_interval_s},
        {"noise", {{"sigma", sigma}, {"dropout", c.scenario.noise.dropout}, {"spurious_rate", c.scenario.noise.spurious_rate}}},
        {"score_model",
         {{"score_noise", c.scenario.score_model.score_noise},
          {"spurious_score_min", c.scenario.score_model.spurious_score_min},
          {"spurious_score_max", c.scenario.score_model.spurious_score_max}}},
        {"bev",
         {{"channels", c.scenario.bev.channels},
          {"height", c.scenario.bev.height},
          {"width", c.scenario.bev.width},
          {"cell_size", c.scenario.bev.cell_size},
          {"bump_sigma", c.scenario.bev.bump_sigma},
          {"noise_amplitude", c.scenario.bev.noise_amplitude}}}}},
      {"gradcheck",
       {{"grid_step", c.gradcheck.grid_step},
        {"fd_step", c.gradcheck.fd_step},
        {"tolerance", c.gradcheck.tolerance},
        {"eps_sweep", c.gradcheck.eps_sweep}}},
  };
}

// ---------------------------------------------------------------------------
// Evaluation reports

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const EvalReport& rep) {
  json classes = json::array();
  for (const auto& c : rep.classes) {
    json per = json::array();
    for (const auto& t : c.per_threshold) {
      json pr = json::array();
      for (const auto& p : t.pr) pr.push_back({p.score, p.recall, p.precision});
      per.push_back({{"threshold", t.threshold},
                     {"ap", optional_number(t.ap)},
                     {"num_gt", t.num_gt},
                     {"num_pred", t.num_pred},
                     {"num_tp", t.num_tp},
                     {"pr", pr}});
    }
    classes.push_back({{"class", std::string(class_name(c.class_id))}, {"ap", optional_number(c.ap)}, {"per_threshold", per}});
  }
  return {{"version", kFormatVersion},
          {"thresholds", rep.thresholds},
          {"mAP", rep.map},
          {"classes_evaluated", rep.classes_evaluated},
          {"classes", classes}};
}

inline std::optional<double> optional_from_json(const json& j, const std::string& path) {
  if (j.is_null()) return std::nullopt;
  require(j.is_number(), path + ": expected a number or null");
  return j.get<double>();
}

inline EvalReport eval_report_from_json(const json& j) {
  ObjectReader r(j, "report");
  require(r.get<std::string>("version") == kFormatVersion, "report: unsupported version");
  EvalReport rep;
  rep.thresholds = number_array(r.raw("thresholds"), "report.thresholds");
  rep.map = r.get<double>("mAP");
  rep.classes_evaluated = r.get<std::size_t>("classes_evaluated");
  for (const auto& cj : r.raw("classes")) {
    ObjectReader cr(cj, "report.classes[]");
    ClassResult c;
    c.class_id = parse_class(cr.get<std::string>("class"));
    c.ap = optional_from_json(cr.raw("ap"), "report.classes[].ap");
    for (const auto& tj : cr.raw("per_threshold")) {
      ObjectReader tr(tj, "report.classes[].per_threshold[]");
      ThresholdResult t;
      t.threshold = tr.get<double>("threshold");
      t.ap = optional_from_json(tr.raw("ap"), "report.classes[].per_threshold[].ap");
      t.num_gt = tr.get<std::size_t>("num_gt");
      t.num_pred = tr.get<std::size_t>("num_pred");
      t.num_tp = tr.get<std::size_t>("num_tp");
      for (const auto& p : tr.raw("pr")) {
        const auto v = number_array(p, "report pr sample");
        require(v.size() == 3, "report: pr samples are [score, recall, precision]");
        t.pr.push_back({v[0], v[1], v[2]});
      }
      tr.finish();
      c.per_threshold.push_back(std::move(t));
    }
    cr.finish();
    rep.classes.push_back(std::move(c));
  }
  r.finish();
  return rep;
}

inline std::string pr_csv(const EvalReport& rep) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  ss << "class,threshold,rank,score,recall,precision\n";
  for (const auto& c : rep.classes) {
    for (const auto& t : c.per_threshold) {
      for (std::size_t i = 0; i < t.pr.size(); ++i) {
        ss << class_name(c.class_id) << ',' << t.threshold << ',' << i << ',' << t.pr[i].score << ','
           << t.pr[i].recall << ',' << t.pr[i].precision << '\n';
      }
    }
  }
  return ss.str();
}

}  // namespace mapvec::io
