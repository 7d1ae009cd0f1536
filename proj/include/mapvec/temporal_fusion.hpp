#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapvec/core/error.hpp"
#include "mapvec/core/matrix.hpp"
#include "mapvec/core/parallel.hpp"
#include "mapvec/core/rng.hpp"
#include "mapvec/geometry.hpp"

namespace mapvec {

// Ego-centred BEV feature grid. Rows run along y, columns along x; the
// centre of cell (r, c) sits at
//   x = (c + 0.5 - W/2) * cell_size,  y = (r + 0.5 - H/2) * cell_size.
// Storage is row-major H, then W, then C.
struct BevGrid {
  std::size_t height = 200;
  std::size_t width = 100;
  std::size_t channels = 1;
  double cell_size = 0.3;
  double timestamp_s = 0.0;
  Pose2 pose;  // ego pose in the world frame
  std::vector<double> data;

  BevGrid() = default;
  BevGrid(std::size_t h, std::size_t w, std::size_t c, double cell = 0.3)
      : height(h), width(w), channels(c), cell_size(cell), data(h * w * c, 0.0) {}

  static BevGrid zeros_like(const BevGrid& g, std::size_t channels_override = 0) {
    BevGrid out(g.height, g.width, channels_override ? channels_override : g.channels, g.cell_size);
    out.timestamp_s = g.timestamp_s;
    out.pose = g.pose;
    return out;
  }

  std::size_t cells() const { return height * width; }
  double& at(std::size_t r, std::size_t c, std::size_t ch) { return data[(r * width + c) * channels + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * width + c) * channels + ch];
  }
  std::span<double> cell(std::size_t r, std::size_t c) {
    return {data.data() + (r * width + c) * channels, channels};
  }
  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return {data.data() + (r * width + c) * channels, channels};
  }

  bool same_shape(const BevGrid& o) const {
    return height == o.height && width == o.width && channels == o.channels &&
           cell_size == o.cell_size;
  }

  void validate() const {
    require(height > 0 && width > 0 && channels > 0, "BEV grid dimensions must be positive");
    require(cell_size > 0.0, "BEV cell size must be positive");
    require(data.size() == height * width * channels, "BEV grid data size mismatch");
    for (double v : data) require_finite(v, "BEV grid value");
  }

  BevExtent extent() const {
    const double hw = 0.5 * static_cast<double>(width) * cell_size;
    const double hh = 0.5 * static_cast<double>(height) * cell_size;
    return {-hw, hw, -hh, hh};
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data) m = std::max(m, std::abs(v));
    return m;
  }
};

inline double max_abs_diff(const BevGrid& a, const BevGrid& b) {
  require(a.same_shape(b), "grid shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Resamples `grid` into a frame related to it by `relative_pose` (source
// coordinates -> target coordinates). Each target cell centre is mapped back
// into the source frame and bilinearly sampled; samples falling outside the
// source contribute zero. Work is done in cell units so integer-cell motions
// are exact.
inline BevGrid warp(const BevGrid& grid, const Pose2& relative_pose) {
  grid.validate();
  BevGrid out = BevGrid::zeros_like(grid);
  const double half_w = 0.5 * static_cast<double>(grid.width);
  const double half_h = 0.5 * static_cast<double>(grid.height);
  const double c = std::cos(relative_pose.yaw);
  const double s = std::sin(relative_pose.yaw);
  const double tx = relative_pose.x / grid.cell_size;
  const double ty = relative_pose.y / grid.cell_size;
  const long H = static_cast<long>(grid.height);
  const long W = static_cast<long>(grid.width);
  const std::size_t C = grid.channels;

  parallel_for(grid.height, [&](std::size_t r) {
    for (std::size_t col = 0; col < grid.width; ++col) {
      const double ux = static_cast<double>(col) + 0.5 - half_w - tx;
      const double uy = static_cast<double>(r) + 0.5 - half_h - ty;
      // Inverse rotation into the source frame, then back to index space.
      const double fx = c * ux + s * uy + half_w - 0.5;
      const double fy = -s * ux + c * uy + half_h - 0.5;
      const double x0f = std::floor(fx);
      const double y0f = std::floor(fy);
      const double ax = fx - x0f;
      const double ay = fy - y0f;
      const long x0 = static_cast<long>(x0f);
      const long y0 = static_cast<long>(y0f);
      auto dst = out.cell(r, col);
      const long xs[2] = {x0, x0 + 1};
      const long ys[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - ax, ax};
      const double wy[2] = {1.0 - ay, ay};
      for (int iy = 0; iy < 2; ++iy) {
        if (ys[iy] < 0 || ys[iy] >= H || wy[iy] == 0.0) continue;
        for (int ix = 0; ix < 2; ++ix) {
          if (xs[ix] < 0 || xs[ix] >= W || wx[ix] == 0.0) continue;
          const double weight = wx[ix] * wy[iy];
          const auto src = grid.cell(static_cast<std::size_t>(ys[iy]), static_cast<std::size_t>(xs[ix]));
          for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += weight * src[ch];
        }
      }
    }
  });
  return out;
}

// Warps `grid` from its own ego pose into the frame of `target`.
inline BevGrid warp_to(const BevGrid& grid, const Pose2& target, double target_timestamp) {
  BevGrid out = warp(grid, relative_pose(grid.pose, target));
  out.pose = target;
  out.timestamp_s = target_timestamp;
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions and fusion blocks

// Same-padded 2-D convolution over HWC grids with a k x k kernel (k odd).
// weight layout: [out][in][ky][kx].
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::vector<double> weight;
  std::vector<double> bias;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k)
      : in_channels(in), out_channels(out), kernel(k), weight(out * in * k * k, 0.0), bias(out, 0.0) {}

  double& w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return weight[((o * in_channels + i) * kernel + ky) * kernel + kx];
  }
  double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weight[((o * in_channels + i) * kernel + ky) * kernel + kx];
  }

  void validate() const {
    require(kernel % 2 == 1, "convolution kernel size must be odd");
    require(weight.size() == out_channels * in_channels * kernel * kernel, "convolution weight size mismatch");
    require(bias.size() == out_channels, "convolution bias size mismatch");
  }

  // Centre tap of input channel `in` copied to output channel `out`.
  void set_passthrough(std::size_t out, std::size_t in, double gain = 1.0) {
    w(out, in, kernel / 2, kernel / 2) = gain;
  }

  BevGrid apply(const BevGrid& x) const {
    validate();
    require(x.channels == in_channels, "convolution input channel mismatch");
    BevGrid out = BevGrid::zeros_like(x, out_channels);
    const long r = static_cast<long>(kernel / 2);
    const long H = static_cast<long>(x.height);
    const long W = static_cast<long>(x.width);
    parallel_for(x.height, [&](std::size_t row) {
      for (std::size_t col = 0; col < x.width; ++col) {
        auto dst = out.cell(row, col);
        for (std::size_t o = 0; o < out_channels; ++o) dst[o] = bias[o];
        for (long dy = -r; dy <= r; ++dy) {
          const long yy = static_cast<long>(row) + dy;
          if (yy < 0 || yy >= H) continue;
          for (long dx = -r; dx <= r; ++dx) {
            const long xx = static_cast<long>(col) + dx;
            if (xx < 0 || xx >= W) continue;
            const auto src = x.cell(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            const std::size_t ky = static_cast<std::size_t>(dy + r);
            const std::size_t kx = static_cast<std::size_t>(dx + r);
            for (std::size_t o = 0; o < out_channels; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < in_channels; ++i) acc += w(o, i, ky, kx) * src[i];
              dst[o] += acc;
            }
          }
        }
      }
    });
    return out;
  }
};

inline BevGrid concat_channels(std::span<const BevGrid> parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.height == parts[0].height && p.width == parts[0].width, "concat_channels: shape mismatch");
    total += p.channels;
  }
  BevGrid out = BevGrid::zeros_like(parts[0], total);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      auto dst = out.cell(r, c);
      std::size_t off = 0;
      for (const auto& p : parts) {
        const auto src = p.cell(r, c);
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.channels;
      }
    }
  }
  return out;
}

// Convolutional GRU cell. Each gate convolves the channel concatenation of
// (hidden, input), i.e. 2C -> C:
//   z = sigmoid(update([h, x]))
//   r = sigmoid(reset([h, x]))
//   c = tanh(candidate([r * h, x]))
//   h' = (1 - z) * h + z * c
struct GruWeights {
  Conv2d update;
  Conv2d reset;
  Conv2d candidate;

  static GruWeights zeros(std::size_t channels, std::size_t kernel = 1) {
    return {Conv2d(2 * channels, channels, kernel), Conv2d(2 * channels, channels, kernel),
            Conv2d(2 * channels, channels, kernel)};
  }
};

inline BevGrid gru_fuse(const BevGrid& hidden, const BevGrid& input, const GruWeights& w) {
  require(hidden.same_shape(input), "gru_fuse: hidden/input shape mismatch");
  const std::size_t C = hidden.channels;
  require(w.update.out_channels == C && w.update.in_channels == 2 * C, "gru_fuse: gate width mismatch");
  const BevGrid hx[2] = {hidden, input};
  const BevGrid joined = concat_channels(hx);
  BevGrid z = w.update.apply(joined);
  BevGrid r = w.reset.apply(joined);
  for (double& v : z.data) v = sigmoid(v);
  for (double& v : r.data) v = sigmoid(v);

  BevGrid gated = hidden;
  for (std::size_t i = 0; i < gated.data.size(); ++i) gated.data[i] *= r.data[i];
  const BevGrid rx[2] = {gated, input};
  BevGrid cand = w.candidate.apply(concat_channels(rx));

  BevGrid out = BevGrid::zeros_like(input);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double c = std::tanh(cand.data[i]);
    out.data[i] = (1.0 - z.data[i]) * hidden.data[i] + z.data[i] * c;
  }
  return out;
}

// Per-cell layer normalization across channels.
inline BevGrid layer_norm_grid(const BevGrid& x, const LayerNormParams& p) {
  BevGrid out = x;
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) layer_norm_inplace(out.cell(r, c), p);
  }
  return out;
}

// y = shortcut(x) + conv2(relu(conv1(x))). The shortcut is the identity
// when absent (requires in == out channels), otherwise a 1x1 projection.
struct ResBlock {
  Conv2d conv1;
  Conv2d conv2;
  std::optional<Conv2d> shortcut;

  // Zero residual branch: the block reduces to its shortcut.
  static ResBlock identity(std::size_t channels) {
    return {Conv2d(channels, channels, 3), Conv2d(channels, channels, 3), std::nullopt};
  }

  BevGrid apply(const BevGrid& x) const {
    BevGrid branch = conv1.apply(x);
    for (double& v : branch.data) v = relu(v);
    branch = conv2.apply(branch);
    const BevGrid skip = shortcut ? shortcut->apply(x) : x;
    require(skip.same_shape(branch), "ResBlock: shortcut/branch shape mismatch");
    for (std::size_t i = 0; i < branch.data.size(); ++i) branch.data[i] += skip.data[i];
    return branch;
  }
};

struct FusionWeights {
  GruWeights local_gru;
  GruWeights global_gru;
  LayerNormParams local_norm;
  LayerNormParams global_norm;
  bool layer_norm_enabled = true;
  ResBlock local_res;
  ResBlock stacking_res;  // (n_pre + 1) * C -> C

  // Small random weights drawn from `seed`; every parameter is
  // uniform(-scale, scale) in declaration order, layer norms start at
  // identity.
  static FusionWeights random(std::size_t channels, std::size_t n_pre, std::size_t gate_kernel,
                              std::uint64_t seed, double scale) {
    Rng rng(seed);
    auto fill = [&](Conv2d& conv) {
      for (double& v : conv.weight) v = rng.uniform(-scale, scale);
      for (double& v : conv.bias) v = rng.uniform(-scale, scale);
    };
    FusionWeights w;
    w.local_gru = GruWeights::zeros(channels, gate_kernel);
    w.global_gru = GruWeights::zeros(channels, gate_kernel);
    for (GruWeights* g : {&w.local_gru, &w.global_gru}) {
      fill(g->update);
      fill(g->reset);
      fill(g->candidate);
    }
    w.local_norm = LayerNormParams::identity(channels);
    w.global_norm = LayerNormParams::identity(channels);
    w.local_res = ResBlock::identity(channels);
    fill(w.local_res.conv1);
    fill(w.local_res.conv2);
    const std::size_t stacked = (n_pre + 1) * channels;
    w.stacking_res = {Conv2d(stacked, channels, 3), Conv2d(channels, channels, 3), Conv2d(stacked, channels, 1)};
    fill(w.stacking_res.conv1);
    fill(w.stacking_res.conv2);
    fill(*w.stacking_res.shortcut);
    return w;
  }
};

// ---------------------------------------------------------------------------
// Key-frame state

enum class KeyframeMode { stride, random };

struct KfsConfig {
  std::size_t n_pre = 4;
  double d_stride = 5.0;
  KeyframeMode mode = KeyframeMode::stride;
  // Random mode draws each stride uniformly from [0.5, 1.5] * d_stride.
  std::uint64_t seed = 0;

  void validate() const {
    require(n_pre >= 1, "n_pre must be at least 1");
    require(d_stride > 0.0 && std::isfinite(d_stride), "d_stride must be positive");
  }
};

struct KfsState {
  explicit KfsState(KfsConfig cfg = {}) : config(cfg), rng(cfg.seed) {
    config.validate();
    next_threshold = draw_threshold();
  }

  KfsConfig config;
  std::optional<BevGrid> submap;
  std::optional<BevGrid> global_feature;
  std::deque<BevGrid> keyframe_buffer;  // most recent first, at most n_pre
  std::optional<Pose2> last_keyframe_pose;
  std::optional<Pose2> last_pose;
  double travelled_since_keyframe = 0.0;
  std::size_t frames_seen = 0;
  Rng rng;
  double next_threshold = 0.0;

  double draw_threshold() {
    if (config.mode == KeyframeMode::stride) return config.d_stride;
    return config.d_stride * rng.uniform(0.5, 1.5);
  }
};

// Advances the scheduler by one frame. The first frame is a key frame;
// afterwards a key frame is declared once the planar path length since the
// previous key frame reaches the stride. Timestamps play no role.
inline bool keyframe_step(KfsState& state, const Pose2& current_pose) {
  bool is_key = false;
  if (!state.last_pose) {
    is_key = true;
  } else {
    state.travelled_since_keyframe +=
        std::hypot(current_pose.x - state.last_pose->x, current_pose.y - state.last_pose->y);
    is_key = state.travelled_since_keyframe >= state.next_threshold;
  }
  state.last_pose = current_pose;
  ++state.frames_seen;
  if (is_key) {
    state.travelled_since_keyframe = 0.0;
    state.last_keyframe_pose = current_pose;
    state.next_threshold = state.draw_threshold();
  }
  return is_key;
}

// Warp the previous submap into the current frame, fuse it with the local
// BEV feature through the GRU, normalize, then mix spatially:
//   F_submap^t = ResBlock(LN(GRU(warp(F_submap^{t-1}), F_local^t))).
// The hidden state starts at zero. The result replaces state.submap.
inline const BevGrid& local_fusion(KfsState& state, const BevGrid& f_local, const FusionWeights& w) {
  f_local.validate();
  BevGrid hidden = BevGrid::zeros_like(f_local);
  if (state.submap) {
    require(state.submap->same_shape(f_local), "local_fusion: grid shape mismatch");
    require(f_local.timestamp_s > state.submap->timestamp_s,
            "local_fusion: frames must arrive in strictly increasing time");
    hidden = warp_to(*state.submap, f_local.pose, f_local.timestamp_s);
  }
  BevGrid fused = gru_fuse(hidden, f_local, w.local_gru);
  if (w.layer_norm_enabled) fused = layer_norm_grid(fused, w.local_norm);
  fused = w.local_res.apply(fused);
  fused.pose = f_local.pose;
  fused.timestamp_s = f_local.timestamp_s;
  state.submap = std::move(fused);
  return *state.submap;
}

// Global recurrence over key frames:
//   F_global^t = LN(GRU(warp(F_global^pre), F_submap^t)).
// With commit the result becomes the stored global feature.
inline BevGrid global_fusion_streaming(KfsState& state, const FusionWeights& w, bool commit = true) {
  require(state.submap.has_value(), "global fusion needs a current submap");
  const BevGrid& current = *state.submap;
  BevGrid hidden = BevGrid::zeros_like(current);
  if (state.global_feature) {
    require(state.global_feature->same_shape(current), "global fusion: grid shape mismatch");
    hidden = warp_to(*state.global_feature, current.pose, current.timestamp_s);
  }
  BevGrid fused = gru_fuse(hidden, current, w.global_gru);
  if (w.layer_norm_enabled) fused = layer_norm_grid(fused, w.global_norm);
  fused.pose = current.pose;
  fused.timestamp_s = current.timestamp_s;
  if (commit) state.global_feature = fused;
  return fused;
}

// Channel layout of the stacked input: n_pre buffered key-frame submaps
// warped to the current frame (most recent first, missing slots zero), then
// the current submap in the last C channels. The (n_pre + 1) * C grid goes
// through the stacking ResBlock. With commit the current submap is pushed
// into the buffer.
inline BevGrid global_fusion_stacking(KfsState& state, const FusionWeights& w, bool commit = true) {
  require(state.submap.has_value(), "global fusion needs a current submap");
  const BevGrid& current = *state.submap;
  const std::size_t n_pre = state.config.n_pre;
  std::vector<BevGrid> parts;
  parts.reserve(n_pre + 1);
  for (std::size_t k = 0; k < n_pre; ++k) {
    if (k < state.keyframe_buffer.size()) {
      require(state.keyframe_buffer[k].same_shape(current), "stacking: buffered grid shape mismatch");
      parts.push_back(warp_to(state.keyframe_buffer[k], current.pose, current.timestamp_s));
    } else {
      parts.push_back(BevGrid::zeros_like(current));
    }
  }
  parts.push_back(current);
  BevGrid fused = w.stacking_res.apply(concat_channels(parts));
  fused.pose = current.pose;
  fused.timestamp_s = current.timestamp_s;
  if (commit) {
    state.keyframe_buffer.push_front(current);
    while (state.keyframe_buffer.size() > n_pre) state.keyframe_buffer.pop_back();
  }
  return fused;
}

enum class FusionMode { streaming, stacking };

struct FusionStep {
  bool keyframe = false;
  BevGrid submap;
  BevGrid global;
};

// One frame of key-frame-based fusion: local fusion every frame, global
// fusion output every frame, global state committed on key frames only.
inline FusionStep fuse_frame(KfsState& state, const BevGrid& f_local, const FusionWeights& w,
                             FusionMode mode) {
  FusionStep step;
  step.submap = local_fusion(state, f_local, w);
  step.keyframe = keyframe_step(state, f_local.pose);
  step.global = mode == FusionMode::streaming ? global_fusion_streaming(state, w, step.keyframe)
                                              : global_fusion_stacking(state, w, step.keyframe);
  return step;
}

}  // namespace mapvec
