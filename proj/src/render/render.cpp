#include "spheroview/render.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

#include "common/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace spheroview::render {

void RenderConfig::validate() const {
  if (!(r > 0.0)) throw InvalidArgument("render: sphere radius must be positive");
  if (out_width <= 0 || out_height <= 0) throw InvalidArgument("render: output size must be positive");
  if (!(eye_fov > 0.0 && eye_fov < std::numbers::pi)) throw InvalidArgument("render: eye_fov must lie in (0, pi)");
}

double RenderConfig::eye_focal() const { return 0.5 * out_height / std::tan(0.5 * eye_fov); }

Vec3 eye_ray(const RenderConfig& cfg, double px, double py) {
  const double f = cfg.eye_focal();
  return {(px + 0.5 - 0.5 * cfg.out_width) / f, (py + 0.5 - 0.5 * cfg.out_height) / f, 1.0};
}

Vec2 eye_pixel(const RenderConfig& cfg, const Vec3& d) {
  const double f = cfg.eye_focal();
  return {f * d.x() / d.z() + 0.5 * cfg.out_width - 0.5, f * d.y() / d.z() + 0.5 * cfg.out_height - 0.5};
}

Vec3 sphere_lookup_direction(const Vec3& ray_eye, const Pose& t_cam_eye, double r) {
  const Vec3 d = (t_cam_eye.rotation() * ray_eye).normalized();
  const Vec3& o = t_cam_eye.translation();
  const double b = o.dot(d);
  const double c = o.squaredNorm() - r * r;
  const double s = -b + std::sqrt(b * b - c);
  const Vec3 p = o + s * d;
  return p / p.norm();
}

namespace {

// Per-frame constants of the ray-cast, in single precision for the hot loop.
struct Kernel {
  float dir0[3];    // camera-frame ray of output pixel (0, y) minus the y term
  float dir_x[3];   // increment per output column
  float dir_y[3];   // increment per output row
  float o[3];       // eye origin in camera frame
  float c;          // |o|^2 - r^2 (negative inside the sphere)
  float r;
  float fx, fy, cx, cy, xi, alpha, w2;
  float u_max, v_max;
};

Kernel make_kernel(const camera::DoubleSphereIntrinsics& k, const Pose& t_cam_eye, const RenderConfig& cfg) {
  Kernel kn{};
  const geom::Mat3 rot = t_cam_eye.rotation_matrix();
  const double f = cfg.eye_focal();
  const Vec3 base = rot * Vec3((0.5 - 0.5 * cfg.out_width) / f, (0.5 - 0.5 * cfg.out_height) / f, 1.0);
  const Vec3 step_x = rot * Vec3(1.0 / f, 0.0, 0.0);
  const Vec3 step_y = rot * Vec3(0.0, 1.0 / f, 0.0);
  const Vec3& o = t_cam_eye.translation();
  for (int i = 0; i < 3; ++i) {
    kn.dir0[i] = static_cast<float>(base[i]);
    kn.dir_x[i] = static_cast<float>(step_x[i]);
    kn.dir_y[i] = static_cast<float>(step_y[i]);
    kn.o[i] = static_cast<float>(o[i]);
  }
  kn.c = static_cast<float>(o.squaredNorm() - cfg.r * cfg.r);
  kn.r = static_cast<float>(cfg.r);
  kn.fx = static_cast<float>(k.fx);
  kn.fy = static_cast<float>(k.fy);
  kn.cx = static_cast<float>(k.cx);
  kn.cy = static_cast<float>(k.cy);
  kn.xi = static_cast<float>(k.xi);
  kn.alpha = static_cast<float>(k.alpha);
  kn.w2 = static_cast<float>(k.validity_w2());
  kn.u_max = static_cast<float>(k.width) - 0.5f;
  kn.v_max = static_cast<float>(k.height) - 0.5f;
  return kn;
}

// Bilinear taps for one output row, in fixed point. off < 0 marks an invalid lookup.
struct RowTaps {
  explicit RowTaps(int width)
      : off(static_cast<std::size_t>(width)),
        dx(static_cast<std::size_t>(width)),
        dy(static_cast<std::size_t>(width)),
        wx(static_cast<std::size_t>(width)),
        wy(static_cast<std::size_t>(width)) {}
  std::vector<std::int32_t> off;  // byte offset of the top-left tap
  std::vector<std::int32_t> dx;   // 0 or 3: step to the right tap (0 when clamped)
  std::vector<std::int32_t> dy;   // 0 or stride: step to the lower tap
  std::vector<std::int32_t> wx;   // weights in 1/128
  std::vector<std::int32_t> wy;
};

void row_taps(const Kernel& kn, int y, int src_w, int src_h, RowTaps& t) {
  const int width = static_cast<int>(t.off.size());
  std::int32_t* __restrict off = t.off.data();
  std::int32_t* __restrict tdx = t.dx.data();
  std::int32_t* __restrict tdy = t.dy.data();
  std::int32_t* __restrict twx = t.wx.data();
  std::int32_t* __restrict twy = t.wy.data();
  const std::int32_t stride = 3 * src_w;
  const float fy_ = static_cast<float>(y);
  const float bx = kn.dir0[0] + fy_ * kn.dir_y[0];
  const float by = kn.dir0[1] + fy_ * kn.dir_y[1];
  const float bz = kn.dir0[2] + fy_ * kn.dir_y[2];
  const float ox = kn.o[0], oy = kn.o[1], oz = kn.o[2];
  const float one_minus_alpha = 1.0f - kn.alpha;
  const float xi_r = kn.xi * kn.r;
  const float z_min = -kn.w2 * kn.r;
  const float u_hi = static_cast<float>(src_w);
  const float v_hi = static_cast<float>(src_h);
  for (int x = 0; x < width; ++x) {
    const float fx_ = static_cast<float>(x);
    const float dx = bx + fx_ * kn.dir_x[0];
    const float dy = by + fx_ * kn.dir_x[1];
    const float dz = bz + fx_ * kn.dir_x[2];
    // |o + s d|^2 = r^2 for unnormalized d, far root.
    const float a = dx * dx + dy * dy + dz * dz;
    const float b = ox * dx + oy * dy + oz * dz;
    const float s = (std::sqrt(b * b - a * kn.c) - b) / a;
    const float px = ox + s * dx;
    const float py = oy + s * dy;
    const float pz = oz + s * dz;
    // Double-sphere projection with d1 = r.
    const float zs = xi_r + pz;
    const float d2 = std::sqrt(px * px + py * py + zs * zs);
    const float inv = 1.0f / (kn.alpha * d2 + one_minus_alpha * zs);
    float u = kn.fx * px * inv + kn.cx;
    float v = kn.fy * py * inv + kn.cy;
    // Non-short-circuit tests keep the loop branch-free so it vectorizes.
    const bool ok = (pz > z_min) & (u >= -0.5f) & (u < kn.u_max) & (v >= -0.5f) & (v < kn.v_max);
    // Bring garbage (including NaN) into range before the integer conversion.
    u = u > -1.0f ? u : -1.0f;
    u = u < u_hi ? u : u_hi;
    v = v > -1.0f ? v : -1.0f;
    v = v < v_hi ? v : v_hi;
    const float fu = std::floor(u);
    const float fv = std::floor(v);
    const std::int32_t x0 = static_cast<std::int32_t>(fu);
    const std::int32_t y0 = static_cast<std::int32_t>(fv);
    const std::int32_t xa = x0 < 0 ? 0 : x0;
    const std::int32_t xb = x0 + 1 < src_w ? x0 + 1 : src_w - 1;
    const std::int32_t ya = y0 < 0 ? 0 : y0;
    const std::int32_t yb = y0 + 1 < src_h ? y0 + 1 : src_h - 1;
    off[x] = ok ? ya * stride + 3 * xa : -1;
    tdx[x] = 3 * (xb - xa);
    tdy[x] = stride * (yb - ya);
    twx[x] = static_cast<std::int32_t>((u - fu) * 128.0f + 0.5f);
    twy[x] = static_cast<std::int32_t>((v - fv) * 128.0f + 0.5f);
  }
}

// Weights are 7-bit (1/128 pixel) so both bilinear passes fit 16-bit lanes.
constexpr std::int32_t kWeightOne = 128;

inline void gather_pixel(const std::uint8_t* __restrict src, std::int32_t off, std::int32_t dx, std::int32_t dy,
                         std::int32_t wx, std::int32_t wy, image::Rgb bg, std::uint8_t* __restrict dst) {
  if (off < 0) {
    dst[0] = bg.r;
    dst[1] = bg.g;
    dst[2] = bg.b;
    return;
  }
  const std::uint8_t* p00 = src + off;
  const std::uint8_t* p10 = p00 + dx;
  const std::uint8_t* p01 = p00 + dy;
  const std::uint8_t* p11 = p01 + dx;
  for (int ch = 0; ch < 3; ++ch) {
    const std::int32_t top = p00[ch] * (kWeightOne - wx) + p10[ch] * wx;
    const std::int32_t bottom = p01[ch] * (kWeightOne - wx) + p11[ch] * wx;
    dst[ch] = static_cast<std::uint8_t>((top * (kWeightOne - wy) + bottom * wy + 8192) >> 14);
  }
}

#if defined(__AVX2__)
// Per-pixel 16-bit weight replicated over the four channel lanes of px0..3.
inline __m256i spread_weights(__m128i w) {
  const __m128i w2 = _mm_or_si128(w, _mm_slli_epi32(w, 16));
  const __m256i w64 = _mm256_cvtepu32_epi64(w2);
  return _mm256_or_si256(w64, _mm256_slli_epi64(w64, 32));
}

// Bilinear blend of four pixels held as RGBx dwords; returns 16-bit [px0 px1 | px2 px3].
inline __m256i blend4(__m128i a, __m128i b, __m128i c, __m128i d, __m128i wx, __m128i wy) {
  const __m256i one = _mm256_set1_epi16(kWeightOne);
  const __m256i w = spread_weights(wx);
  const __m256i iw = _mm256_sub_epi16(one, w);
  const __m256i top = _mm256_add_epi16(_mm256_mullo_epi16(_mm256_cvtepu8_epi16(a), iw),
                                       _mm256_mullo_epi16(_mm256_cvtepu8_epi16(b), w));
  const __m256i bottom = _mm256_add_epi16(_mm256_mullo_epi16(_mm256_cvtepu8_epi16(c), iw),
                                          _mm256_mullo_epi16(_mm256_cvtepu8_epi16(d), w));
  // (1 - wy, wy) pairs, one per pixel, for the vertical multiply-add.
  const __m128i pair = _mm_or_si128(_mm_sub_epi32(_mm_set1_epi32(kWeightOne), wy), _mm_slli_epi32(wy, 16));
  const __m256i pair256 = _mm256_castsi128_si256(pair);
  const __m256i wv_even = _mm256_permutevar8x32_epi32(pair256, _mm256_setr_epi32(0, 0, 0, 0, 2, 2, 2, 2));
  const __m256i wv_odd = _mm256_permutevar8x32_epi32(pair256, _mm256_setr_epi32(1, 1, 1, 1, 3, 3, 3, 3));
  const __m256i round = _mm256_set1_epi32(8192);
  const __m256i even = _mm256_srli_epi32(
      _mm256_add_epi32(_mm256_madd_epi16(_mm256_unpacklo_epi16(top, bottom), wv_even), round), 14);
  const __m256i odd = _mm256_srli_epi32(
      _mm256_add_epi32(_mm256_madd_epi16(_mm256_unpackhi_epi16(top, bottom), wv_odd), round), 14);
  return _mm256_packus_epi32(even, odd);
}
#endif

void row_gather(const std::uint8_t* __restrict src, std::size_t src_size, const RowTaps& t, image::Rgb bg,
                std::uint8_t* __restrict out) {
  // Local pointers: byte stores through `out` could otherwise alias the vectors.
  const int width = static_cast<int>(t.off.size());
  const std::int32_t* __restrict offs = t.off.data();
  const std::int32_t* __restrict sdx = t.dx.data();
  const std::int32_t* __restrict sdy = t.dy.data();
  const std::int32_t* __restrict swx = t.wx.data();
  const std::int32_t* __restrict swy = t.wy.data();
  int x = 0;
#if defined(__AVX2__)
  // Dword gathers read one byte past each pixel, so the last source pixel
  // goes through the scalar path. The 16-byte stores spill 4 bytes into the
  // next group, so the final group of a row is scalar as well.
  const __m256i last_safe = _mm256_set1_epi32(static_cast<std::int32_t>(src_size) - 4);
  const __m256i drop_x = _mm256_setr_epi8(0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13, 14, -1, -1, -1, -1, 0, 1, 2, 4, 5, 6,
                                          8, 9, 10, 12, 13, 14, -1, -1, -1, -1);
  const auto* base = reinterpret_cast<const int*>(src);
  for (; x + 8 < width; x += 8) {
    const __m256i off = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(offs + x));
    const __m256i dx = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(sdx + x));
    const __m256i dy = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(sdy + x));
    const __m256i off01 = _mm256_add_epi32(off, dy);
    const __m256i off11 = _mm256_add_epi32(off01, dx);
    const __m256i bad = _mm256_or_si256(off, _mm256_cmpgt_epi32(off11, last_safe));
    if (_mm256_movemask_ps(_mm256_castsi256_ps(bad)) != 0) {
      for (int k = x; k < x + 8; ++k) gather_pixel(src, offs[k], sdx[k], sdy[k], swx[k], swy[k], bg, out + 3 * k);
      continue;
    }
    const __m256i a = _mm256_i32gather_epi32(base, off, 1);
    const __m256i b = _mm256_i32gather_epi32(base, _mm256_add_epi32(off, dx), 1);
    const __m256i c = _mm256_i32gather_epi32(base, off01, 1);
    const __m256i d = _mm256_i32gather_epi32(base, off11, 1);
    const __m256i wx = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(swx + x));
    const __m256i wy = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(swy + x));
    const __m256i lo = blend4(_mm256_castsi256_si128(a), _mm256_castsi256_si128(b), _mm256_castsi256_si128(c),
                              _mm256_castsi256_si128(d), _mm256_castsi256_si128(wx), _mm256_castsi256_si128(wy));
    const __m256i hi = blend4(_mm256_extracti128_si256(a, 1), _mm256_extracti128_si256(b, 1),
                              _mm256_extracti128_si256(c, 1), _mm256_extracti128_si256(d, 1),
                              _mm256_extracti128_si256(wx, 1), _mm256_extracti128_si256(wy, 1));
    // Bytes land as [px0 px1 px4 px5 | px2 px3 px6 px7]; restore pixel order, then drop the x channel.
    const __m256i packed = _mm256_permutevar8x32_epi32(_mm256_packus_epi16(lo, hi),
                                                       _mm256_setr_epi32(0, 1, 4, 5, 2, 3, 6, 7));
    const __m256i rgb = _mm256_shuffle_epi8(packed, drop_x);
    std::uint8_t* dst = out + 3 * x;
    _mm_storeu_si128(reinterpret_cast<__m128i*>(dst), _mm256_castsi256_si128(rgb));
    _mm_storeu_si128(reinterpret_cast<__m128i*>(dst + 12), _mm256_extracti128_si256(rgb, 1));
  }
#else
  (void)src_size;
#endif
  for (; x < width; ++x) gather_pixel(src, offs[x], sdx[x], sdy[x], swx[x], swy[x], bg, out + 3 * x);
}

}  // namespace

EyeView reproject(const image::Image& frame, const camera::DoubleSphereIntrinsics& intr, const Pose& t_world_cam,
                  const Pose& t_world_eye, const RenderConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (frame.width() != intr.width || frame.height() != intr.height)
    throw InvalidArgument("reproject: frame size does not match the intrinsics");
  if (frame.bytes().size() > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
    throw InvalidArgument("reproject: frame too large");
  const Pose t_cam_eye = geom::inverse(t_world_cam) * t_world_eye;
  if (!(t_cam_eye.translation().norm() < cfg.r)) throw EyeOutsideSphere();

  const Kernel kn = make_kernel(intr, t_cam_eye, cfg);
  EyeView view{image::Image(cfg.out_width, cfg.out_height), t_world_eye, {}};
  const int width = cfg.out_width;
  detail::parallel_rows(cfg.out_height, cfg.threads, [&](int y0, int y1) {
    RowTaps taps(width);
    for (int y = y0; y < y1; ++y) {
      row_taps(kn, y, frame.width(), frame.height(), taps);
      row_gather(frame.bytes().data(), frame.bytes().size(), taps, cfg.background, view.image.row(y));
    }
  });
  view.render_time = std::chrono::steady_clock::now() - start;
  return view;
}

double angular_error(double d, double dx, double r) {
  if (!(d > 0.0) || !(r > 0.0) || !(dx >= 0.0)) throw InvalidArgument("angular_error: need d > 0, r > 0, dx >= 0");
  if (dx == 0.0) return 0.0;
  return std::atan(d / dx) - std::atan(r / dx);
}

double angular_error_asymptote(double dx, double r) {
  if (!(r > 0.0) || !(dx >= 0.0)) throw InvalidArgument("angular_error_asymptote: need r > 0, dx >= 0");
  if (dx == 0.0) return 0.0;
  return std::numbers::pi / 2.0 - std::atan(r / dx);
}

std::vector<ErrorSample> error_curve(double dx, double r, double d_min, double d_max, int steps) {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw InvalidArgument("error_curve: need 0 < d_min < d_max");
  if (steps < 2) throw InvalidArgument("error_curve: need at least 2 steps");
  std::vector<ErrorSample> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  bool has_r = false;
  for (int i = 0; i < steps; ++i) {
    double d = i == steps - 1 ? d_max : d_min + (d_max - d_min) * i / (steps - 1);
    if (std::abs(d - r) <= 1e-12 * std::max(1.0, r)) {
      d = r;
      has_r = true;
    }
    out.push_back({d, angular_error(d, dx, r)});
  }
  if (!has_r && r > d_min && r < d_max) {
    const auto at = std::lower_bound(out.begin(), out.end(), r, [](const ErrorSample& s, double v) { return s.d < v; });
    out.insert(at, {r, 0.0});
  }
  return out;
}

StereoViews render_stereo(const image::Image& left_frame, const image::Image& right_frame,
                          const camera::StereoRig& rig, const Pose& t_world_cam_left, const Pose& t_world_head,
                          const EyeOffsets& eyes, const RenderConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  StereoViews out;
  out.left = reproject(left_frame, rig.left, t_world_cam_left, t_world_head * eyes.left, cfg);
  out.right = reproject(right_frame, rig.right, t_world_cam_left * rig.t_l_r, t_world_head * eyes.right, cfg);
  out.wall_time = std::chrono::steady_clock::now() - start;
  return out;
}

}  // namespace spheroview::render
