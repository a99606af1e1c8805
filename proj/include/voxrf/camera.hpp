#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "voxrf/common.hpp"

namespace voxrf {

// Pinhole camera. Rotation is camera-to-world with OpenCV axes: +x right,
// +y down, +z forward. Pixel (u,v) rays pass through the pixel center
// (u+0.5, v+0.5).
struct Camera {
  Vec3 position{0, 0, 0};
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  double focal = 0;
  int width = 0, height = 0;
  double cx = -1, cy = -1;  // principal point; negative = image center

  Vec3 rotate(const Vec3& v) const {
    return {rotation[0] * v[0] + rotation[1] * v[1] + rotation[2] * v[2],
            rotation[3] * v[0] + rotation[4] * v[1] + rotation[5] * v[2],
            rotation[6] * v[0] + rotation[7] * v[1] + rotation[8] * v[2]};
  }
  Vec3 rotate_inv(const Vec3& v) const {
    return {rotation[0] * v[0] + rotation[3] * v[1] + rotation[6] * v[2],
            rotation[1] * v[0] + rotation[4] * v[1] + rotation[7] * v[2],
            rotation[2] * v[0] + rotation[5] * v[1] + rotation[8] * v[2]};
  }
  double principal_x() const { return cx < 0 ? width * 0.5 : cx; }
  double principal_y() const { return cy < 0 ? height * 0.5 : cy; }

  // world point -> pixel coordinates (continuous)
  bool project(const Vec3& p, double* u, double* v) const {
    Vec3 q = rotate_inv(p - position);
    if (q[2] <= 0) return false;
    *u = focal * q[0] / q[2] + principal_x();
    *v = focal * q[1] / q[2] + principal_y();
    return true;
  }
};

struct Ray {
  Vec3 origin{0, 0, 0};
  Vec3 direction{0, 0, 1};  // unit
  double t_near = 0, t_far = -1;
  bool hit() const { return t_near <= t_far; }
};

// slab intersection with [-1,1]^3, entry clipped at 0
inline void intersect_domain(Ray* r) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = r->origin[a], d = r->direction[a];
    if (std::abs(d) < 1e-12) {
      if (o < -1.0 || o > 1.0) {
        r->t_near = 1.0;
        r->t_far = 0.0;
        return;
      }
      continue;
    }
    double ta = (-1.0 - o) / d, tb = (1.0 - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  r->t_near = t0;
  r->t_far = t1;
}

inline Ray camera_ray(const Camera& cam, double px, double py) {
  Vec3 dir_cam{(px - cam.principal_x()) / cam.focal, (py - cam.principal_y()) / cam.focal, 1.0};
  Ray r;
  r.origin = cam.position;
  r.direction = normalized(cam.rotate(dir_cam));
  intersect_domain(&r);
  return r;
}

// Rays through the centers of the given integer pixels.
inline std::vector<Ray> pixel_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels) {
  if (cam.focal <= 0) throw ValidationError("pixel_rays: focal must be positive");
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (auto [u, v] : pixels) {
    if (u < 0 || u >= cam.width || v < 0 || v >= cam.height)
      throw ValidationError("pixel_rays: pixel (" + std::to_string(u) + "," + std::to_string(v) +
                            ") outside " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
    rays.push_back(camera_ray(cam, u + 0.5, v + 0.5));
  }
  return rays;
}

// Camera at `position` looking at the origin, world up = +z.
inline Camera look_at_origin(const Vec3& position, double focal, int width, int height) {
  Camera cam;
  cam.position = position;
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  Vec3 fwd = normalized(Vec3{0, 0, 0} - position);
  Vec3 up{0, 0, 1};
  Vec3 right = cross(fwd, up);
  if (norm(right) < 1e-9) right = cross(fwd, Vec3{1, 0, 0});  // looking straight up/down
  right = normalized(right);
  Vec3 down = cross(fwd, right);
  // columns: right, down, forward (camera axes in world coordinates)
  cam.rotation = {right[0], down[0], fwd[0], right[1], down[1], fwd[1], right[2], down[2], fwd[2]};
  return cam;
}

struct SpiralConfig {
  int n_views = 200;
  double radius = 2.5;
  double pitch_lo_deg = -20.0;
  double pitch_hi_deg = 60.0;
  double windings = 5.0;  // azimuth turns across the sweep
  double focal = 0.0;     // 0 = default 0.58 * width
  int width = 128, height = 128;
};

// Cameras on a sphere: azimuth winds uniformly while pitch sweeps linearly,
// every camera looking at the origin.
inline std::vector<Camera> spiral_trajectory(const SpiralConfig& cfg) {
  if (cfg.n_views < 1) throw ValidationError("spiral_trajectory: n_views must be >= 1");
  if (cfg.radius <= 0) throw ValidationError("spiral_trajectory: radius must be positive");
  const double focal = cfg.focal > 0 ? cfg.focal : 0.58 * cfg.width;
  std::vector<Camera> cams;
  cams.reserve(cfg.n_views);
  for (int i = 0; i < cfg.n_views; ++i) {
    const double s = cfg.n_views == 1 ? 0.0 : double(i) / double(cfg.n_views - 1);
    const double pitch = deg2rad(cfg.pitch_lo_deg + (cfg.pitch_hi_deg - cfg.pitch_lo_deg) * s);
    const double azim = 2.0 * M_PI * cfg.windings * s;
    Vec3 pos{cfg.radius * std::cos(pitch) * std::cos(azim), cfg.radius * std::cos(pitch) * std::sin(azim),
             cfg.radius * std::sin(pitch)};
    cams.push_back(look_at_origin(pos, focal, cfg.width, cfg.height));
  }
  return cams;
}

inline bool rotation_orthonormal(const std::array<double, 9>& r, double tol = 1e-6) {
  // R R^T == I and det == +1
  auto row = [&](int i) { return Vec3{r[3 * i], r[3 * i + 1], r[3 * i + 2]}; };
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot(row(i), row(j)) - want) > tol) return false;
    }
  double det = dot(row(0), cross(row(1), row(2)));
  return std::abs(det - 1.0) <= tol;
}

}  // namespace voxrf
