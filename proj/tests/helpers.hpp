#pragma once

// Shared test fixtures: canonical meshes with STL serialisers, smooth random
// textures for registration tests, and a scratch-directory guard.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "layermon/image.hpp"
#include "layermon/rng.hpp"
#include "layermon/slicer.hpp"

namespace testutil {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("layermon_" + tag + "_" + std::to_string(++counter) + "_" +
             std::to_string(static_cast<unsigned long>(::getpid())));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

/// Binary STL bytes for a triangle soup; normals written as zero (parsers
/// must ignore them).
inline std::vector<std::uint8_t> binary_stl(const std::vector<layermon::Triangle>& tris) {
  std::vector<std::uint8_t> out(80, 0);
  put_u32(out, static_cast<std::uint32_t>(tris.size()));
  for (const layermon::Triangle& t : tris) {
    for (int i = 0; i < 3; ++i) put_f32(out, 0.0f);
    for (const layermon::Vec3& v : t) {
      put_f32(out, static_cast<float>(v.x));
      put_f32(out, static_cast<float>(v.y));
      put_f32(out, static_cast<float>(v.z));
    }
    out.push_back(0);
    out.push_back(0);
  }
  return out;
}

inline layermon::TriMesh mesh_from(const std::vector<layermon::Triangle>& tris) {
  const std::vector<std::uint8_t> bytes = binary_stl(tris);
  return layermon::parse_stl(bytes);
}

inline void write_stl(const std::vector<layermon::Triangle>& tris,
                      const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = binary_stl(tris);
  FILE* f = std::fopen(path.string().c_str(), "wb");
  std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
}

/// Axis-aligned box [o, o+s]^3 as 12 triangles.
inline std::vector<layermon::Triangle> cube_triangles(double s = 1.0,
                                                      layermon::Vec3 o = {0, 0, 0}) {
  auto v = [&](int i) {
    return layermon::Vec3{o.x + ((i & 1) ? s : 0.0), o.y + ((i & 2) ? s : 0.0),
                          o.z + ((i & 4) ? s : 0.0)};
  };
  // Each face split along one diagonal; vertex index bits are (x, y, z).
  const int faces[12][3] = {
      {0, 1, 3}, {0, 3, 2},  // z = 0
      {4, 7, 5}, {4, 6, 7},  // z = s
      {0, 5, 1}, {0, 4, 5},  // y = 0
      {2, 3, 7}, {2, 7, 6},  // y = s
      {0, 2, 6}, {0, 6, 4},  // x = 0
      {1, 5, 7}, {1, 7, 3},  // x = s
  };
  std::vector<layermon::Triangle> tris;
  for (const auto& f : faces) tris.push_back({v(f[0]), v(f[1]), v(f[2])});
  return tris;
}

/// Right tetrahedron (0,0,0),(1,0,0),(0,1,0),(0,0,1): the z = 0.5
/// cross-section is the triangle (0,0),(0.5,0),(0,0.5) with area 0.125.
inline std::vector<layermon::Triangle> tetra_triangles() {
  const layermon::Vec3 a{0, 0, 0}, b{1, 0, 0}, c{0, 1, 0}, d{0, 0, 1};
  return {{a, c, b}, {a, b, d}, {b, c, d}, {a, d, c}};
}

/// Watertight UV sphere; vertices are computed once per grid node so shared
/// triangle corners stay bit-identical through the f32 STL round-trip.
inline std::vector<layermon::Triangle> sphere_triangles(double radius, int stacks, int slices) {
  std::vector<std::vector<layermon::Vec3>> grid(static_cast<std::size_t>(stacks) + 1);
  for (int i = 0; i <= stacks; ++i) {
    const double phi = M_PI * i / stacks;  // 0 at the north pole
    grid[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(slices));
    for (int j = 0; j < slices; ++j) {
      const double theta = 2.0 * M_PI * j / slices;
      grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = {
          radius * std::sin(phi) * std::cos(theta), radius * std::sin(phi) * std::sin(theta),
          radius * std::cos(phi)};
    }
  }
  std::vector<layermon::Triangle> tris;
  for (int i = 0; i < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      const int jn = (j + 1) % slices;
      const layermon::Vec3 a = grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const layermon::Vec3 b = grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(jn)];
      const layermon::Vec3 c =
          grid[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(j)];
      const layermon::Vec3 d =
          grid[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(jn)];
      if (i != 0) tris.push_back({a, b, d});
      if (i != stacks - 1) tris.push_back({a, d, c});
    }
  }
  return tris;
}

/// Watertight torus around the z axis (centre-ring radius R, tube radius r).
inline std::vector<layermon::Triangle> torus_triangles(double R, double r, int nu, int nv) {
  std::vector<std::vector<layermon::Vec3>> grid(static_cast<std::size_t>(nu));
  for (int i = 0; i < nu; ++i) {
    const double u = 2.0 * M_PI * i / nu;
    grid[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(nv));
    for (int j = 0; j < nv; ++j) {
      const double v = 2.0 * M_PI * j / nv;
      grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = {
          (R + r * std::cos(v)) * std::cos(u), (R + r * std::cos(v)) * std::sin(u),
          r * std::sin(v)};
    }
  }
  std::vector<layermon::Triangle> tris;
  for (int i = 0; i < nu; ++i) {
    const int in = (i + 1) % nu;
    for (int j = 0; j < nv; ++j) {
      const int jn = (j + 1) % nv;
      const layermon::Vec3 a = grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const layermon::Vec3 b = grid[static_cast<std::size_t>(in)][static_cast<std::size_t>(j)];
      const layermon::Vec3 c = grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(jn)];
      const layermon::Vec3 d = grid[static_cast<std::size_t>(in)][static_cast<std::size_t>(jn)];
      tris.push_back({a, b, d});
      tris.push_back({a, d, c});
    }
  }
  return tris;
}

/// Smooth random texture: two octaves of bilinearly interpolated value noise.
/// Smoothness matters; gradient-based alignment needs usable derivatives.
inline layermon::GrayImage value_noise_texture(int width, int height, std::uint64_t seed) {
  layermon::Rng rng(seed);
  layermon::FloatImage acc(width, height, 0.0);
  const int spacing[2] = {32, 8};
  const double weight[2] = {0.7, 0.3};
  for (int oct = 0; oct < 2; ++oct) {
    const int s = spacing[oct];
    const int gw = width / s + 2, gh = height / s + 2;
    std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
    for (double& g : grid) g = rng.uniform01();
    for (int y = 0; y < height; ++y) {
      const double gy = static_cast<double>(y) / s;
      const int y0 = static_cast<int>(gy);
      const double fy = gy - y0;
      for (int x = 0; x < width; ++x) {
        const double gx = static_cast<double>(x) / s;
        const int x0 = static_cast<int>(gx);
        const double fx = gx - x0;
        const double v00 = grid[static_cast<std::size_t>(y0) * gw + x0];
        const double v10 = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
        const double v01 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
        const double v11 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
        const double top = v00 + fx * (v10 - v00);
        const double bot = v01 + fx * (v11 - v01);
        acc.at(x, y) += weight[oct] * (top + fy * (bot - top));
      }
    }
  }
  layermon::FloatImage scaled(width, height, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) scaled.at(x, y) = 20.0 + 215.0 * acc.at(x, y);
  return layermon::to_gray(scaled);
}

}  // namespace testutil
