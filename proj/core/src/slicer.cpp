#include "layermon/slicer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"

namespace layermon {

namespace {

constexpr double kWeldTol = 1e-6;       // mm; STL duplicates vertices per facet
constexpr double kVertexSnapTol = 1e-9; // plane-vs-vertex proximity that triggers a nudge
constexpr double kPlaneNudge = 1e-7;

double tri_area_sq(const Triangle& t) {
  const double ux = t[1].x - t[0].x, uy = t[1].y - t[0].y, uz = t[1].z - t[0].z;
  const double vx = t[2].x - t[0].x, vy = t[2].y - t[0].y, vz = t[2].z - t[0].z;
  const double cx = uy * vz - uz * vy;
  const double cy = uz * vx - ux * vz;
  const double cz = ux * vy - uy * vx;
  return 0.25 * (cx * cx + cy * cy + cz * cz);
}

bool finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

TriMesh finalize_mesh(std::vector<Triangle> tris) {
  TriMesh mesh;
  mesh.bounds.min = {1e300, 1e300, 1e300};
  mesh.bounds.max = {-1e300, -1e300, -1e300};
  for (auto& t : tris) {
    if (!finite(t[0]) || !finite(t[1]) || !finite(t[2]))
      throw IoError("STL contains non-finite vertex coordinates");
    if (tri_area_sq(t) < 1e-24) {
      ++mesh.degenerate_dropped;
      continue;
    }
    for (const auto& v : t) {
      mesh.bounds.min.x = std::min(mesh.bounds.min.x, v.x);
      mesh.bounds.min.y = std::min(mesh.bounds.min.y, v.y);
      mesh.bounds.min.z = std::min(mesh.bounds.min.z, v.z);
      mesh.bounds.max.x = std::max(mesh.bounds.max.x, v.x);
      mesh.bounds.max.y = std::max(mesh.bounds.max.y, v.y);
      mesh.bounds.max.z = std::max(mesh.bounds.max.z, v.z);
    }
    mesh.triangles.push_back(t);
  }
  if (mesh.triangles.empty()) throw IoError("STL has zero triangles after degeneracy filtering");
  return mesh;
}

float read_f32le(const std::uint8_t* p) {
  float f;
  std::memcpy(&f, p, 4);
  return f;
}

TriMesh parse_binary_stl(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 84) throw IoError("binary STL shorter than 84-byte preamble");
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 80, 4);
  const std::size_t expected = 84 + 50ull * count;
  if (bytes.size() != expected)
    throw IoError("binary STL length mismatch: header count " + std::to_string(count) +
                  " implies " + std::to_string(expected) + " bytes, file has " +
                  std::to_string(bytes.size()));
  std::vector<Triangle> tris;
  tris.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = bytes.data() + 84 + 50ull * i;
    Triangle t;
    for (int v = 0; v < 3; ++v) {
      const std::uint8_t* p = rec + 12 + 12 * v;  // skip stored normal
      t[static_cast<std::size_t>(v)] = {read_f32le(p), read_f32le(p + 4), read_f32le(p + 8)};
    }
    tris.push_back(t);
  }
  return finalize_mesh(std::move(tris));
}

TriMesh parse_ascii_stl(std::span<const std::uint8_t> bytes) {
  std::string text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::istringstream in(text);
  std::string tok;

  auto expect = [&](const char* want) {
    if (!(in >> tok) || tok != want)
      throw IoError(std::string("malformed ASCII STL: expected '") + want + "', got '" + tok + "'");
  };
  auto number = [&]() -> double {
    if (!(in >> tok)) throw IoError("malformed ASCII STL: unexpected end of input");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw IoError("malformed ASCII STL: bad number '" + tok + "'");
    return v;
  };

  expect("solid");
  std::getline(in, tok);  // optional name, rest of line

  std::vector<Triangle> tris;
  while (in >> tok) {
    if (tok == "endsolid") break;
    if (tok != "facet")
      throw IoError("malformed ASCII STL: expected 'facet' or 'endsolid', got '" + tok + "'");
    expect("normal");
    number();
    number();
    number();  // stored normal ignored
    expect("outer");
    expect("loop");
    Triangle t;
    for (int v = 0; v < 3; ++v) {
      expect("vertex");
      t[static_cast<std::size_t>(v)] = {number(), number(), number()};
    }
    expect("endloop");
    expect("endfacet");
    tris.push_back(t);
  }
  return finalize_mesh(std::move(tris));
}

bool looks_ascii(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), "solid", 5) != 0) return false;
  // Binary writers sometimes put "solid" in the 80-byte header; require the
  // inspected prefix to be clean text.
  const std::size_t n = std::min<std::size_t>(bytes.size(), 1024);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t c = bytes[i];
    if (c != '\t' && c != '\n' && c != '\r' && (c < 0x20 || c > 0x7E)) return false;
  }
  return true;
}

}  // namespace

TriMesh parse_stl(std::span<const std::uint8_t> bytes) {
  if (looks_ascii(bytes)) return parse_ascii_stl(bytes);
  return parse_binary_stl(bytes);
}

TriMesh load_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open STL file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_stl(bytes);
}

namespace {

struct SegEnd {
  Vec2 p;
};

// Lexicographic vertex order so edge-plane intersections are computed from a
// canonical endpoint pair: shared edges of adjacent facets then produce
// bit-identical crossing points regardless of triangle order or winding.
bool vec3_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

Vec2 edge_plane_point(Vec3 a, Vec3 b, double z) {
  if (vec3_less(b, a)) std::swap(a, b);
  const double t = (z - a.z) / (b.z - a.z);
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

struct NodeIndex {
  // Grid hash with cell size = weld tolerance; a query checks the 3x3
  // neighbourhood for an existing node within tolerance (max-norm).
  std::unordered_map<std::uint64_t, std::vector<int>> cells;
  std::vector<Vec2> points;

  static std::uint64_t key(long long cx, long long cy) {
    return static_cast<std::uint64_t>(cx) * 0x9E3779B97F4A7C15ULL ^
           static_cast<std::uint64_t>(cy);
  }

  int find_or_add(const Vec2& p) {
    const auto cx = static_cast<long long>(std::floor(p.x / kWeldTol));
    const auto cy = static_cast<long long>(std::floor(p.y / kWeldTol));
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = cells.find(key(cx + dx, cy + dy));
        if (it == cells.end()) continue;
        for (int id : it->second) {
          const Vec2& q = points[static_cast<std::size_t>(id)];
          if (std::abs(q.x - p.x) <= kWeldTol && std::abs(q.y - p.y) <= kWeldTol) return id;
        }
      }
    }
    const int id = static_cast<int>(points.size());
    points.push_back(p);
    cells[key(cx, cy)].push_back(id);
    return id;
  }
};

bool vec2_less(const Vec2& a, const Vec2& b) {
  if (a.x != b.x) return a.x < b.x;
  return a.y < b.y;
}

// Even-odd test of point p against contour c (p assumed off the edges).
bool point_in_contour(const Vec2& p, const Contour& c) {
  bool inside = false;
  const std::size_t n = c.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = c.points[i];
    const Vec2& b = c.points[(i + 1) % n];
    if ((a.y <= p.y) != (b.y <= p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

void canonicalize(Contour& c) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.points.size(); ++i)
    if (vec2_less(c.points[i], c.points[best])) best = i;
  std::rotate(c.points.begin(), c.points.begin() + static_cast<std::ptrdiff_t>(best),
              c.points.end());
}

/// Removes vertices that continue the previous edge in a straight line.
/// Coplanar triangle fans (a cube face split along its diagonal, say) leave
/// such points where the plane crosses the shared edge.
void drop_collinear(std::vector<Vec2>& pts) {
  const std::size_t n = pts.size();
  if (n < 4) return;
  std::vector<Vec2> kept;
  kept.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& prev = pts[(i + n - 1) % n];
    const Vec2& cur = pts[i];
    const Vec2& next = pts[(i + 1) % n];
    const double ax = cur.x - prev.x, ay = cur.y - prev.y;
    const double bx = next.x - cur.x, by = next.y - cur.y;
    const double cross = ax * by - ay * bx;
    const double dot = ax * bx + ay * by;
    const double scale =
        std::sqrt((ax * ax + ay * ay) * (bx * bx + by * by));
    const bool straight = dot > 0.0 && std::abs(cross) <= 1e-12 * scale;
    if (!straight) kept.push_back(cur);
  }
  if (kept.size() >= 3) pts = std::move(kept);
}

}  // namespace

std::vector<Contour> slice_mesh(const TriMesh& mesh, double z) {
  if (!(z > mesh.bounds.min.z && z < mesh.bounds.max.z))
    throw ValidationError("slice plane z=" + std::to_string(z) +
                          " not strictly inside mesh z-range");

  // Nudge the plane off any vertex; repeat in case the nudged plane lands on
  // another vertex (bounded, then give up).
  for (int attempt = 0; attempt < 64; ++attempt) {
    bool clear = true;
    for (const auto& t : mesh.triangles) {
      for (const auto& v : t) {
        if (std::abs(v.z - z) < kVertexSnapTol) {
          clear = false;
          break;
        }
      }
      if (!clear) break;
    }
    if (clear) break;
    z += kPlaneNudge;
  }

  NodeIndex nodes;
  std::vector<std::pair<int, int>> segments;
  for (const auto& t : mesh.triangles) {
    const double d0 = t[0].z - z;
    const double d1 = t[1].z - z;
    const double d2 = t[2].z - z;
    const bool p0 = d0 > 0, p1 = d1 > 0, p2 = d2 > 0;
    if (p0 == p1 && p1 == p2) continue;

    Vec2 hits[2];
    int nh = 0;
    if (p0 != p1) hits[nh++] = edge_plane_point(t[0], t[1], z);
    if (p1 != p2) hits[nh++] = edge_plane_point(t[1], t[2], z);
    if (p0 != p2 && nh < 2) hits[nh++] = edge_plane_point(t[0], t[2], z);

    const int u = nodes.find_or_add(hits[0]);
    const int v = nodes.find_or_add(hits[1]);
    if (u != v) segments.emplace_back(u, v);
  }

  // Chain segments into loops.
  std::vector<std::vector<std::pair<int, int>>> adjacency(nodes.points.size());  // (node, seg id)
  for (std::size_t s = 0; s < segments.size(); ++s) {
    adjacency[static_cast<std::size_t>(segments[s].first)].emplace_back(segments[s].second,
                                                                        static_cast<int>(s));
    adjacency[static_cast<std::size_t>(segments[s].second)].emplace_back(segments[s].first,
                                                                         static_cast<int>(s));
  }

  std::vector<bool> used(segments.size(), false);
  std::vector<Contour> contours;
  for (std::size_t s0 = 0; s0 < segments.size(); ++s0) {
    if (used[s0]) continue;
    used[s0] = true;
    const int start = segments[s0].first;
    int current = segments[s0].second;
    std::vector<int> loop{start, current};
    while (current != start) {
      bool advanced = false;
      for (const auto& [next, seg] : adjacency[static_cast<std::size_t>(current)]) {
        if (used[static_cast<std::size_t>(seg)]) continue;
        used[static_cast<std::size_t>(seg)] = true;
        current = next;
        loop.push_back(current);
        advanced = true;
        break;
      }
      if (!advanced)
        throw ValidationError("unclosable contour chain at z=" + std::to_string(z) +
                              ": mesh is not watertight");
    }
    loop.pop_back();  // closure is implicit

    Contour c;
    c.points.reserve(loop.size());
    for (int id : loop) c.points.push_back(nodes.points[static_cast<std::size_t>(id)]);
    drop_collinear(c.points);
    if (c.points.size() >= 3) contours.push_back(std::move(c));
  }

  // Orientation from containment depth: even depth -> CCW, odd -> CW.
  for (std::size_t i = 0; i < contours.size(); ++i) {
    int depth = 0;
    for (std::size_t j = 0; j < contours.size(); ++j) {
      if (i == j) continue;
      if (point_in_contour(contours[i].points[0], contours[j])) ++depth;
    }
    const bool want_ccw = (depth % 2) == 0;
    if ((contour_area(contours[i]) > 0.0) != want_ccw)
      std::reverse(contours[i].points.begin(), contours[i].points.end());
  }

  for (auto& c : contours) canonicalize(c);
  std::sort(contours.begin(), contours.end(),
            [](const Contour& a, const Contour& b) { return vec2_less(a.points[0], b.points[0]); });
  return contours;
}

SliceStack slice_job(const TriMesh& mesh, double layer_height) {
  if (!(layer_height > 0.0)) throw ValidationError("layer height must be positive");
  const double range = mesh.bounds.max.z - mesh.bounds.min.z;
  const auto count = static_cast<long>(std::floor(range / layer_height + 1e-9));
  if (count < 1)
    throw ValidationError("layer height " + std::to_string(layer_height) +
                          " produces no layers over z-range " + std::to_string(range));
  SliceStack stack;
  stack.layer_height = layer_height;
  stack.layers.reserve(static_cast<std::size_t>(count));
  for (long k = 0; k < count; ++k) {
    const double z = mesh.bounds.min.z + (static_cast<double>(k) + 0.5) * layer_height;
    stack.layers.push_back(SliceLayer{z, slice_mesh(mesh, z)});
  }
  return stack;
}

double contour_area(const Contour& c) {
  double twice = 0.0;
  const std::size_t n = c.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = c.points[i];
    const Vec2& b = c.points[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

namespace {

std::string fmt_coord(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

double parse_double_attr(const std::string& svg, const std::string& attr) {
  const std::string needle = attr + "=\"";
  const auto pos = svg.find(needle);
  if (pos == std::string::npos) throw IoError("layer SVG missing attribute " + attr);
  return std::strtod(svg.c_str() + pos + needle.size(), nullptr);
}

}  // namespace

std::string emit_layer_svg(const SliceLayer& layer, const Aabb& bounds, double scale) {
  const double w = (bounds.max.x - bounds.min.x) * scale;
  const double h = (bounds.max.y - bounds.min.y) * scale;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::ceil(w) << "\" height=\""
      << std::ceil(h) << "\" data-z=\"" << fmt_coord(layer.z) << "\" data-min-x=\""
      << fmt_coord(bounds.min.x) << "\" data-min-y=\"" << fmt_coord(bounds.min.y)
      << "\" data-scale=\"" << fmt_coord(scale) << "\">\n";
  for (const auto& c : layer.contours) {
    out << "  <path fill-rule=\"evenodd\" d=\"";
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      const double sx = (c.points[i].x - bounds.min.x) * scale;
      const double sy = (c.points[i].y - bounds.min.y) * scale;
      out << (i == 0 ? "M " : "L ") << fmt_coord(sx) << ',' << fmt_coord(sy) << ' ';
    }
    out << "Z\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::vector<Contour> read_layer_svg(const std::string& svg) {
  const double min_x = parse_double_attr(svg, "data-min-x");
  const double min_y = parse_double_attr(svg, "data-min-y");
  const double scale = parse_double_attr(svg, "data-scale");

  std::vector<Contour> contours;
  std::size_t pos = 0;
  while ((pos = svg.find(" d=\"", pos)) != std::string::npos) {
    pos += 4;
    const auto end = svg.find('"', pos);
    if (end == std::string::npos) throw IoError("layer SVG: unterminated path data");
    std::istringstream d(svg.substr(pos, end - pos));
    Contour c;
    std::string tok;
    while (d >> tok) {
      if (tok == "M" || tok == "L") {
        double sx, sy;
        char comma;
        if (!(d >> sx >> comma >> sy) || comma != ',')
          throw IoError("layer SVG: malformed path coordinate");
        c.points.push_back({sx / scale + min_x, sy / scale + min_y});
      } else if (tok == "Z") {
        break;
      } else {
        throw IoError("layer SVG: unsupported path command '" + tok + "'");
      }
    }
    if (!c.points.empty()) contours.push_back(std::move(c));
    pos = end;
  }
  return contours;
}

void write_slice_artifacts(const SliceStack& stack, const Aabb& bounds, double scale,
                           const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create slice output directory " + out_dir.string());

  nlohmann::json index;
  index["layer_height"] = stack.layer_height;
  auto& zs = index["z_values"] = nlohmann::json::array();
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "layer_%04zu.svg", i);
    std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (out_dir / name).string());
    out << emit_layer_svg(stack.layers[i], bounds, scale);
    zs.push_back(stack.layers[i].z);
  }
  std::ofstream idx(out_dir / "stack_index.json", std::ios::binary | std::ios::trunc);
  if (!idx) throw IoError("cannot write stack index in " + out_dir.string());
  idx << index.dump(2) << '\n';
}

}  // namespace layermon
