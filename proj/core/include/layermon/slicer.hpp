#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace layermon {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

using Triangle = std::array<Vec3, 3>;

struct Aabb {
  Vec3 min;
  Vec3 max;
};

/// Triangle soup in mm. Stored facet normals are discarded on parse; zero-area
/// facets are dropped and counted.
struct TriMesh {
  std::vector<Triangle> triangles;
  Aabb bounds;
  int degenerate_dropped = 0;
};

/// Closed polyline in the slice plane, implicit closure (first point not
/// repeated). Outer boundaries are counter-clockwise, holes clockwise; fill
/// resolution downstream is by the even-odd rule.
struct Contour {
  std::vector<Vec2> points;
};

struct SliceLayer {
  double z = 0.0;
  std::vector<Contour> contours;
};

struct SliceStack {
  double layer_height = 0.0;
  std::vector<SliceLayer> layers;
};

/// Parses ASCII ("solid" + facet grammar) or binary (80-byte header, u32
/// count, 50-byte records) STL from a byte buffer.
TriMesh parse_stl(std::span<const std::uint8_t> bytes);
TriMesh load_stl(const std::filesystem::path& path);

/// Cross-section at height z (strictly inside the mesh z-range). Segments are
/// chained into closed loops by endpoint welding (1e-6 mm); an unclosable
/// chain signals a non-watertight mesh. Planes within 1e-9 of any vertex z
/// are nudged by +1e-7 before slicing.
std::vector<Contour> slice_mesh(const TriMesh& mesh, double z);

/// Slices at mid-layer planes z_min + (k + 0.5) * layer_height. Layers with no
/// intersection are kept as empty layers.
SliceStack slice_job(const TriMesh& mesh, double layer_height);

/// Shoelace signed area; positive for counter-clockwise.
double contour_area(const Contour& c);

/// Minimal SVG for one layer: one evenodd path per contour, canvas sized from
/// the mesh bounds at `scale` px/mm. Emitted metadata (data-* attributes)
/// lets read_layer_svg recover model coordinates exactly.
std::string emit_layer_svg(const SliceLayer& layer, const Aabb& bounds, double scale);

/// Parses the path elements of an emit_layer_svg document back to contours in
/// model (mm) coordinates.
std::vector<Contour> read_layer_svg(const std::string& svg);

/// Writes layer_%04d.svg files plus an index JSON {layer_height, z_values[]}.
void write_slice_artifacts(const SliceStack& stack, const Aabb& bounds, double scale,
                           const std::filesystem::path& out_dir);

}  // namespace layermon
