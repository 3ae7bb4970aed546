#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cathnav/common.hpp"

namespace cathnav {

using Triangle = std::array<std::uint32_t, 3>;

/// Indexed triangle surface. Triangles are wound so that face normals point
/// out of the vessel lumen.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
};

/// Wavefront OBJ subset: `v x y z` and `f a b c` (1-based, `a/b/c` tokens and
/// negative indices accepted, polygons fan-triangulated). Other records are
/// ignored.
TriangleMesh parse_obj(const std::string& text);
TriangleMesh load_obj(const std::filesystem::path& path);
void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Open tube along +y starting at the origin.
TriangleMesh make_straight_tube(double radius, double length, int segments, int rings);

/// Open tube swept along a circular arc in the x-y plane. The arc starts at
/// the origin heading +y and bends toward +x about the center (sweep_radius, 0, 0).
TriangleMesh make_curved_tube(double radius, double sweep_radius, double sweep_angle, int segments,
                              int rings);

/// Boundary loops (edges used by exactly one triangle), each as an ordered
/// vertex cycle. Throws ConfigError for non-manifold boundaries.
std::vector<std::vector<std::uint32_t>> boundary_loops(const TriangleMesh& mesh);

struct RayHit {
  double distance;
  std::uint32_t triangle;
};

struct SurfacePoint {
  Vec3 point;
  std::uint32_t triangle;
  Vec3 barycentric;  // weights of the triangle's three vertices
  double distance;
};

std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                   const Vec3& c);

/// Closest point on triangle abc to p. `barycentric` may be null.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric);

/// Bounding volume hierarchy over a fixed triangle topology whose vertex
/// positions may move. Call `refit` after positions change; the tree shape
/// is kept from the build.
class TriangleBvh {
 public:
  TriangleBvh() = default;
  TriangleBvh(std::span<const Vec3> positions, std::span<const Triangle> triangles);

  void refit(std::span<const Vec3> positions);

  std::optional<RayHit> raycast(std::span<const Vec3> positions, const Vec3& origin, const Vec3& dir,
                                double max_len) const;

  /// Nearest surface point, or nullopt when none lies within `max_dist`.
  std::optional<SurfacePoint> closest_point(std::span<const Vec3> positions, const Vec3& p,
                                            double max_dist) const;

  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    std::uint32_t left = 0;   // left child, or first triangle slot for leaves
    std::uint32_t right = 0;  // right child (inner nodes only)
    std::uint32_t count = 0;  // number of triangles for leaves, 0 for inner nodes
  };

  std::uint32_t build_node(std::span<const Vec3> positions, std::uint32_t begin, std::uint32_t end);
  Eigen::AlignedBox3d triangle_box(std::span<const Vec3> positions, std::uint32_t tri) const;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<Triangle> triangles_;
};

}  // namespace cathnav
