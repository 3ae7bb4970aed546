#include "cathnav/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

namespace cathnav {

namespace {

long parse_index_token(const std::string& token, std::size_t vertex_count, std::size_t line_no) {
  const std::string head = token.substr(0, token.find('/'));
  long idx = 0;
  auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
  if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0) {
    throw ConfigError("obj line " + std::to_string(line_no) + ": bad face index '" + token + "'");
  }
  long zero_based = idx > 0 ? idx - 1 : static_cast<long>(vertex_count) + idx;
  if (zero_based < 0 || zero_based >= static_cast<long>(vertex_count)) {
    throw ConfigError("obj line " + std::to_string(line_no) + ": face index out of range");
  }
  return zero_based;
}

}  // namespace

TriangleMesh parse_obj(const std::string& text) {
  TriangleMesh mesh;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) {
        throw ConfigError("obj line " + std::to_string(line_no) + ": malformed vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<long> poly;
      std::string tok;
      while (ls >> tok) poly.push_back(parse_index_token(tok, mesh.vertices.size(), line_no));
      if (poly.size() < 3) throw ConfigError("obj line " + std::to_string(line_no) + ": face with < 3 vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        mesh.triangles.push_back({static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
                                  static_cast<std::uint32_t>(poly[k + 1])});
      }
    }
  }
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mesh file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_obj(ss.str());
}

void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write mesh file: " + path.string());
  out << "# cathnav vessel mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
      << " triangles\n";
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

namespace {

// Ring k, segment i -> vertex index.
void stitch_rings(TriangleMesh& mesh, int segments, int rings) {
  auto idx = [segments](int k, int i) { return static_cast<std::uint32_t>(k * segments + (i % segments)); };
  for (int k = 0; k < rings; ++k) {
    for (int i = 0; i < segments; ++i) {
      mesh.triangles.push_back({idx(k, i), idx(k, i + 1), idx(k + 1, i)});
      mesh.triangles.push_back({idx(k, i + 1), idx(k + 1, i + 1), idx(k + 1, i)});
    }
  }
}

}  // namespace

TriangleMesh make_straight_tube(double radius, double length, int segments, int rings) {
  if (radius <= 0 || length <= 0 || segments < 3 || rings < 1) throw ConfigError("make_straight_tube: bad parameters");
  TriangleMesh mesh;
  for (int k = 0; k <= rings; ++k) {
    const double y = length * k / rings;
    for (int i = 0; i < segments; ++i) {
      const double th = 2.0 * kPi * i / segments;
      mesh.vertices.emplace_back(radius * std::sin(th), y, radius * std::cos(th));
    }
  }
  stitch_rings(mesh, segments, rings);
  return mesh;
}

TriangleMesh make_curved_tube(double radius, double sweep_radius, double sweep_angle, int segments,
                              int rings) {
  if (radius <= 0 || sweep_radius <= radius || sweep_angle <= 0 || segments < 3 || rings < 1) {
    throw ConfigError("make_curved_tube: bad parameters");
  }
  TriangleMesh mesh;
  for (int k = 0; k <= rings; ++k) {
    const double phi = sweep_angle * k / rings;
    const Vec3 center(sweep_radius * (1.0 - std::cos(phi)), sweep_radius * std::sin(phi), 0.0);
    const Vec3 n1 = Vec3::UnitZ();
    const Vec3 n2(std::cos(phi), -std::sin(phi), 0.0);
    for (int i = 0; i < segments; ++i) {
      const double th = 2.0 * kPi * i / segments;
      mesh.vertices.push_back(center + radius * (std::cos(th) * n1 + std::sin(th) * n2));
    }
  }
  stitch_rings(mesh, segments, rings);
  return mesh;
}

std::vector<std::vector<std::uint32_t>> boundary_loops(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> undirected;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      undirected[{std::min(a, b), std::max(a, b)}]++;
    }
  }
  std::unordered_map<std::uint32_t, std::uint32_t> next;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      const int uses = undirected[{std::min(a, b), std::max(a, b)}];
      if (uses > 2) throw ConfigError("mesh has an edge shared by more than two triangles");
      if (uses == 1) {
        if (next.count(a)) throw ConfigError("mesh boundary is non-manifold at vertex " + std::to_string(a));
        next[a] = b;
      }
    }
  }
  std::vector<std::vector<std::uint32_t>> loops;
  std::vector<std::uint32_t> starts;
  for (const auto& [a, b] : next) starts.push_back(a);
  std::sort(starts.begin(), starts.end());
  std::unordered_map<std::uint32_t, bool> used;
  for (auto s : starts) {
    if (used[s]) continue;
    std::vector<std::uint32_t> loop;
    std::uint32_t v = s;
    while (!used[v]) {
      used[v] = true;
      loop.push_back(v);
      auto it = next.find(v);
      if (it == next.end()) throw ConfigError("mesh boundary is not closed");
      v = it->second;
    }
    if (v != s) throw ConfigError("mesh boundary is not a simple loop");
    loops.push_back(std::move(loop));
  }
  return loops;
}

std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                   const Vec3& c) {
  constexpr double kEps = 1e-12;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < kEps) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t < 0.0) return std::nullopt;
  return t;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric) {
  Vec3 scratch;
  Vec3* bary = barycentric ? barycentric : &scratch;
  // Voronoi-region walk over vertices, edges, and the face.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) {
    *bary = {1, 0, 0};
    return a;
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) {
    *bary = {0, 1, 0};
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    *bary = {1 - v, v, 0};
    return a + v * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) {
    *bary = {0, 0, 1};
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    *bary = {1 - w, 0, w};
    return a + w * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    *bary = {0, 1 - w, w};
    return b + w * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  *bary = {1 - v - w, v, w};
  return a + ab * v + ac * w;
}

TriangleBvh::TriangleBvh(std::span<const Vec3> positions, std::span<const Triangle> triangles)
    : triangles_(triangles.begin(), triangles.end()) {
  order_.resize(triangles_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!triangles_.empty()) {
    nodes_.reserve(2 * triangles_.size());
    build_node(positions, 0, static_cast<std::uint32_t>(order_.size()));
  }
}

Eigen::AlignedBox3d TriangleBvh::triangle_box(std::span<const Vec3> positions, std::uint32_t tri) const {
  Eigen::AlignedBox3d box;
  for (auto v : triangles_[tri]) box.extend(positions[v]);
  return box;
}

std::uint32_t TriangleBvh::build_node(std::span<const Vec3> positions, std::uint32_t begin,
                                      std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box, centroids;
  for (auto i = begin; i < end; ++i) {
    const auto tb = triangle_box(positions, order_[i]);
    box.extend(tb);
    centroids.extend(tb.center());
  }
  nodes_[id].box = box;
  constexpr std::uint32_t kLeafSize = 4;
  if (end - begin <= kLeafSize) {
    nodes_[id].left = begin;
    nodes_[id].count = end - begin;
    return id;
  }
  int axis = 0;
  centroids.sizes().maxCoeff(&axis);
  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = triangle_box(positions, a).center()[axis];
                     const double cb = triangle_box(positions, b).center()[axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const auto left = build_node(positions, begin, mid);
  const auto right = build_node(positions, mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].count = 0;
  return id;
}

void TriangleBvh::refit(std::span<const Vec3> positions) {
  // Children always carry larger indices than their parent.
  for (std::size_t n = nodes_.size(); n-- > 0;) {
    Node& node = nodes_[n];
    node.box.setEmpty();
    if (node.count > 0) {
      for (auto i = node.left; i < node.left + node.count; ++i) node.box.extend(triangle_box(positions, order_[i]));
    } else {
      node.box.extend(nodes_[node.left].box);
      node.box.extend(nodes_[node.right].box);
    }
  }
}

namespace {

bool ray_box(const Eigen::AlignedBox3d& box, const Vec3& origin, const Vec3& inv_dir, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double tn = (box.min()[a] - origin[a]) * inv_dir[a];
    double tf = (box.max()[a] - origin[a]) * inv_dir[a];
    if (tn > tf) std::swap(tn, tf);
    if (std::isnan(tn) || std::isnan(tf)) {
      // Ray parallel to the slab and exactly on a boundary plane: treat as inside.
      continue;
    }
    t0 = std::max(t0, tn);
    t1 = std::min(t1, tf);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

std::optional<RayHit> TriangleBvh::raycast(std::span<const Vec3> positions, const Vec3& origin,
                                           const Vec3& dir, double max_len) const {
  if (nodes_.empty()) return std::nullopt;
  const Vec3 inv_dir(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
  std::optional<RayHit> best;
  double best_t = max_len;
  std::uint32_t stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (!ray_box(node.box, origin, inv_dir, best_t)) continue;
    if (node.count > 0) {
      for (auto i = node.left; i < node.left + node.count; ++i) {
        const auto tri = order_[i];
        const auto& t = triangles_[tri];
        auto hit = ray_triangle(origin, dir, positions[t[0]], positions[t[1]], positions[t[2]]);
        if (hit && *hit <= best_t && (!best || *hit < best->distance || (*hit == best->distance && tri < best->triangle))) {
          best_t = *hit;
          best = RayHit{*hit, tri};
        }
      }
    } else {
      stack[sp++] = node.right;
      stack[sp++] = node.left;
    }
  }
  return best;
}

std::optional<SurfacePoint> TriangleBvh::closest_point(std::span<const Vec3> positions, const Vec3& p,
                                                       double max_dist) const {
  if (nodes_.empty()) return std::nullopt;
  std::optional<SurfacePoint> best;
  double best_d2 = max_dist * max_dist;
  std::uint32_t stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (node.box.squaredExteriorDistance(p) > best_d2) continue;
    if (node.count > 0) {
      for (auto i = node.left; i < node.left + node.count; ++i) {
        const auto tri = order_[i];
        const auto& t = triangles_[tri];
        Vec3 bary;
        const Vec3 q = closest_point_on_triangle(p, positions[t[0]], positions[t[1]], positions[t[2]], &bary);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best_d2 || (best && d2 == best_d2 && tri < best->triangle)) {
          best_d2 = d2;
          best = SurfacePoint{q, tri, bary, std::sqrt(d2)};
        }
      }
    } else {
      const Node& l = nodes_[node.left];
      const Node& r = nodes_[node.right];
      // Visit the nearer child first.
      if (l.box.squaredExteriorDistance(p) < r.box.squaredExteriorDistance(p)) {
        stack[sp++] = node.right;
        stack[sp++] = node.left;
      } else {
        stack[sp++] = node.left;
        stack[sp++] = node.right;
      }
    }
  }
  return best;
}

}  // namespace cathnav
