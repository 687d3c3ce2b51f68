// Multi-resolution hash encoding with optional per-level rotations.

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "psflab/kernel_math.hpp"

namespace psflab {

enum class Polyhedron { kTetra, kCube, kOcta, kIcosa };

struct RotationStrategy {
  enum class Kind { kIdentity, kProgressive2d, kPolyhedral3d };

  Kind kind = Kind::kIdentity;
  int m = 1;                        // progressive2d: base angle 90 deg / m
  Polyhedron solid = Polyhedron::kTetra;  // polyhedral3d

  static RotationStrategy identity() { return {}; }
  static RotationStrategy progressive(int m) { return {Kind::kProgressive2d, m, Polyhedron::kTetra}; }
  static RotationStrategy polyhedral(Polyhedron s) { return {Kind::kPolyhedral3d, 1, s}; }

  std::string name() const;
};

Polyhedron parse_polyhedron(const std::string& name);
std::string polyhedron_name(Polyhedron p);

struct EncodingConfig {
  int dim = 2;
  int levels = 16;
  double n_min = 16.0;
  double growth = 1.5;
  std::uint32_t table_size = 1u << 19;
  int features = 2;
  RotationStrategy rotation;
  std::uint64_t seed = 0;

  void validate() const;
  LevelSchedule schedule() const { return {levels, n_min, growth}; }
  int encoded_width() const { return levels * features; }
};

/// Dense row-major D x D orthogonal matrix, D <= 3.
struct Rotation {
  int dim = 2;
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Rotation identity(int dim);
  static Rotation planar(double radians);
  double at(int r, int c) const { return m[r * dim + c]; }
  void apply(std::span<const double> in, std::span<double> out) const;
  double orthogonality_error() const;  // max |R^T R - I|
  double determinant() const;
};

inline constexpr int kMaxDim = 3;
inline constexpr int kMaxCorners = 1 << kMaxDim;

using Vertex = std::array<std::int64_t, kMaxDim>;

/// Instant-NGP style spatial hash: XOR of coordinate * prime, modulo T.
std::uint32_t spatial_hash(std::span<const std::int64_t> vertex, std::uint32_t table_size);

std::vector<Rotation> make_rotations(const RotationStrategy& strategy, int dim, int levels);

/// Normalized canonical directions of the solid, in cycling order.
std::vector<std::array<double, 3>> polyhedron_directions(Polyhedron p);

struct Corner {
  Vertex vertex{};
  double weight = 0.0;
};

struct CornerSet {
  int count = 0;
  std::array<Corner, kMaxCorners> corners;
  std::span<const Corner> view() const { return {corners.data(), static_cast<std::size_t>(count)}; }
};

/// Multilinear interpolation corners around a point already scaled to grid units.
CornerSet corner_weights(std::span<const double> x_scaled);

struct SupportEntry {
  int level = 0;
  std::uint32_t index = 0;  // table row
  int feature = 0;
  double weight = 0.0;
};

struct LevelAudit {
  int level = 0;
  double resolution = 0.0;
  std::uint64_t vertex_count = 0;
  double load_factor = 0.0;
  double colliding_fraction = 0.0;
};

struct CollisionAudit {
  std::vector<LevelAudit> levels;
  /// Vertex-weighted colliding fraction over all levels.
  double colliding_fraction() const;
  /// Touched vertices over total capacity L * T.
  double load_factor() const;
};

class HashGrid {
 public:
  /// Builds the grid and fills the tables uniformly in [-1e-4, 1e-4] from config.seed.
  explicit HashGrid(const EncodingConfig& config);

  const EncodingConfig& config() const { return config_; }
  const std::vector<double>& resolutions() const { return resolutions_; }
  const std::vector<Rotation>& rotations() const { return rotations_; }

  /// Flat table storage: level-major, then row, then feature.
  std::span<double> tables() { return tables_; }
  std::span<const double> tables() const { return tables_; }
  std::size_t flat_index(int level, std::uint32_t row, int feature) const {
    return (static_cast<std::size_t>(level) * config_.table_size + row) * config_.features + feature;
  }

  /// Grid-unit position of x at a level, after rotation about the domain center.
  void level_position(int level, std::span<const double> x, std::span<double> out) const;

  /// Writes L * F features into out.
  void encode(std::span<const double> x, std::span<double> out) const;
  std::vector<double> encode(std::span<const double> x) const;

  /// Sparse linear map with encode(x)[l * F + f] = sum weight * table(l, index, f).
  std::vector<SupportEntry> encode_support(std::span<const double> x) const;

  /// Per-level corners and hashed rows at x; the callback form used by training.
  template <typename Fn>
  void for_each_corner(std::span<const double> x, Fn&& fn) const;

  void save(std::ostream& os) const;
  static HashGrid load(std::istream& is);

 private:
  EncodingConfig config_;
  std::vector<double> resolutions_;
  std::vector<Rotation> rotations_;
  std::vector<double> tables_;
};

template <typename Fn>
void HashGrid::for_each_corner(std::span<const double> x, Fn&& fn) const {
  std::array<double, kMaxDim> pos{};
  const std::span<double> p(pos.data(), config_.dim);
  for (int l = 0; l < config_.levels; ++l) {
    level_position(l, x, p);
    const CornerSet cs = corner_weights(p);
    for (int c = 0; c < cs.count; ++c) {
      const Corner& corner = cs.corners[c];
      const std::uint32_t row = spatial_hash(
          std::span<const std::int64_t>(corner.vertex.data(), config_.dim), config_.table_size);
      fn(l, row, corner.weight);
    }
  }
}

struct AuditOptions {
  std::uint64_t vertex_budget = 50'000'000;
};

/// Enumerates every grid vertex the unit domain touches per level and counts
/// bucket sharing. Throws std::length_error past the vertex budget.
CollisionAudit audit_collisions(const EncodingConfig& config, const AuditOptions& options = {});

}  // namespace psflab
