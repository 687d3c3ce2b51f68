#include "psflab/hash_encoding.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

namespace psflab {

namespace {

constexpr std::array<std::uint32_t, kMaxDim> kPrimes{1u, 2654435761u, 805459861u};
constexpr char kMagic[8] = {'P', 'S', 'F', 'H', 'G', 'R', 'I', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw std::runtime_error("hash grid stream truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::array<double, 3> normalized(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Rotation whose first column is `d`, completed to a right-handed frame.
Rotation frame_from_direction(const std::array<double, 3>& d) {
  std::array<double, 3> helper{0.0, 0.0, 1.0};
  if (std::abs(d[2]) > 0.9) helper = {0.0, 1.0, 0.0};
  const double dot = helper[0] * d[0] + helper[1] * d[1] + helper[2] * d[2];
  const auto u = normalized({helper[0] - dot * d[0], helper[1] - dot * d[1], helper[2] - dot * d[2]});
  const std::array<double, 3> w{d[1] * u[2] - d[2] * u[1], d[2] * u[0] - d[0] * u[2],
                                d[0] * u[1] - d[1] * u[0]};
  Rotation r;
  r.dim = 3;
  for (int i = 0; i < 3; ++i) {
    r.m[i * 3 + 0] = d[i];
    r.m[i * 3 + 1] = u[i];
    r.m[i * 3 + 2] = w[i];
  }
  return r;
}

// Quarter turns are emitted with exact integer entries.
Rotation quarter_turns(int k) {
  static constexpr std::array<std::array<double, 2>, 4> kCosSin{
      {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}}};
  const auto [c, s] = kCosSin[((k % 4) + 4) % 4];
  Rotation r;
  r.dim = 2;
  r.m = {c, -s, s, c, 0, 0, 0, 0, 0};
  return r;
}

}  // namespace

std::string RotationStrategy::name() const {
  switch (kind) {
    case Kind::kIdentity:
      return "identity";
    case Kind::kProgressive2d:
      return "progressive2d(M=" + std::to_string(m) + ")";
    case Kind::kPolyhedral3d:
      return "polyhedral3d(" + polyhedron_name(solid) + ")";
  }
  return "?";
}

Polyhedron parse_polyhedron(const std::string& name) {
  if (name == "tetra") return Polyhedron::kTetra;
  if (name == "cube") return Polyhedron::kCube;
  if (name == "octa") return Polyhedron::kOcta;
  if (name == "icosa") return Polyhedron::kIcosa;
  throw std::invalid_argument("unknown polyhedron '" + name + "'");
}

std::string polyhedron_name(Polyhedron p) {
  switch (p) {
    case Polyhedron::kTetra: return "tetra";
    case Polyhedron::kCube: return "cube";
    case Polyhedron::kOcta: return "octa";
    case Polyhedron::kIcosa: return "icosa";
  }
  return "?";
}

void EncodingConfig::validate() const {
  if (dim != 2 && dim != 3) throw std::invalid_argument("dimension must be 2 or 3");
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (!(n_min > 0.0)) throw std::invalid_argument("n_min must be positive");
  if (levels > 1 && !(growth > 1.0))
    throw std::invalid_argument("growth factor must exceed 1 when levels > 1");
  if (table_size < 1) throw std::invalid_argument("table size must be >= 1");
  if (features < 1) throw std::invalid_argument("features must be >= 1");
  switch (rotation.kind) {
    case RotationStrategy::Kind::kIdentity:
      break;
    case RotationStrategy::Kind::kProgressive2d:
      if (dim != 2) throw std::invalid_argument("progressive2d rotation requires D = 2");
      if (rotation.m < 1) throw std::invalid_argument("rotation M must be >= 1");
      break;
    case RotationStrategy::Kind::kPolyhedral3d:
      if (dim != 3) throw std::invalid_argument("polyhedral3d rotation requires D = 3");
      break;
  }
}

Rotation Rotation::identity(int dim) {
  Rotation r;
  r.dim = dim;
  r.m.fill(0.0);
  for (int i = 0; i < dim; ++i) r.m[i * dim + i] = 1.0;
  return r;
}

Rotation Rotation::planar(double radians) {
  Rotation r;
  r.dim = 2;
  const double c = std::cos(radians), s = std::sin(radians);
  r.m = {c, -s, s, c, 0, 0, 0, 0, 0};
  return r;
}

void Rotation::apply(std::span<const double> in, std::span<double> out) const {
  for (int r = 0; r < dim; ++r) {
    double acc = 0.0;
    for (int c = 0; c < dim; ++c) acc += at(r, c) * in[c];
    out[r] = acc;
  }
}

double Rotation::orthogonality_error() const {
  double worst = 0.0;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (int k = 0; k < dim; ++k) acc += at(k, i) * at(k, j);
      worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

double Rotation::determinant() const {
  if (dim == 2) return at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0);
  return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
         at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
         at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

std::uint32_t spatial_hash(std::span<const std::int64_t> vertex, std::uint32_t table_size) {
  std::uint32_t h = 0;
  for (std::size_t d = 0; d < vertex.size(); ++d)
    h ^= static_cast<std::uint32_t>(vertex[d]) * kPrimes[d];
  return h % table_size;
}

std::vector<std::array<double, 3>> polyhedron_directions(Polyhedron p) {
  std::vector<std::array<double, 3>> raw;
  switch (p) {
    case Polyhedron::kTetra:
      raw = {{1, 1, 1}, {-1, -1, 1}, {-1, 1, -1}, {1, -1, -1}};
      break;
    case Polyhedron::kCube:
      for (double a : {-1.0, 1.0})
        for (double b : {-1.0, 1.0})
          for (double c : {-1.0, 1.0}) raw.push_back({a, b, c});
      break;
    case Polyhedron::kOcta:
      raw = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      break;
    case Polyhedron::kIcosa: {
      const double phi = std::numbers::phi;
      for (double s1 : {1.0, -1.0})
        for (double s2 : {1.0, -1.0}) raw.push_back({0, s1, s2 * phi});
      for (double s1 : {1.0, -1.0})
        for (double s2 : {1.0, -1.0}) raw.push_back({s1, s2 * phi, 0});
      for (double s1 : {1.0, -1.0})
        for (double s2 : {1.0, -1.0}) raw.push_back({s1 * phi, 0, s2});
      break;
    }
  }
  for (auto& v : raw) v = normalized(v);
  return raw;
}

std::vector<Rotation> make_rotations(const RotationStrategy& strategy, int dim, int levels) {
  std::vector<Rotation> out;
  out.reserve(levels);
  switch (strategy.kind) {
    case RotationStrategy::Kind::kIdentity:
      out.assign(levels, Rotation::identity(dim));
      break;
    case RotationStrategy::Kind::kProgressive2d:
      if (dim != 2) throw std::invalid_argument("progressive2d rotation requires D = 2");
      if (strategy.m < 1) throw std::invalid_argument("rotation M must be >= 1");
      for (int l = 0; l < levels; ++l) {
        if (l % strategy.m == 0) {
          out.push_back(quarter_turns(l / strategy.m));
        } else {
          out.push_back(Rotation::planar(l * (std::numbers::pi / 2.0) / strategy.m));
        }
      }
      break;
    case RotationStrategy::Kind::kPolyhedral3d: {
      if (dim != 3) throw std::invalid_argument("polyhedral3d rotation requires D = 3");
      const auto dirs = polyhedron_directions(strategy.solid);
      for (int l = 0; l < levels; ++l) out.push_back(frame_from_direction(dirs[l % dirs.size()]));
      break;
    }
  }
  return out;
}

CornerSet corner_weights(std::span<const double> x_scaled) {
  const int dim = static_cast<int>(x_scaled.size());
  std::array<std::int64_t, kMaxDim> base{};
  std::array<double, kMaxDim> frac{};
  for (int d = 0; d < dim; ++d) {
    const double f = std::floor(x_scaled[d]);
    base[d] = static_cast<std::int64_t>(f);
    frac[d] = x_scaled[d] - f;
  }
  CornerSet out;
  out.count = 1 << dim;
  for (int c = 0; c < out.count; ++c) {
    Corner& corner = out.corners[c];
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      const bool up = (c >> d) & 1;
      corner.vertex[d] = base[d] + (up ? 1 : 0);
      w *= up ? frac[d] : 1.0 - frac[d];
    }
    corner.weight = w;
  }
  return out;
}

double CollisionAudit::colliding_fraction() const {
  double colliding = 0.0, total = 0.0;
  for (const auto& l : levels) {
    colliding += l.colliding_fraction * static_cast<double>(l.vertex_count);
    total += static_cast<double>(l.vertex_count);
  }
  return total > 0.0 ? colliding / total : 0.0;
}

double CollisionAudit::load_factor() const {
  if (levels.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& l : levels) sum += l.load_factor;
  return sum / static_cast<double>(levels.size());
}

HashGrid::HashGrid(const EncodingConfig& config) : config_(config) {
  config_.validate();
  resolutions_ = config_.schedule().resolutions();
  rotations_ = make_rotations(config_.rotation, config_.dim, config_.levels);
  tables_.resize(static_cast<std::size_t>(config_.levels) * config_.table_size * config_.features);
  std::mt19937_64 rng(config_.seed);
  std::uniform_real_distribution<double> init(-1e-4, 1e-4);
  for (double& v : tables_) v = init(rng);
}

void HashGrid::level_position(int level, std::span<const double> x, std::span<double> out) const {
  const double n = resolutions_[level];
  if (config_.rotation.kind == RotationStrategy::Kind::kIdentity) {
    for (int d = 0; d < config_.dim; ++d) out[d] = n * x[d];
    return;
  }
  std::array<double, kMaxDim> centered{};
  for (int d = 0; d < config_.dim; ++d) centered[d] = x[d] - 0.5;
  rotations_[level].apply(std::span<const double>(centered.data(), config_.dim), out);
  for (int d = 0; d < config_.dim; ++d) out[d] = n * (out[d] + 0.5);
}

void HashGrid::encode(std::span<const double> x, std::span<double> out) const {
  const int nf = config_.features;
  std::fill(out.begin(), out.begin() + config_.encoded_width(), 0.0);
  for_each_corner(x, [&](int l, std::uint32_t row, double w) {
    const double* src = tables_.data() + flat_index(l, row, 0);
    double* dst = out.data() + l * nf;
    for (int f = 0; f < nf; ++f) dst[f] += w * src[f];
  });
}

std::vector<double> HashGrid::encode(std::span<const double> x) const {
  std::vector<double> out(config_.encoded_width());
  encode(x, out);
  return out;
}

std::vector<SupportEntry> HashGrid::encode_support(std::span<const double> x) const {
  std::vector<SupportEntry> out;
  out.reserve(static_cast<std::size_t>(config_.levels) * (1u << config_.dim) * config_.features);
  for_each_corner(x, [&](int l, std::uint32_t row, double w) {
    for (int f = 0; f < config_.features; ++f) out.push_back({l, row, f, w});
  });
  return out;
}

void HashGrid::save(std::ostream& os) const {
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kFormatVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config_.dim));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config_.levels));
  write_le<double>(os, config_.n_min);
  write_le<double>(os, config_.growth);
  write_le<std::uint32_t>(os, config_.table_size);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config_.features));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config_.rotation.kind));
  const std::uint32_t param = config_.rotation.kind == RotationStrategy::Kind::kPolyhedral3d
                                  ? static_cast<std::uint32_t>(config_.rotation.solid)
                                  : static_cast<std::uint32_t>(config_.rotation.m);
  write_le<std::uint32_t>(os, param);
  write_le<std::uint64_t>(os, config_.seed);
  for (double v : tables_) write_le<float>(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("failed writing hash grid");
}

HashGrid HashGrid::load(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic))
    throw std::runtime_error("not a hash grid stream (bad magic)");
  if (read_le<std::uint32_t>(is) != kFormatVersion)
    throw std::runtime_error("unsupported hash grid format version");
  EncodingConfig c;
  c.dim = static_cast<int>(read_le<std::uint32_t>(is));
  c.levels = static_cast<int>(read_le<std::uint32_t>(is));
  c.n_min = read_le<double>(is);
  c.growth = read_le<double>(is);
  c.table_size = read_le<std::uint32_t>(is);
  c.features = static_cast<int>(read_le<std::uint32_t>(is));
  const auto kind = read_le<std::uint32_t>(is);
  if (kind > 2) throw std::runtime_error("bad rotation kind in hash grid stream");
  c.rotation.kind = static_cast<RotationStrategy::Kind>(kind);
  const auto param = read_le<std::uint32_t>(is);
  if (c.rotation.kind == RotationStrategy::Kind::kPolyhedral3d) {
    if (param > 3) throw std::runtime_error("bad polyhedron in hash grid stream");
    c.rotation.solid = static_cast<Polyhedron>(param);
  } else {
    c.rotation.m = static_cast<int>(param);
  }
  c.seed = read_le<std::uint64_t>(is);
  HashGrid grid(c);
  for (double& v : grid.tables_) v = read_le<float>(is);
  return grid;
}

CollisionAudit audit_collisions(const EncodingConfig& config, const AuditOptions& options) {
  config.validate();
  const auto rotations = make_rotations(config.rotation, config.dim, config.levels);
  const int dim = config.dim;
  CollisionAudit audit;
  std::vector<std::uint32_t> hashes;
  for (int l = 0; l < config.levels; ++l) {
    const double n = config.schedule().resolution(l);
    // Bounding box of the (rotated) unit domain in grid units.
    std::array<double, kMaxDim> lo{}, hi{};
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (int c = 0; c < (1 << dim); ++c) {
      std::array<double, kMaxDim> corner{}, rotated{};
      for (int d = 0; d < dim; ++d) corner[d] = ((c >> d) & 1) ? 0.5 : -0.5;
      if (config.rotation.kind == RotationStrategy::Kind::kIdentity) {
        rotated = corner;
      } else {
        rotations[l].apply(std::span<const double>(corner.data(), dim),
                           std::span<double>(rotated.data(), dim));
      }
      for (int d = 0; d < dim; ++d) {
        lo[d] = std::min(lo[d], n * (rotated[d] + 0.5));
        hi[d] = std::max(hi[d], n * (rotated[d] + 0.5));
      }
    }
    std::array<std::int64_t, kMaxDim> first{}, extent{};
    std::uint64_t count = 1;
    for (int d = 0; d < dim; ++d) {
      first[d] = static_cast<std::int64_t>(std::floor(lo[d] + 1e-9));
      const auto last = static_cast<std::int64_t>(std::ceil(hi[d] - 1e-9));
      extent[d] = last - first[d] + 1;
      count *= static_cast<std::uint64_t>(extent[d]);
    }
    if (count > options.vertex_budget)
      throw std::length_error("collision audit at level " + std::to_string(l) + " needs " +
                              std::to_string(count) + " vertices, budget is " +
                              std::to_string(options.vertex_budget));
    hashes.clear();
    hashes.reserve(count);
    Vertex v{};
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t rem = i;
      for (int d = 0; d < dim; ++d) {
        v[d] = first[d] + static_cast<std::int64_t>(rem % extent[d]);
        rem /= extent[d];
      }
      hashes.push_back(spatial_hash(std::span<const std::int64_t>(v.data(), dim), config.table_size));
    }
    std::sort(hashes.begin(), hashes.end());
    std::uint64_t colliding = 0;
    for (std::size_t i = 0; i < hashes.size();) {
      std::size_t j = i + 1;
      while (j < hashes.size() && hashes[j] == hashes[i]) ++j;
      if (j - i > 1) colliding += j - i;
      i = j;
    }
    LevelAudit la;
    la.level = l;
    la.resolution = n;
    la.vertex_count = count;
    la.load_factor = static_cast<double>(count) / config.table_size;
    la.colliding_fraction = count ? static_cast<double>(colliding) / static_cast<double>(count) : 0.0;
    audit.levels.push_back(la);
  }
  return audit;
}

}  // namespace psflab
