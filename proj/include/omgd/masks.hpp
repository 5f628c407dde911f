#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omgd/rng.hpp"

namespace omgd {

// A sparsification mask: non-negative per-coordinate multipliers applied
// entrywise to a gradient.
struct Mask {
  Eigen::VectorXd values;

  int dim() const { return static_cast<int>(values.size()); }
};

// A family of M masks over d coordinates whose entrywise sum is exactly
// M * ones(d): each non-pinned coordinate carries the value M in exactly one
// mask, pinned coordinates carry 1 in every mask.
struct MaskSet {
  int d = 0;
  int mask_count = 0;  // M
  std::vector<int> pinned;
  std::vector<Mask> masks;
};

// A random order over the M x N grid of (mask index, sample index) pairs;
// one traversal drives one cycle of M*N steps.
struct TraversalSchedule {
  int mask_count = 0;  // M
  int sample_count = 0;  // N
  std::vector<std::pair<int, int>> order;  // (j, i), 0-indexed
};

// A column-orthonormal d x k matrix; the associated compression operator is
// (1/keep_ratio) * P * P^T.
struct Projector {
  Eigen::MatrixXd P;
  double keep_ratio = 1.0;
};

namespace detail {

// keep_ratio * d must be integral (within 1e-9) and at least 1.
inline int rank_from_keep_ratio(int d, double keep_ratio) {
  if (d <= 0) throw std::invalid_argument("keep_ratio rank: d must be positive");
  if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
    throw std::invalid_argument("keep_ratio must lie in (0, 1]");
  }
  const double kd = keep_ratio * static_cast<double>(d);
  const double rounded = std::round(kd);
  if (std::abs(kd - rounded) > 1e-9 || rounded < 1.0) {
    throw std::invalid_argument(
        "keep_ratio * d must be a positive integer, got " + std::to_string(kd));
  }
  return static_cast<int>(rounded);
}

inline void check_pinned(int d, const std::vector<int>& pinned) {
  std::vector<bool> seen(static_cast<std::size_t>(d), false);
  for (int c : pinned) {
    if (c < 0 || c >= d) {
      throw std::invalid_argument("pinned coordinate out of range: " + std::to_string(c));
    }
    if (seen[static_cast<std::size_t>(c)]) {
      throw std::invalid_argument("pinned coordinate repeated: " + std::to_string(c));
    }
    seen[static_cast<std::size_t>(c)] = true;
  }
}

}  // namespace detail

// Builds a mask set from an explicit assignment of non-pinned coordinates to
// blocks; blocks[j] lists the coordinates that mask j covers with value M.
// Validates that blocks and pinned coordinates partition [0, d).
inline MaskSet make_mask_set(int d, const std::vector<int>& pinned,
                             const std::vector<std::vector<int>>& blocks) {
  if (d <= 0) throw std::invalid_argument("make_mask_set: d must be positive");
  detail::check_pinned(d, pinned);
  const int m = static_cast<int>(blocks.size());
  if (m < 1) throw std::invalid_argument("make_mask_set: need at least one block");

  std::vector<int> owner(static_cast<std::size_t>(d), -1);
  for (int c : pinned) owner[static_cast<std::size_t>(c)] = -2;
  for (int j = 0; j < m; ++j) {
    for (int c : blocks[static_cast<std::size_t>(j)]) {
      if (c < 0 || c >= d) {
        throw std::invalid_argument("make_mask_set: block coordinate out of range");
      }
      if (owner[static_cast<std::size_t>(c)] != -1) {
        throw std::invalid_argument(
            "make_mask_set: coordinate assigned twice or pinned: " + std::to_string(c));
      }
      owner[static_cast<std::size_t>(c)] = j;
    }
  }
  for (int c = 0; c < d; ++c) {
    if (owner[static_cast<std::size_t>(c)] == -1) {
      throw std::invalid_argument(
          "make_mask_set: coordinate not covered: " + std::to_string(c));
    }
  }

  MaskSet set;
  set.d = d;
  set.mask_count = m;
  set.pinned = pinned;
  std::sort(set.pinned.begin(), set.pinned.end());
  set.masks.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    for (int c : set.pinned) v[c] = 1.0;
    for (int c : blocks[static_cast<std::size_t>(j)]) v[c] = static_cast<double>(m);
    set.masks[static_cast<std::size_t>(j)].values = std::move(v);
  }
  return set;
}

// Draws a disjoint-support mask set: the non-pinned coordinates are shuffled
// and dealt into M blocks whose sizes differ by at most one (the first
// n mod M blocks take the extra element), so the coordinate-to-block
// assignment is a uniform function of the generator state.
inline MaskSet generate_disjoint_masks(int d, int mask_count,
                                       const std::vector<int>& pinned, Rng& rng) {
  if (d <= 0) throw std::invalid_argument("generate_disjoint_masks: d must be positive");
  if (mask_count < 1) {
    throw std::invalid_argument("generate_disjoint_masks: mask count must be >= 1");
  }
  detail::check_pinned(d, pinned);

  std::vector<bool> is_pinned(static_cast<std::size_t>(d), false);
  for (int c : pinned) is_pinned[static_cast<std::size_t>(c)] = true;
  std::vector<int> free_coords;
  free_coords.reserve(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) {
    if (!is_pinned[static_cast<std::size_t>(c)]) free_coords.push_back(c);
  }

  const int n_free = static_cast<int>(free_coords.size());
  if (mask_count > 1 && n_free < mask_count) {
    throw std::invalid_argument(
        "generate_disjoint_masks: fewer non-pinned coordinates (" +
        std::to_string(n_free) + ") than masks (" + std::to_string(mask_count) + ")");
  }

  rng.shuffle(free_coords);
  std::vector<std::vector<int>> blocks(static_cast<std::size_t>(mask_count));
  const int base = mask_count > 0 ? n_free / mask_count : 0;
  const int extra = mask_count > 0 ? n_free % mask_count : 0;
  std::size_t pos = 0;
  for (int j = 0; j < mask_count; ++j) {
    const int size = base + (j < extra ? 1 : 0);
    for (int s = 0; s < size; ++s) {
      blocks[static_cast<std::size_t>(j)].push_back(free_coords[pos++]);
    }
  }
  return make_mask_set(d, pinned, blocks);
}

// Exact check of the defining identity: entrywise sum of the masks equals
// mask_count on every coordinate (all stored values are small integers, so
// the comparison is exact in doubles).
inline bool verify_mask_set(const MaskSet& set) {
  if (set.d <= 0 || set.mask_count < 1) return false;
  if (static_cast<int>(set.masks.size()) != set.mask_count) return false;
  for (const Mask& m : set.masks) {
    if (m.dim() != set.d) return false;
    for (int c = 0; c < set.d; ++c) {
      if (m.values[c] < 0.0) return false;
    }
  }
  for (int c = 0; c < set.d; ++c) {
    double sum = 0.0;
    for (const Mask& m : set.masks) sum += m.values[c];
    if (sum != static_cast<double>(set.mask_count)) return false;
  }
  return true;
}

// Uniform random permutation of the (mask, sample) pair grid.
inline TraversalSchedule generate_traversal(int mask_count, int sample_count, Rng& rng) {
  if (mask_count < 1 || sample_count < 1) {
    throw std::invalid_argument("generate_traversal: mask and sample counts must be >= 1");
  }
  const std::uint64_t total =
      static_cast<std::uint64_t>(mask_count) * static_cast<std::uint64_t>(sample_count);
  if (total > (std::uint64_t{1} << 31)) {
    throw std::invalid_argument("generate_traversal: grid too large");
  }
  TraversalSchedule sched;
  sched.mask_count = mask_count;
  sched.sample_count = sample_count;
  sched.order.reserve(static_cast<std::size_t>(total));
  for (int j = 0; j < mask_count; ++j) {
    for (int i = 0; i < sample_count; ++i) sched.order.emplace_back(j, i);
  }
  rng.shuffle(sched.order);
  return sched;
}

// True iff the traversal visits every grid pair exactly once.
inline bool verify_traversal(const TraversalSchedule& sched) {
  const std::size_t total = static_cast<std::size_t>(sched.mask_count) *
                            static_cast<std::size_t>(sched.sample_count);
  if (sched.order.size() != total) return false;
  std::vector<bool> seen(total, false);
  for (const auto& [j, i] : sched.order) {
    if (j < 0 || j >= sched.mask_count || i < 0 || i >= sched.sample_count) return false;
    const std::size_t idx =
        static_cast<std::size_t>(j) * static_cast<std::size_t>(sched.sample_count) +
        static_cast<std::size_t>(i);
    if (seen[idx]) return false;
    seen[idx] = true;
  }
  return true;
}

namespace detail {

// Allocation-free core of sample_iid_mask; `coords` persists across calls so
// hot loops reuse it.  Resets values to zero, then writes 1/keep_ratio on a
// uniform without-replacement support of size k.
inline void sample_iid_mask_into(int d, double keep_ratio, int k, Rng& rng,
                                 std::vector<int>& coords, Eigen::VectorXd& values) {
  coords.resize(static_cast<std::size_t>(d));
  std::iota(coords.begin(), coords.end(), 0);
  rng.sample_prefix(coords, static_cast<std::size_t>(k));
  values.setZero(d);
  const double value = 1.0 / keep_ratio;
  for (int s = 0; s < k; ++s) values[coords[static_cast<std::size_t>(s)]] = value;
}

}  // namespace detail

// Draws an unbiased sparsification mask: keep_ratio * d coordinates chosen
// uniformly without replacement carry 1/keep_ratio, the rest are zero, so
// every coordinate's expected multiplier is 1.
inline Mask sample_iid_mask(int d, double keep_ratio, Rng& rng) {
  const int k = detail::rank_from_keep_ratio(d, keep_ratio);
  std::vector<int> coords;
  Mask mask;
  detail::sample_iid_mask_into(d, keep_ratio, k, rng, coords, mask.values);
  return mask;
}

// Samples uniform random column-orthonormal d x k frames (k = keep_ratio * d):
// a d x k standard Gaussian Z is orthonormalized symmetrically as
// Z (Z^T Z)^{-1/2} via the eigendecomposition of Z^T Z.  Degenerate draws
// (smallest eigenvalue of Z^T Z below 1e-12) are rejected and resampled; 8
// consecutive rejections raise an error.  The class keeps its workspaces
// between draws so per-step sampling does not allocate.
class StiefelSampler {
 public:
  StiefelSampler(int d, double keep_ratio)
      : d_(d),
        keep_ratio_(keep_ratio),
        k_(detail::rank_from_keep_ratio(d, keep_ratio)),
        z_(d, k_),
        gram_(k_, k_),
        whiten_(k_, k_) {}

  int rank() const { return k_; }

  void sample_into(Eigen::MatrixXd& p, Rng& rng) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      for (int col = 0; col < k_; ++col) {
        for (int row = 0; row < d_; ++row) z_(row, col) = rng.normal();
      }
      gram_.noalias() = z_.transpose() * z_;
      eig_.compute(gram_);
      if (eig_.eigenvalues()(0) < 1e-12) continue;
      whiten_.noalias() = eig_.eigenvectors() *
                          eig_.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                          eig_.eigenvectors().transpose();
      p.noalias() = z_ * whiten_;
      return;
    }
    throw std::runtime_error(
        "sample_stiefel_projector: degenerate Gaussian draw 8 times in a row");
  }

 private:
  int d_;
  double keep_ratio_;
  int k_;
  Eigen::MatrixXd z_, gram_, whiten_;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_;
};

inline Projector sample_stiefel_projector(int d, double keep_ratio, Rng& rng) {
  StiefelSampler sampler(d, keep_ratio);
  Projector proj;
  proj.keep_ratio = keep_ratio;
  proj.P.resize(d, sampler.rank());
  sampler.sample_into(proj.P, rng);
  return proj;
}

// Entrywise product of a mask and a gradient.
inline Eigen::VectorXd apply_mask(const Mask& mask, const Eigen::VectorXd& grad) {
  if (mask.values.size() != grad.size()) {
    throw std::invalid_argument("apply_mask: dimension mismatch");
  }
  return mask.values.cwiseProduct(grad);
}

// Applies the rank-k compression (1/keep_ratio) * P * P^T to a gradient.
inline Eigen::VectorXd apply_projector(const Projector& proj, const Eigen::VectorXd& grad) {
  if (proj.P.rows() != grad.size()) {
    throw std::invalid_argument("apply_projector: dimension mismatch");
  }
  return (proj.P * (proj.P.transpose() * grad)) / proj.keep_ratio;
}

// --- text serialization -----------------------------------------------------
//
// Line-oriented formats, stable for fixed inputs so that equal seeds produce
// byte-identical files.

namespace detail {

inline std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream iss(s);
  while (std::getline(iss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace detail

inline void write_mask_set(const MaskSet& set, std::ostream& os) {
  os << "maskset d=" << set.d << " M=" << set.mask_count
     << " pinned=" << detail::join_ints(set.pinned) << "\n";
  for (const Mask& m : set.masks) {
    for (int c = 0; c < set.d; ++c) {
      if (c > 0) os << ' ';
      os << detail::format_double(m.values[c]);
    }
    os << "\n";
  }
}

inline MaskSet read_mask_set(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) {
    throw std::runtime_error("read_mask_set: empty input");
  }
  MaskSet set;
  {
    std::istringstream hs(header);
    std::string tag, field;
    hs >> tag;
    if (tag != "maskset") throw std::runtime_error("read_mask_set: bad header");
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw std::runtime_error("read_mask_set: bad field");
      const std::string key = field.substr(0, eq);
      const std::string val = field.substr(eq + 1);
      if (key == "d") {
        set.d = std::stoi(val);
      } else if (key == "M") {
        set.mask_count = std::stoi(val);
      } else if (key == "pinned") {
        set.pinned = detail::split_ints(val);
      } else {
        throw std::runtime_error("read_mask_set: unknown field " + key);
      }
    }
  }
  if (set.d <= 0 || set.mask_count < 1) {
    throw std::runtime_error("read_mask_set: invalid dimensions");
  }
  set.masks.resize(static_cast<std::size_t>(set.mask_count));
  for (int j = 0; j < set.mask_count; ++j) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_mask_set: truncated");
    std::istringstream ls(line);
    Eigen::VectorXd v(set.d);
    for (int c = 0; c < set.d; ++c) {
      if (!(ls >> v[c])) throw std::runtime_error("read_mask_set: short mask row");
    }
    set.masks[static_cast<std::size_t>(j)].values = std::move(v);
  }
  return set;
}

inline void write_traversal(const TraversalSchedule& sched, std::ostream& os) {
  os << "traversal M=" << sched.mask_count << " N=" << sched.sample_count << "\n";
  for (const auto& [j, i] : sched.order) os << j << ' ' << i << "\n";
}

inline TraversalSchedule read_traversal(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) {
    throw std::runtime_error("read_traversal: empty input");
  }
  TraversalSchedule sched;
  {
    std::istringstream hs(header);
    std::string tag, field;
    hs >> tag;
    if (tag != "traversal") throw std::runtime_error("read_traversal: bad header");
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw std::runtime_error("read_traversal: bad field");
      const std::string key = field.substr(0, eq);
      const int val = std::stoi(field.substr(eq + 1));
      if (key == "M") {
        sched.mask_count = val;
      } else if (key == "N") {
        sched.sample_count = val;
      } else {
        throw std::runtime_error("read_traversal: unknown field " + key);
      }
    }
  }
  const std::size_t total = static_cast<std::size_t>(sched.mask_count) *
                            static_cast<std::size_t>(sched.sample_count);
  sched.order.reserve(total);
  for (std::size_t p = 0; p < total; ++p) {
    int j = 0, i = 0;
    if (!(is >> j >> i)) throw std::runtime_error("read_traversal: truncated");
    sched.order.emplace_back(j, i);
  }
  return sched;
}

inline std::string to_string(const MaskSet& set) {
  std::ostringstream os;
  write_mask_set(set, os);
  return os.str();
}

inline std::string to_string(const TraversalSchedule& sched) {
  std::ostringstream os;
  write_traversal(sched, os);
  return os.str();
}

}  // namespace omgd
