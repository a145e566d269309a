#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "endofinder/binary_io.hpp"
#include "endofinder/rng.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

/// Sign quantisation: bit k is set iff z_k >= 0 (zero maps to 1).
template <typename T>
HashCode quantize(std::span<const T> z) {
  HashCode h(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) h.set_bit(k, z[k] >= T(0));
  return h;
}

inline HashCode quantize(const EmbeddingVector& z) { return quantize(z.values()); }
inline HashCode quantize(std::initializer_list<double> z) {
  return quantize(std::span<const double>(z.begin(), z.size()));
}

namespace detail {

inline std::size_t words_for_bits(std::size_t bits) { return (bits + 63) / 64; }

// Copies packed bytes into zero-padded 64-bit words. Byte order inside a word
// is irrelevant for popcount(xor), so a raw copy is enough.
inline void pack_words(const HashCode& h, std::uint64_t* out) {
  const std::size_t w = words_for_bits(h.bits());
  std::memset(out, 0, w * sizeof(std::uint64_t));
  std::memcpy(out, h.bytes().data(), h.bytes().size());
}

inline std::uint32_t hamming_words(const std::uint64_t* a, const std::uint64_t* b, std::size_t w) {
  std::uint32_t d = 0;
  for (std::size_t i = 0; i < w; ++i) d += static_cast<std::uint32_t>(std::popcount(a[i] ^ b[i]));
  return d;
}

// W > 0 fixes the word count at compile time so the loop unrolls; W == 0 uses `w`.
template <std::size_t W>
inline std::uint32_t hamming_fixed(const std::uint64_t* a, const std::uint64_t* b, std::size_t w) {
  if constexpr (W == 0) {
    return hamming_words(a, b, w);
  } else {
    std::uint32_t d = 0;
    for (std::size_t i = 0; i < W; ++i) d += static_cast<std::uint32_t>(std::popcount(a[i] ^ b[i]));
    return d;
  }
}

}  // namespace detail

/// Popcount of XOR; pad bits are zero on both sides.
inline std::uint32_t hamming(const HashCode& a, const HashCode& b) {
  ENDF_THROW_IF_NOT(a.bits() == b.bits(), Errc::DimMismatch,
                    "hamming: " + std::to_string(a.bits()) + " vs " + std::to_string(b.bits()) + " bits");
  const auto x = a.bytes(), y = b.bytes();
  std::uint32_t d = 0;
  std::size_t i = 0;
  for (; i + 8 <= x.size(); i += 8) {
    std::uint64_t u, v;
    std::memcpy(&u, x.data() + i, 8);
    std::memcpy(&v, y.data() + i, 8);
    d += static_cast<std::uint32_t>(std::popcount(u ^ v));
  }
  for (; i < x.size(); ++i) d += static_cast<std::uint32_t>(std::popcount(static_cast<unsigned>(x[i] ^ y[i])));
  return d;
}

struct QueryBudget {
  std::size_t k = 5;
  std::optional<std::uint32_t> max_distance;
};

namespace detail {

// Keeps the k smallest neighbours under (distance, id) order.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  bool full() const { return heap_.size() >= k_; }
  double worst_distance() const { return heap_.front().distance; }

  void offer(const Neighbor& n) {
    if (k_ == 0) return;
    if (!full()) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
    } else if (neighbor_less(n, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), neighbor_less);
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
    }
  }

  // Cheap pre-check so callers can skip building a Neighbor.
  bool may_accept(double d) const { return k_ > 0 && (!full() || d <= worst_distance()); }

  std::vector<Neighbor> take_sorted() {
    std::sort_heap(heap_.begin(), heap_.end(), neighbor_less);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

inline void check_unique_ids(const std::vector<ReferenceRecord>& records) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    ENDF_THROW_IF_NOT(!r.id.empty(), Errc::BadSpec, "record id must be non-empty");
    ENDF_THROW_IF_NOT(seen.insert(r.id).second, Errc::BadSpec, "duplicate record id '" + r.id + "'");
  }
}

}  // namespace detail

/// Exact Hamming k-NN by full scan, ties broken by ascending id.
inline std::vector<Neighbor> linear_scan(std::span<const ReferenceRecord> records, const HashCode& code, std::size_t k,
                                         std::optional<std::uint32_t> max_distance = std::nullopt) {
  detail::TopK top(k);
  for (const auto& r : records) {
    const auto d = hamming(r.code, code);
    if (max_distance && d > *max_distance) continue;
    if (top.may_accept(d)) top.offer({r.id, r.label, static_cast<double>(d)});
  }
  return top.take_sorted();
}

/// Raw-feature scan: distance = 1 - cosine, so ascending distance is
/// descending similarity. Records without a raw embedding are an error.
inline std::vector<Neighbor> linear_scan_cosine(std::span<const ReferenceRecord> records, const EmbeddingVector& query,
                                                std::size_t k) {
  detail::TopK top(k);
  const auto q = query.values();
  for (const auto& r : records) {
    ENDF_THROW_IF_NOT(r.raw.has_value(), Errc::DimMismatch, "record '" + r.id + "' has no raw embedding");
    ENDF_THROW_IF_NOT(r.raw->size() == q.size(), Errc::DimMismatch,
                      "raw dim " + std::to_string(r.raw->size()) + " vs query " + std::to_string(q.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += static_cast<double>((*r.raw)[i]) * q[i];
    const double d = 1.0 - std::clamp(s, -1.0, 1.0);
    if (top.may_accept(d)) top.offer({r.id, r.label, d});
  }
  return top.take_sorted();
}

struct BallTreeConfig {
  std::size_t leaf_capacity = 32;
  std::size_t pole_sample = 64;
  std::uint64_t seed = 0;
};

/// Ball tree over binary codes. Each node is a Hamming ball centred on one of
/// its records; leaves own a contiguous slice of `order()`. Immutable after
/// build, so concurrent queries need no locking.
class BallTreeIndex {
 public:
  struct Node {
    std::uint64_t center = 0;  // record index
    std::uint32_t radius = 0;
    bool leaf = true;
    std::uint64_t a = 0;  // leaf: begin into order; inner: left child
    std::uint64_t b = 0;  // leaf: end into order;   inner: right child

    bool operator==(const Node&) const = default;
  };

  BallTreeIndex() = default;

  static BallTreeIndex build(std::vector<ReferenceRecord> records, const BallTreeConfig& cfg = {}) {
    ENDF_THROW_IF_NOT(!records.empty(), Errc::EmptyDatabase, "cannot build an index over zero records");
    ENDF_THROW_IF_NOT(cfg.leaf_capacity >= 1 && cfg.pole_sample >= 2, Errc::BadConfig,
                      "leaf_capacity >= 1 and pole_sample >= 2 required");
    detail::check_unique_ids(records);
    BallTreeIndex idx;
    idx.bits_ = records.front().code.bits();
    for (const auto& r : records)
      ENDF_THROW_IF_NOT(r.code.bits() == idx.bits_, Errc::DimMismatch, "record '" + r.id + "' has a different code length");
    idx.leaf_capacity_ = cfg.leaf_capacity;
    idx.records_ = std::move(records);
    idx.pack();
    idx.order_.resize(idx.records_.size());
    for (std::size_t i = 0; i < idx.order_.size(); ++i) idx.order_[i] = i;
    Rng rng(cfg.seed);
    idx.build_node(0, idx.order_.size(), idx.order_.front(), cfg, rng);
    idx.lay_out();
    return idx;
  }

  std::size_t size() const { return records_.size(); }
  std::size_t code_bits() const { return bits_; }
  std::size_t leaf_capacity() const { return leaf_capacity_; }
  const std::vector<ReferenceRecord>& records() const { return records_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::uint64_t>& order() const { return order_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Exact k nearest by Hamming distance, (distance, id) ascending. Identical
  /// to linear_scan over records().
  std::vector<Neighbor> query(const HashCode& code, const QueryBudget& budget) const {
    ENDF_THROW_IF_NOT(code.bits() == bits_, Errc::DimMismatch,
                      "query has " + std::to_string(code.bits()) + " bits, index has " + std::to_string(bits_));
    ENDF_THROW_IF_NOT(budget.k <= records_.size(), Errc::KTooLarge,
                      "k = " + std::to_string(budget.k) + " exceeds " + std::to_string(records_.size()) + " records");
    if (budget.k == 0) return {};
    switch (words_) {
      case 1: return query_impl<1>(code, budget);
      case 2: return query_impl<2>(code, budget);
      case 4: return query_impl<4>(code, budget);
      case 8: return query_impl<8>(code, budget);
      default: return query_impl<0>(code, budget);
    }
  }

  /// Structural check: every record appears in exactly one leaf and lies
  /// inside the ball of every node on its path. Throws CorruptFile.
  void audit() const {
    ENDF_THROW_IF_NOT(!nodes_.empty() && order_.size() == records_.size(), Errc::CorruptFile, "index is empty or torn");
    std::vector<int> seen(records_.size(), 0);
    std::vector<std::uint64_t> path;
    audit_node(0, path, seen, 0);
    for (int s : seen) ENDF_THROW_IF_NOT(s == 1, Errc::CorruptFile, "record not covered exactly once");
  }

  // -------------------------------------------------------------------------
  // ".endx": "ENDX1\0", u32 code bits, u64 record count, records
  // (u16 id length, id, i32 label, code bytes), u32 leaf capacity, u64 node
  // count, nodes (u64 center, u32 radius, u8 leaf, u64 a, u64 b), then the
  // u64 leaf order table.

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.raw("ENDX1", 6);
    w.u32(static_cast<std::uint32_t>(bits_));
    w.u64(records_.size());
    for (const auto& r : records_) {
      w.u16(static_cast<std::uint16_t>(r.id.size()));
      w.raw(r.id.data(), r.id.size());
      w.i32(r.label);
      w.bytes(r.code.bytes());
    }
    w.u32(static_cast<std::uint32_t>(leaf_capacity_));
    w.u64(nodes_.size());
    for (const auto& n : nodes_) {
      w.u64(n.center);
      w.u32(n.radius);
      w.u8(n.leaf ? 1 : 0);
      w.u64(n.a);
      w.u64(n.b);
    }
    for (auto o : order_) w.u64(o);
    return w.data();
  }

  static BallTreeIndex deserialize(std::span<const std::uint8_t> bytes, const std::string& source = "<endx>") {
    ByteReader r(bytes, source);
    expect_magic(r, std::string_view("ENDX1", 6));
    BallTreeIndex idx;
    idx.bits_ = r.u32("code bits");
    if (idx.bits_ == 0) r.fail("zero code length");
    const auto code_bytes = (idx.bits_ + 7) / 8;
    const auto count = r.u64("record count");
    if (count == 0 || count > r.remaining() / (6 + code_bytes)) r.fail("implausible record count");
    idx.records_.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      ReferenceRecord rec;
      const auto len = r.u16("id length");
      auto id = r.take(len, "id");
      rec.id.assign(id.begin(), id.end());
      rec.label = r.i32("label");
      auto cb = r.take(code_bytes, "code");
      try {
        rec.code = HashCode::from_bytes(idx.bits_, std::vector<std::uint8_t>(cb.begin(), cb.end()));
      } catch (const Error&) {
        r.fail("hash pad bits set");
      }
      idx.records_.push_back(std::move(rec));
    }
    idx.leaf_capacity_ = r.u32("leaf capacity");
    const auto node_count = r.u64("node count");
    if (node_count == 0 || node_count > r.remaining() / 29) r.fail("implausible node count");
    idx.nodes_.resize(node_count);
    for (auto& n : idx.nodes_) {
      n.center = r.u64("node center");
      n.radius = r.u32("node radius");
      const auto leaf = r.u8("node kind");
      if (leaf > 1) r.fail("bad node kind");
      n.leaf = leaf == 1;
      n.a = r.u64("node a");
      n.b = r.u64("node b");
      if (n.center >= count) r.fail("node center out of range");
      if (n.leaf ? (n.a > n.b || n.b > count) : (n.a >= node_count || n.b >= node_count)) r.fail("node link out of range");
    }
    idx.order_.resize(count);
    for (auto& o : idx.order_) {
      o = r.u64("order entry");
      if (o >= count) r.fail("order entry out of range");
    }
    if (!r.at_end()) r.fail("trailing bytes after index");
    try {
      detail::check_unique_ids(idx.records_);
    } catch (const Error& e) {
      throw Error(Errc::CorruptFile, source + ": " + e.what());
    }
    idx.pack();
    idx.audit();
    idx.lay_out();
    return idx;
  }

  void save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }
  static BallTreeIndex load(const std::filesystem::path& path) {
    return deserialize(read_file_bytes(path), path.string());
  }

 private:
  const std::uint64_t* word_ptr(std::uint64_t r) const { return words_data_.data() + r * words_; }

  void pack() {
    words_ = detail::words_for_bits(bits_);
    words_data_.assign(records_.size() * words_, 0);
    for (std::size_t i = 0; i < records_.size(); ++i) detail::pack_words(records_[i].code, words_data_.data() + i * words_);
    by_id_.clear();
    for (std::size_t i = 0; i < records_.size(); ++i) by_id_.emplace(records_[i].id, i);
  }

  template <std::size_t W>
  std::vector<Neighbor> query_impl(const HashCode& code, const QueryBudget& budget) const {
    std::vector<std::uint64_t> q(words_);
    detail::pack_words(code, q.data());
    const std::uint32_t cutoff = budget.max_distance ? *budget.max_distance : std::numeric_limits<std::uint32_t>::max();

    // Max-heap of the k best (distance, record) under (distance, id) order;
    // ids are only materialised for the survivors.
    using Hit = std::pair<std::uint32_t, std::uint64_t>;
    auto worse = [this](const Hit& a, const Hit& b) {
      return a.first != b.first ? a.first < b.first : records_[a.second].id < records_[b.second].id;
    };
    std::vector<Hit> best;
    best.reserve(budget.k + 1);
    auto bound = [&] { return best.size() < budget.k ? cutoff : std::min(cutoff, best.front().first); };

    // Depth-first, nearer child first; a node is skipped once its lower bound
    // max(0, d(q, c) - r) exceeds the current k-th distance.
    using Item = std::pair<std::uint32_t, std::uint64_t>;
    std::vector<Item> stack;
    stack.reserve(128);
    stack.push_back({lower_bound<W>(q.data(), 0), 0});
    while (!stack.empty()) {
      const auto [lb, ni] = stack.back();
      stack.pop_back();
      if (lb > bound()) continue;
      const Node& n = nodes_[ni];
      if (n.leaf) {
        const std::uint64_t* w = leaf_words_.data() + n.a * words_;
        for (std::uint64_t i = n.a; i < n.b; ++i, w += words_) {
          const auto d = detail::hamming_fixed<W>(q.data(), w, words_);
          if (d > bound()) continue;
          const Hit h{d, order_[i]};
          if (best.size() < budget.k) {
            best.push_back(h);
            std::push_heap(best.begin(), best.end(), worse);
          } else if (worse(h, best.front())) {
            std::pop_heap(best.begin(), best.end(), worse);
            best.back() = h;
            std::push_heap(best.begin(), best.end(), worse);
          }
        }
      } else {
        Item near{lower_bound<W>(q.data(), n.a), n.a}, far{lower_bound<W>(q.data(), n.b), n.b};
        if (far.first < near.first) std::swap(near, far);
        if (far.first <= bound()) stack.push_back(far);
        if (near.first <= bound()) stack.push_back(near);
      }
    }
    std::sort_heap(best.begin(), best.end(), worse);
    std::vector<Neighbor> out;
    out.reserve(best.size());
    for (const auto& [d, r] : best) out.push_back({records_[r].id, records_[r].label, static_cast<double>(d)});
    return out;
  }

  // Leaf codes in leaf order and centre codes in node order, so queries read
  // contiguous memory.
  void lay_out() {
    leaf_words_.resize(order_.size() * words_);
    for (std::size_t i = 0; i < order_.size(); ++i)
      std::copy_n(word_ptr(order_[i]), words_, leaf_words_.data() + i * words_);
    center_words_.resize(nodes_.size() * words_);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      std::copy_n(word_ptr(nodes_[i].center), words_, center_words_.data() + i * words_);
  }

  template <std::size_t W>
  std::uint32_t lower_bound(const std::uint64_t* q, std::uint64_t ni) const {
    const auto d = detail::hamming_fixed<W>(q, center_words_.data() + ni * words_, words_);
    return d > nodes_[ni].radius ? d - nodes_[ni].radius : 0;
  }

  std::uint32_t dist(std::uint64_t a, std::uint64_t b) const { return detail::hamming_words(word_ptr(a), word_ptr(b), words_); }

  // Builds the node for order_[begin, end) centred on record `center`; returns its index.
  std::uint64_t build_node(std::size_t begin, std::size_t end, std::uint64_t center, const BallTreeConfig& cfg, Rng& rng) {
    const std::uint64_t self = nodes_.size();
    nodes_.push_back({});
    std::uint32_t radius = 0;
    for (std::size_t i = begin; i < end; ++i) radius = std::max(radius, dist(center, order_[i]));
    nodes_[self].center = center;
    nodes_[self].radius = radius;

    const std::size_t n = end - begin;
    auto make_leaf = [&] {
      nodes_[self].leaf = true;
      nodes_[self].a = begin;
      nodes_[self].b = end;
      return self;
    };
    if (n <= cfg.leaf_capacity || radius == 0) return make_leaf();

    // Poles: the farthest pair within a seeded sample of the slice.
    std::vector<std::uint64_t> sample(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                                      order_.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t m = std::min(cfg.pole_sample, n);
    for (std::size_t i = 0; i < m; ++i) std::swap(sample[i], sample[i + rng.below(n - i)]);
    sample.resize(m);
    std::uint64_t pa = sample[0], pb = sample[0];
    std::uint32_t best = 0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) {
        const auto d = dist(sample[i], sample[j]);
        if (d > best) {
          best = d;
          pa = sample[i];
          pb = sample[j];
        }
      }
    if (best == 0) {
      // Sample is degenerate; fall back to the record farthest from the centre.
      pa = center;
      for (std::size_t i = begin; i < end; ++i)
        if (dist(center, order_[i]) == radius) {
          pb = order_[i];
          break;
        }
    }

    // Stable partition: nearer pole wins, ties go to the smaller side.
    std::vector<std::uint64_t> left, right;
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = order_[i];
      const auto da = dist(pa, r), db = dist(pb, r);
      if (da < db || (da == db && left.size() <= right.size()))
        left.push_back(r);
      else
        right.push_back(r);
    }
    if (left.empty() || right.empty()) return make_leaf();
    std::copy(left.begin(), left.end(), order_.begin() + static_cast<std::ptrdiff_t>(begin));
    std::copy(right.begin(), right.end(), order_.begin() + static_cast<std::ptrdiff_t>(begin + left.size()));
    const std::size_t mid = begin + left.size();
    const auto l = build_node(begin, mid, pa, cfg, rng);
    const auto r = build_node(mid, end, pb, cfg, rng);
    nodes_[self].leaf = false;
    nodes_[self].a = l;
    nodes_[self].b = r;
    return self;
  }

  void audit_node(std::uint64_t ni, std::vector<std::uint64_t>& path, std::vector<int>& seen, int depth) const {
    ENDF_THROW_IF_NOT(depth < 4096, Errc::CorruptFile, "index tree is cyclic or too deep");
    const Node& n = nodes_[ni];
    path.push_back(ni);
    if (n.leaf) {
      for (std::uint64_t i = n.a; i < n.b; ++i) {
        const auto r = order_[i];
        ++seen[r];
        for (auto anc : path)
          ENDF_THROW_IF_NOT(dist(nodes_[anc].center, r) <= nodes_[anc].radius, Errc::CorruptFile,
                            "record '" + records_[r].id + "' lies outside its ball");
      }
    } else {
      audit_node(n.a, path, seen, depth + 1);
      audit_node(n.b, path, seen, depth + 1);
    }
    path.pop_back();
  }

  std::size_t bits_ = 0;
  std::size_t words_ = 0;
  std::size_t leaf_capacity_ = 32;
  std::vector<ReferenceRecord> records_;
  std::vector<std::uint64_t> words_data_;
  std::vector<Node> nodes_;
  std::vector<std::uint64_t> order_;
  std::vector<std::uint64_t> leaf_words_;
  std::vector<std::uint64_t> center_words_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace endofinder
