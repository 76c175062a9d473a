#include "picl/vecindex/vecindex.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "picl/io.hpp"
#include "picl/parallel.hpp"
#include "picl/rng.hpp"
#include "picl/simd.hpp"
#include "picl/topk.hpp"

namespace picl::vecindex {

namespace {

constexpr std::string_view kVecMagic = "PICLVEC1";
constexpr std::string_view kIvfMagic = "PICLIVF1";

bool excluded(std::span<const ParagraphId> exclude, ParagraphId id) {
  return std::find(exclude.begin(), exclude.end(), id) != exclude.end();
}

SearchResult finish(TopK<float>& top) {
  SearchResult r;
  for (const auto& [s, id] : top.take()) {
    r.ids.push_back(id);
    r.scores.push_back(s);
  }
  return r;
}

// Nearest centroid by squared Euclidean distance, lowest index on ties.
std::pair<std::size_t, float> nearest(std::span<const float> x, const std::vector<float>& centroids,
                                      std::uint32_t d) {
  const std::size_t k = centroids.size() / d;
  std::size_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const float dist = simd::l2sq(x, std::span<const float>(centroids.data() + c * d, d));
    if (dist < best_d) {
      best_d = dist;
      best = c;
    }
  }
  return {best, best_d};
}

}  // namespace

void EmbeddingMatrix::validate() const {
  if (d == 0) throw FormatError("embedding dimension must be positive");
  if (data.size() != ids.size() * d)
    throw FormatError("embedding matrix holds " + std::to_string(data.size()) +
                      " floats, expected " + std::to_string(ids.size() * d));
  std::unordered_set<ParagraphId> seen;
  for (auto id : ids)
    if (!seen.insert(id).second) throw FormatError("duplicate paragraph id " + std::to_string(id));
}

EmbeddingMatrix EmbeddingMatrix::from_rows(std::vector<ParagraphId> ids,
                                           const std::vector<std::vector<float>>& rows) {
  if (ids.size() != rows.size()) throw FormatError("ids and rows differ in length");
  EmbeddingMatrix m;
  m.d = rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.d)
      throw FormatError("row " + std::to_string(i) + " has dimension " +
                        std::to_string(rows[i].size()) + ", expected " + std::to_string(m.d));
    m.data.insert(m.data.end(), rows[i].begin(), rows[i].end());
  }
  m.ids = std::move(ids);
  return m;
}

std::filesystem::path EmbeddingMatrix::ids_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".ids.jsonl";
  return p;
}

void EmbeddingMatrix::save(const std::filesystem::path& path) const {
  validate();
  io::BinaryWriter w(path);
  w.magic(kVecMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n()));
  w.put<std::uint32_t>(d);
  w.put_array<float>(data);
  w.close();
  std::string side;
  for (std::size_t i = 0; i < ids.size(); ++i)
    side += nlohmann::json{{"row", i}, {"id", ids[i]}}.dump() + "\n";
  io::write_text(ids_sidecar(path), side);
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kVecMagic);
  const auto n = r.get<std::uint32_t>();
  EmbeddingMatrix m;
  m.d = r.get<std::uint32_t>();
  m.data.resize(static_cast<std::size_t>(n) * m.d);
  r.get_array<float>(m.data);
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  m.ids.assign(n, 0);
  std::vector<bool> filled(n, false);
  io::for_each_jsonl(ids_sidecar(path), [&](std::size_t line, const nlohmann::json& j) {
    const auto row = j.at("row").get<std::size_t>();
    if (row >= n || filled[row])
      throw FormatError(ids_sidecar(path).string() + ":" + std::to_string(line) + ": bad row");
    filled[row] = true;
    m.ids[row] = j.at("id").get<ParagraphId>();
  });
  if (std::find(filled.begin(), filled.end(), false) != filled.end())
    throw FormatError(ids_sidecar(path).string() + ": missing rows");
  m.validate();
  return m;
}

ExactIndex::ExactIndex(EmbeddingMatrix matrix) : m_(std::move(matrix)) {
  if (m_.n() == 0) throw ConfigError("cannot build an index over zero vectors");
  m_.validate();
}

ExactIndex build_exact(EmbeddingMatrix matrix) { return ExactIndex(std::move(matrix)); }

SearchResult search_exact(const ExactIndex& index, std::span<const float> query, std::size_t k,
                          std::span<const ParagraphId> exclude) {
  if (k == 0) throw ConfigError("k must be >= 1");
  const auto& m = index.matrix();
  if (query.size() != m.d) throw ConfigError("query dimension mismatch");
  TopK<float> top(k);
  for (std::size_t i = 0; i < m.n(); ++i) {
    if (excluded(exclude, m.ids[i])) continue;
    top.push(simd::dot(m.row(i), query), m.ids[i]);
  }
  return finish(top);
}

KMeansResult kmeans(std::span<const float> vectors, std::uint32_t d, std::size_t k_c,
                    std::size_t iters, std::uint64_t seed, unsigned threads) {
  if (d == 0 || vectors.size() % d) throw ConfigError("vector block is not a multiple of d");
  const std::size_t n = vectors.size() / d;
  if (k_c == 0) throw ConfigError("k_c must be >= 1");
  if (k_c > n)
    throw ConfigError("k_c = " + std::to_string(k_c) + " exceeds the number of vectors " +
                      std::to_string(n));
  auto row = [&](std::size_t i) { return vectors.subspan(i * d, d); };

  // k_c distinct rows via a partial Fisher-Yates shuffle
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < k_c; ++i) std::swap(perm[i], perm[i + uniform_index(rng, n - i)]);
  KMeansResult res;
  res.centroids.resize(k_c * d);
  for (std::size_t c = 0; c < k_c; ++c)
    std::copy_n(row(perm[c]).begin(), d, res.centroids.begin() + c * d);

  std::vector<std::size_t> assign(n);
  std::vector<float> dist(n);
  for (std::size_t it = 0; it < iters; ++it) {
    parallel_for(n, threads, [&](std::size_t i) {
      const auto [c, dd] = nearest(row(i), res.centroids, d);
      assign[i] = c;
      dist[i] = dd;
    });
    double obj = 0.0;
    for (float v : dist) obj += v;
    res.objective.push_back(obj);

    std::vector<double> sums(k_c * d, 0.0);
    std::vector<std::size_t> counts(k_c, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const auto x = row(i);
      for (std::uint32_t j = 0; j < d; ++j) sums[assign[i] * d + j] += x[j];
    }
    std::vector<bool> used(n, false);
    for (std::size_t c = 0; c < k_c; ++c) {
      if (counts[c] > 0) {
        for (std::uint32_t j = 0; j < d; ++j)
          res.centroids[c * d + j] = static_cast<float>(sums[c * d + j] / double(counts[c]));
        continue;
      }
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (!used[i] && (far == n || dist[i] > dist[far])) far = i;
      used[far] = true;
      std::copy_n(row(far).begin(), d, res.centroids.begin() + c * d);
    }
  }
  return res;
}

std::size_t IvfIndex::size() const {
  std::size_t s = 0;
  for (const auto& l : lists) s += l.ids.size();
  return s;
}

IvfIndex build_ivf(const EmbeddingMatrix& matrix, std::size_t k_c, std::size_t iters,
                   std::uint64_t seed, unsigned threads) {
  matrix.validate();
  if (matrix.n() == 0) throw ConfigError("cannot build an index over zero vectors");
  IvfIndex idx;
  idx.d = matrix.d;
  idx.iters = iters;
  idx.seed = seed;
  idx.centroids = kmeans(matrix.data, matrix.d, k_c, iters, seed, threads).centroids;
  std::vector<std::size_t> assign(matrix.n());
  parallel_for(matrix.n(), threads,
               [&](std::size_t i) { assign[i] = nearest(matrix.row(i), idx.centroids, idx.d).first; });
  idx.lists.resize(k_c);
  for (std::size_t i = 0; i < matrix.n(); ++i) {
    auto& l = idx.lists[assign[i]];
    l.ids.push_back(matrix.ids[i]);
    const auto r = matrix.row(i);
    l.vectors.insert(l.vectors.end(), r.begin(), r.end());
  }
  return idx;
}

SearchResult search_ivf(const IvfIndex& index, std::span<const float> query, std::size_t k,
                        std::size_t n_probe, std::span<const ParagraphId> exclude) {
  if (k == 0) throw ConfigError("k must be >= 1");
  if (n_probe == 0 || n_probe > index.k_c())
    throw ConfigError("n_probe must be in [1, " + std::to_string(index.k_c()) + "]");
  if (query.size() != index.d) throw ConfigError("query dimension mismatch");
  const std::uint32_t d = index.d;
  TopK<float> probe(n_probe);
  for (std::size_t c = 0; c < index.k_c(); ++c)
    probe.push(simd::dot(std::span<const float>(index.centroids.data() + c * d, d), query), c);
  TopK<float> top(k);
  for (const auto& [s, c] : probe.take()) {
    const auto& l = index.lists[c];
    for (std::size_t i = 0; i < l.ids.size(); ++i) {
      if (excluded(exclude, l.ids[i])) continue;
      top.push(simd::dot(std::span<const float>(l.vectors.data() + i * d, d), query), l.ids[i]);
    }
  }
  return finish(top);
}

void IvfIndex::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic(kIvfMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(k_c()));
  w.put<std::uint32_t>(d);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(iters));
  w.put<std::uint64_t>(seed);
  w.put_array<float>(centroids);
  for (const auto& l : lists) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.ids.size()));
    w.put_array<ParagraphId>(l.ids);
    w.put_array<float>(l.vectors);
  }
  w.close();
}

IvfIndex IvfIndex::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kIvfMagic);
  IvfIndex idx;
  const auto k_c = r.get<std::uint32_t>();
  idx.d = r.get<std::uint32_t>();
  idx.iters = r.get<std::uint32_t>();
  idx.seed = r.get<std::uint64_t>();
  idx.centroids.resize(static_cast<std::size_t>(k_c) * idx.d);
  r.get_array<float>(idx.centroids);
  idx.lists.resize(k_c);
  for (auto& l : idx.lists) {
    const auto sz = r.get<std::uint32_t>();
    l.ids.resize(sz);
    r.get_array<ParagraphId>(l.ids);
    l.vectors.resize(static_cast<std::size_t>(sz) * idx.d);
    r.get_array<float>(l.vectors);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return idx;
}

double recall_at_k(const SearchResult& approx, const SearchResult& exact) {
  if (exact.ids.empty()) throw ConfigError("recall is undefined for an empty exact result");
  const std::unordered_set<ParagraphId> truth(exact.ids.begin(), exact.ids.end());
  std::size_t hit = 0;
  for (auto id : approx.ids) hit += truth.count(id);
  return double(hit) / double(exact.ids.size());
}

std::size_t default_k_c(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(double(n)))));
}

std::size_t default_n_probe(std::size_t k_c) { return std::max<std::size_t>(1, (k_c + 9) / 10); }

}  // namespace picl::vecindex
