#include "picl/encoder/encoder.hpp"

#include <string>

#include "picl/common.hpp"
#include "picl/io.hpp"
#include "picl/parallel.hpp"
#include "picl/rng.hpp"
#include "picl/simd.hpp"

namespace picl::encoder {

namespace {
constexpr std::string_view kMagic = "PICLENC1";
}

EncoderModel::EncoderModel(std::uint32_t d, HashSpec spec) : d_(d), spec_(spec) {
  spec_.validate();
  if (d == 0) throw ConfigError("embedding dimension must be positive");
  wt_.assign(static_cast<std::size_t>(d) * spec_.dim, 0.0f);
}

EncoderModel EncoderModel::random(std::uint32_t d, HashSpec spec, double scale,
                                  std::uint64_t seed) {
  EncoderModel m(d, spec);
  Rng rng(seed);
  for (auto& w : m.wt_) w = static_cast<float>(scale * standard_normal(rng));
  return m;
}

void EncoderModel::embed_features_into(const FeatureVector& fv, std::span<float> out) const {
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t k = 0; k < fv.nnz(); ++k) simd::axpy(fv.values[k], column(fv.indices[k]), out);
}

std::vector<float> EncoderModel::embed_features(const FeatureVector& fv) const {
  std::vector<float> out(d_);
  embed_features_into(fv, out);
  return out;
}

std::vector<float> EncoderModel::embed(std::string_view text) const {
  return embed_features(featurize(spec_, text));
}

std::vector<float> EncoderModel::embed_batch(std::span<const std::string> texts,
                                             unsigned threads) const {
  std::vector<float> out(texts.size() * d_);
  parallel_for(texts.size(), threads, [&](std::size_t i) {
    embed_features_into(featurize(spec_, texts[i]),
                        std::span<float>(out.data() + i * d_, d_));
  });
  return out;
}

void EncoderModel::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic(kMagic);
  w.put<std::uint32_t>(d_);
  w.put<std::uint32_t>(spec_.dim);
  w.put<std::uint32_t>(spec_.ngram_min);
  w.put<std::uint32_t>(spec_.ngram_max);
  w.put<std::uint64_t>(spec_.seed);
  std::vector<float> row(spec_.dim);
  for (std::uint32_t r = 0; r < d_; ++r) {
    for (std::uint32_t f = 0; f < spec_.dim; ++f) row[f] = weight(r, f);
    w.put_array<float>(row);
  }
  w.close();
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto d = r.get<std::uint32_t>();
  HashSpec spec;
  spec.dim = r.get<std::uint32_t>();
  spec.ngram_min = r.get<std::uint32_t>();
  spec.ngram_max = r.get<std::uint32_t>();
  spec.seed = r.get<std::uint64_t>();
  EncoderModel m(d, spec);
  std::vector<float> row(spec.dim);
  for (std::uint32_t rr = 0; rr < d; ++rr) {
    r.get_array<float>(row);
    for (std::uint32_t f = 0; f < spec.dim; ++f) m.set_weight(rr, f, row[f]);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in encoder file " + path.string());
  return m;
}

}  // namespace picl::encoder
