#include "picl/lm/neural.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <type_traits>

#include "picl/common.hpp"
#include "picl/io.hpp"
#include "picl/simd.hpp"

namespace picl::lm {

namespace {

constexpr std::string_view kMagic = "PICLNLM1";
constexpr TokenId kBoundary = corpus::Tokenizer::kDocBoundary;

template <typename T>
void axpy_n(T alpha, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().axpy(alpha, x, y, n);
  } else {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  }
}

template <typename T>
void gemv_n(const T* rows, std::size_t n_rows, std::size_t dim, const T* x, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().gemv(rows, n_rows, dim, x, out);
  } else {
    for (std::size_t r = 0; r < n_rows; ++r) {
      T s = 0;
      for (std::size_t i = 0; i < dim; ++i) s += rows[r * dim + i] * x[i];
      out[r] = s;
    }
  }
}

}  // namespace

template <typename T>
struct BasicNeuralLm<T>::Workspace {
  std::vector<T> x, hid, logits, dl, dh, dx, ds;
  double log_z = 0.0;
  T max_logit = 0;
  explicit Workspace(const NeuralLmShape& s)
      : x(std::size_t(s.context) * s.embed),
        hid(s.hidden),
        logits(s.vocab),
        dl(s.vocab),
        dh(s.hidden),
        dx(std::size_t(s.context) * s.embed),
        ds(s.embed) {}
};

template <typename T>
typename BasicNeuralLm<T>::Layout BasicNeuralLm<T>::layout_of(const NeuralLmShape& s) {
  Layout l{};
  const std::size_t v = s.vocab, c = s.context, e = s.embed, h = s.hidden;
  l.emb = 0;
  l.w1 = l.emb + v * e;
  l.b1 = l.w1 + h * c * e;
  l.ws = l.b1 + h;
  l.w2 = l.ws + (s.summary ? h * e : 0);
  l.b2 = l.w2 + v * h;
  l.total = l.b2 + v;
  return l;
}

template <typename T>
BasicNeuralLm<T>::BasicNeuralLm(corpus::Tokenizer tokenizer, NeuralLmShape shape)
    : tok_(std::move(tokenizer)), shape_(shape) {
  if (shape_.vocab == 0) shape_.vocab = static_cast<std::uint32_t>(tok_.vocab_size());
  if (shape_.vocab != tok_.vocab_size())
    throw ConfigError("model vocabulary " + std::to_string(shape_.vocab) +
                      " does not match the tokenizer's " + std::to_string(tok_.vocab_size()));
  if (shape_.context == 0 || shape_.embed == 0 || shape_.hidden == 0)
    throw ConfigError("neural LM dimensions must be positive");
  lay_ = layout_of(shape_);
  params_.assign(lay_.total, T(0));
}

template <typename T>
BasicNeuralLm<T> BasicNeuralLm<T>::random(corpus::Tokenizer tokenizer, NeuralLmShape shape,
                                          double scale, std::uint64_t seed) {
  BasicNeuralLm m(std::move(tokenizer), shape);
  Rng rng(seed);
  const auto& s = m.shape_;
  const auto& l = m.lay_;
  auto fill = [&](std::size_t from, std::size_t to, double sd) {
    for (std::size_t i = from; i < to; ++i) m.params_[i] = static_cast<T>(sd * standard_normal(rng));
  };
  fill(l.emb, l.w1, scale);
  fill(l.w1, l.b1, scale / std::sqrt(double(s.context) * s.embed));
  fill(l.b1, l.ws, 0.1 * scale);
  fill(l.ws, l.w2, scale / std::sqrt(double(s.embed)));
  fill(l.w2, l.b2, scale / std::sqrt(double(s.hidden)));
  fill(l.b2, l.total, 0.1 * scale);
  return m;
}

template <typename T>
std::span<const T> BasicNeuralLm<T>::embedding(TokenId id) const {
  return std::span<const T>(params_).subspan(lay_.emb + std::size_t(id) * shape_.embed, shape_.embed);
}

template <typename T>
void BasicNeuralLm<T>::forward(std::span<const TokenId> seq, std::size_t pos,
                               std::span<const T> summary, Workspace& ws) const {
  const std::size_t c = shape_.context, e = shape_.embed, h = shape_.hidden, v = shape_.vocab;
  for (std::size_t j = 0; j < c; ++j) {
    const std::ptrdiff_t idx = std::ptrdiff_t(pos) - std::ptrdiff_t(c) + std::ptrdiff_t(j);
    const TokenId tok = idx < 0 ? kBoundary : seq[idx];
    const auto row = embedding(tok);
    std::copy(row.begin(), row.end(), ws.x.begin() + j * e);
  }
  const T* p = params_.data();
  gemv_n(p + lay_.w1, h, c * e, ws.x.data(), ws.hid.data());
  for (std::size_t r = 0; r < h; ++r) ws.hid[r] += p[lay_.b1 + r];
  if (shape_.summary && !summary.empty()) {
    std::vector<T> extra(h);
    gemv_n(p + lay_.ws, h, e, summary.data(), extra.data());
    for (std::size_t r = 0; r < h; ++r) ws.hid[r] += extra[r];
  }
  for (auto& a : ws.hid) a = std::tanh(a);
  gemv_n(p + lay_.w2, v, h, ws.hid.data(), ws.logits.data());
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < v; ++k) {
    ws.logits[k] += p[lay_.b2 + k];
    mx = std::max(mx, ws.logits[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < v; ++k) z += std::exp(double(ws.logits[k] - mx));
  ws.max_logit = mx;
  ws.log_z = std::log(z);
}

template <typename T>
double BasicNeuralLm<T>::accumulate(std::span<const TokenId> seq, std::size_t from, std::size_t to,
                                    std::span<T> grad, T weight) const {
  if (from == 0 || from > to || to > seq.size())
    throw ConfigError("target positions must satisfy 1 <= from <= to <= length");
  for (auto t : seq)
    if (t >= shape_.vocab) throw ConfigError("token id outside the model vocabulary");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != params_.size()) throw ConfigError("gradient buffer size mismatch");
  const std::size_t c = shape_.context, e = shape_.embed, h = shape_.hidden, v = shape_.vocab;
  const T* p = params_.data();
  Workspace ws(shape_);

  // running sum of embeddings older than the window
  std::vector<T> prefix(e, T(0)), summary(e);
  std::size_t covered = 0;
  // per-position summary gradient divided by the number of summarized tokens
  std::vector<T> sgrad;
  if (shape_.summary && want_grad) sgrad.assign((to - from) * e, T(0));

  double nll = 0.0;
  for (std::size_t t = from; t < to; ++t) {
    const std::size_t m = t > c ? t - c : 0;
    std::span<const T> sum_view;
    if (shape_.summary && m > 0) {
      for (; covered < m; ++covered) axpy_n(T(1), embedding(seq[covered]).data(), prefix.data(), e);
      for (std::size_t i = 0; i < e; ++i) summary[i] = prefix[i] / T(m);
      sum_view = summary;
    }
    forward(seq, t, sum_view, ws);
    const TokenId target = seq[t];
    nll -= double(ws.logits[target] - ws.max_logit) - ws.log_z;
    if (!want_grad) continue;

    for (std::size_t k = 0; k < v; ++k)
      ws.dl[k] = weight * static_cast<T>(std::exp(double(ws.logits[k] - ws.max_logit) - ws.log_z));
    ws.dl[target] -= weight;
    T* g = grad.data();
    std::fill(ws.dh.begin(), ws.dh.end(), T(0));
    for (std::size_t k = 0; k < v; ++k) {
      axpy_n(ws.dl[k], ws.hid.data(), g + lay_.w2 + k * h, h);
      axpy_n(ws.dl[k], p + lay_.w2 + k * h, ws.dh.data(), h);
      g[lay_.b2 + k] += ws.dl[k];
    }
    for (std::size_t r = 0; r < h; ++r) ws.dh[r] *= T(1) - ws.hid[r] * ws.hid[r];
    std::fill(ws.dx.begin(), ws.dx.end(), T(0));
    for (std::size_t r = 0; r < h; ++r) {
      axpy_n(ws.dh[r], ws.x.data(), g + lay_.w1 + r * c * e, c * e);
      axpy_n(ws.dh[r], p + lay_.w1 + r * c * e, ws.dx.data(), c * e);
      g[lay_.b1 + r] += ws.dh[r];
    }
    for (std::size_t j = 0; j < c; ++j) {
      const std::ptrdiff_t idx = std::ptrdiff_t(t) - std::ptrdiff_t(c) + std::ptrdiff_t(j);
      const TokenId tok = idx < 0 ? kBoundary : seq[idx];
      axpy_n(T(1), ws.dx.data() + j * e, g + lay_.emb + std::size_t(tok) * e, e);
    }
    if (!sum_view.empty()) {
      std::fill(ws.ds.begin(), ws.ds.end(), T(0));
      for (std::size_t r = 0; r < h; ++r) {
        axpy_n(ws.dh[r], summary.data(), g + lay_.ws + r * e, e);
        axpy_n(ws.dh[r], p + lay_.ws + r * e, ws.ds.data(), e);
      }
      for (std::size_t i = 0; i < e; ++i) sgrad[(t - from) * e + i] = ws.ds[i] / T(m);
    }
  }

  // token i is summarized by every position t with t - c > i
  if (!sgrad.empty() && to > c + 1) {
    std::vector<T> running(e, T(0));
    for (std::size_t i = to - c - 1; i-- > 0;) {
      const std::size_t t = i + c + 1;
      if (t >= from && t < to) axpy_n(T(1), sgrad.data() + (t - from) * e, running.data(), e);
      axpy_n(T(1), running.data(), grad.data() + lay_.emb + std::size_t(seq[i]) * e, e);
    }
  }
  return nll;
}

template <typename T>
void BasicNeuralLm<T>::distribution(std::span<const TokenId> seq, std::size_t pos,
                                    std::span<double> out) const {
  const std::size_t c = shape_.context, e = shape_.embed;
  std::vector<T> summary;
  if (shape_.summary && pos > c) {
    summary.assign(e, T(0));
    for (std::size_t i = 0; i < pos - c; ++i) axpy_n(T(1), embedding(seq[i]).data(), summary.data(), e);
    for (auto& s : summary) s /= T(pos - c);
  }
  Workspace ws(shape_);
  forward(seq, pos, summary, ws);
  for (std::size_t k = 0; k < shape_.vocab; ++k)
    out[k] = std::exp(double(ws.logits[k] - ws.max_logit) - ws.log_z);
}

template <typename T>
Score BasicNeuralLm<T>::logprob(std::string_view text) {
  const auto seq = to_sequence(tok_, text);
  if (seq.size() < 2) return {};
  return {-accumulate(seq, 1, seq.size()), seq.size() - 1};
}

template <typename T>
void BasicNeuralLm<T>::next_logprobs(std::span<const TokenId> prefix, std::span<double> out) const {
  std::vector<TokenId> seq;
  seq.reserve(prefix.size() + 2);
  seq.push_back(kBoundary);
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  const std::size_t pos = seq.size();
  seq.push_back(kBoundary);
  distribution(seq, pos, out);
  for (auto& x : out) x = std::log(x);
}

template <typename T>
std::string BasicNeuralLm<T>::describe() const {
  return "neural:c" + std::to_string(shape_.context) + "e" + std::to_string(shape_.embed) + "h" +
         std::to_string(shape_.hidden) + (shape_.summary ? "s" : "");
}

template <typename T>
void BasicNeuralLm<T>::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic(kMagic);
  w.put<std::uint32_t>(shape_.vocab);
  w.put<std::uint32_t>(shape_.context);
  w.put<std::uint32_t>(shape_.embed);
  w.put<std::uint32_t>(shape_.hidden);
  w.put<std::uint32_t>(shape_.summary ? 1u : 0u);
  w.put_string(tok_.to_json().dump());
  std::vector<float> flat(params_.begin(), params_.end());
  w.put_array<float>(flat);
  w.close();
}

template <typename T>
BasicNeuralLm<T> BasicNeuralLm<T>::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  NeuralLmShape s;
  s.vocab = r.get<std::uint32_t>();
  s.context = r.get<std::uint32_t>();
  s.embed = r.get<std::uint32_t>();
  s.hidden = r.get<std::uint32_t>();
  s.summary = r.get<std::uint32_t>() != 0;
  auto tok = corpus::Tokenizer::from_json(nlohmann::json::parse(r.get_string()));
  BasicNeuralLm m(std::move(tok), s);
  std::vector<float> flat(m.params_.size());
  r.get_array<float>(flat);
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  std::copy(flat.begin(), flat.end(), m.params_.begin());
  return m;
}

template class BasicNeuralLm<float>;
template class BasicNeuralLm<double>;

std::vector<TokenId> to_sequence(const corpus::Tokenizer& tok, std::string_view text) {
  std::vector<TokenId> seq{kBoundary};
  const auto ids = tok.encode(text);
  seq.insert(seq.end(), ids.begin(), ids.end());
  return seq;
}

template <typename T>
double lm_loss(const BasicNeuralLm<T>& model, std::span<const TokenId> seq) {
  if (seq.size() < 2) throw ConfigError("lm_loss needs a sequence of length >= 2");
  return model.accumulate(seq, 1, seq.size()) / double(seq.size() - 1);
}

template double lm_loss(const BasicNeuralLm<float>&, std::span<const TokenId>);
template double lm_loss(const BasicNeuralLm<double>&, std::span<const TokenId>);

GradCheckResult grad_check_lm(const BasicNeuralLm<double>& model,
                              const std::vector<std::vector<TokenId>>& batch, double eps,
                              std::size_t n_samples, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  std::size_t positions = 0;
  for (const auto& s : batch) {
    if (s.size() < 2) throw ConfigError("grad check sequences need length >= 2");
    positions += s.size() - 1;
  }
  if (positions == 0) throw ConfigError("grad check needs a non-empty batch");
  const double w = 1.0 / double(positions);
  auto loss = [&](const BasicNeuralLm<double>& m) {
    double total = 0.0;
    for (const auto& s : batch) total += m.accumulate(s, 1, s.size());
    return total * w;
  };
  std::vector<double> grad(model.param_count(), 0.0);
  for (const auto& s : batch) model.accumulate(s, 1, s.size(), grad, w);

  // parameters outside the embedding table are touched by every position
  const auto& sh = model.shape();
  const std::size_t emb_end = std::size_t(sh.vocab) * sh.embed;
  std::set<TokenId> present{kBoundary};
  for (const auto& s : batch) present.insert(s.begin(), s.end());
  std::vector<std::size_t> touched;
  for (auto tkn : present)
    for (std::size_t i = 0; i < sh.embed; ++i) touched.push_back(std::size_t(tkn) * sh.embed + i);

  Rng rng(seed);
  BasicNeuralLm<double> probe = model;
  GradCheckResult res;
  for (std::size_t k = 0; k < n_samples; ++k) {
    std::size_t idx;
    if (k % 2 == 0) {
      const std::size_t pool = touched.size() + (model.param_count() - emb_end);
      const std::size_t pick = uniform_index(rng, pool);
      idx = pick < touched.size() ? touched[pick] : emb_end + (pick - touched.size());
    } else {
      idx = uniform_index(rng, model.param_count());
    }
    const double orig = probe.params()[idx];
    probe.params()[idx] = orig + eps;
    const double up = loss(probe);
    probe.params()[idx] = orig - eps;
    const double down = loss(probe);
    probe.params()[idx] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(grad[idx]), std::abs(numeric), 1e-6});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(grad[idx] - numeric) / denom);
    ++res.n_checked;
  }
  return res;
}

std::vector<Window> make_windows(const std::vector<std::vector<TokenId>>& seqs, std::size_t length) {
  if (length == 0) throw ConfigError("window length must be positive");
  const std::size_t stride = std::max<std::size_t>(1, length / 2);
  std::vector<Window> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const std::size_t len = seqs[s].size();
    if (len < 2) continue;
    for (std::size_t from = 1; from < len; from += stride) {
      const std::size_t to = std::min(len, from + length);
      out.push_back({s, from, to});
      if (to == len) break;
    }
  }
  return out;
}

MixCurves train_mixed(NeuralLm& model, const std::vector<std::vector<TokenId>>& icl,
                      const std::vector<std::vector<TokenId>>& docs, const MixConfig& config,
                      const std::function<void(std::size_t, double, double)>& on_step) {
  if (!(config.alpha >= 0.0 && config.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (config.batch == 0) throw ConfigError("batch must be >= 1");
  const std::size_t len = config.window ? config.window : model.shape().context;
  const auto icl_windows = make_windows(icl, len);
  const auto doc_windows = make_windows(docs, len);
  if (config.alpha > 0.0 && icl_windows.empty())
    throw ConfigError("alpha > 0 needs non-empty ICL instances");
  if (config.alpha < 1.0 && doc_windows.empty())
    throw ConfigError("alpha < 1 needs non-empty full documents");

  Rng rng_icl(derive_seed(config.seed, "icl"));
  Rng rng_lm(derive_seed(config.seed, "lm"));
  std::vector<float> grad(model.param_count());
  MixCurves curves;

  auto run_source = [&](const std::vector<std::vector<TokenId>>& seqs, const std::vector<Window>& wins,
                        Rng& rng, double coef) {
    std::vector<Window> drawn(config.batch);
    std::size_t positions = 0;
    for (auto& w : drawn) {
      w = wins[uniform_index(rng, wins.size())];
      positions += w.to - w.from;
    }
    const float weight = static_cast<float>(coef / double(positions));
    double nll = 0.0;
    for (const auto& w : drawn)
      nll += model.accumulate(seqs[w.seq], w.from, w.to,
                              coef > 0.0 ? std::span<float>(grad) : std::span<float>(), weight);
    return nll / double(positions);
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0f);
    double li = 0.0, ll = 0.0;
    if (!icl_windows.empty()) li = run_source(icl, icl_windows, rng_icl, config.alpha);
    if (!doc_windows.empty()) ll = run_source(docs, doc_windows, rng_lm, 1.0 - config.alpha);
    const double total = config.alpha * li + (1.0 - config.alpha) * ll;
    if (!std::isfinite(total))
      throw Error("non-finite training loss at step " + std::to_string(step));
    if (config.clip > 0.0) {
      double sq = 0.0;
      for (float g : grad) sq += double(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > config.clip) {
        const float f = static_cast<float>(config.clip / norm);
        for (auto& g : grad) g *= f;
      }
    }
    simd::axpy(static_cast<float>(-config.lr), grad, model.params());
    if (!icl_windows.empty()) curves.icl_loss.push_back(li);
    if (!doc_windows.empty()) curves.lm_loss.push_back(ll);
    if (on_step) on_step(step, li, ll);
  }
  return curves;
}

}  // namespace picl::lm
