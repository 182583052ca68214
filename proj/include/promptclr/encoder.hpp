#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "promptclr/common.hpp"
#include "promptclr/prompting.hpp"

namespace promptclr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int num_layers = 2;
  int num_heads = 4;
  int max_seq_len = 128;
  int feedforward_width = 256;
  double dropout = 0.0;

  int head_dim() const { return d_model / num_heads; }

  void validate() const {
    if (vocab_size <= 0 || d_model <= 0 || num_layers <= 0 || num_heads <= 0 || max_seq_len <= 0 ||
        feedforward_width <= 0)
      throw ConfigError("model config: all sizes must be positive");
    if (d_model % num_heads != 0)
      throw ConfigError("model config: d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
       {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
       {"max_seq_len", c.max_seq_len}, {"feedforward_width", c.feedforward_width},
       {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("feedforward_width").get_to(c.feedforward_width);
  c.dropout = j.value("dropout", 0.0);
}

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

// All trainable tensors. Row vectors are stored as 1 x n matrices so every
// tensor can be visited uniformly.
struct Parameters {
  ModelConfig config;
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_seq_len x d
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;
  Matrix output_words;  // V x d; row v is the MLM head vector for word v

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("token_embedding", self.token_embedding);
    f("position_embedding", self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "bq", L.bq);
      f(p + "wk", L.wk);
      f(p + "bk", L.bk);
      f(p + "wv", L.wv);
      f(p + "bv", L.bv);
      f(p + "wo", L.wo);
      f(p + "bo", L.bo);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("final_gain", self.final_gain);
    f("final_bias", self.final_bias);
    f("output_words", self.output_words);
  }
  template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  void set_zero() {
    for_each([](const std::string&, Matrix& m) { m.setZero(); });
  }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.set_zero();
    return z;
  }

  // this += scale * other
  void add_scaled(const Parameters& other, double scale = 1.0) {
    auto mine = tensors();
    const auto theirs = other.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] += scale * *theirs[i];
  }

  bool operator==(const Parameters& o) const {
    const auto a = tensors();
    const auto b = o.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
    return true;
  }
};

inline double max_abs_difference(const Parameters& a, const Parameters& b) {
  const auto x = a.tensors();
  const auto y = b.tensors();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, (*x[i] - *y[i]).cwiseAbs().maxCoeff());
  return worst;
}

inline Parameters init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const auto d = config.d_model;
  const auto f = config.feedforward_width;
  const auto normal = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 0.02);
    return m;
  };
  const auto ones = [](int n) { return Matrix::Ones(1, n).eval(); };
  const auto zeros = [](int n) { return Matrix::Zero(1, n).eval(); };

  Parameters p;
  p.config = config;
  p.token_embedding = normal(config.vocab_size, d);
  p.position_embedding = normal(config.max_seq_len, d);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams L;
    L.ln1_gain = ones(d);
    L.ln1_bias = zeros(d);
    L.wq = normal(d, d);
    L.bq = zeros(d);
    L.wk = normal(d, d);
    L.bk = zeros(d);
    L.wv = normal(d, d);
    L.bv = zeros(d);
    L.wo = normal(d, d);
    L.bo = zeros(d);
    L.ln2_gain = ones(d);
    L.ln2_bias = zeros(d);
    L.w1 = normal(d, f);
    L.b1 = zeros(f);
    L.w2 = normal(f, d);
    L.b2 = zeros(d);
    p.layers.push_back(std::move(L));
  }
  p.final_gain = ones(d);
  p.final_bias = zeros(d);
  p.output_words = normal(config.vocab_size, d);
  return p;
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

struct LayerNormCache {
  Matrix normalized;  // x-hat
  Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const auto n = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const auto centered = (x.row(r).array() - mean).matrix();
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
  }
  Matrix y = (cache.normalized.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix& dgain,
                                  Matrix& dbias) {
  dgain.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / n;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_tanh(double x) { return std::tanh(kGeluC * (x + 0.044715 * x * x * x)); }

// t = gelu_tanh(x), cached from the forward pass.
inline double gelu_grad(double x, double t) {
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive.
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return {};
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->bernoulli(rate) ? 0.0 : keep;
  return m;
}

inline void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size()) x.array() *= mask.array();
}

struct LayerCache {
  Matrix input;
  LayerNormCache ln1;
  Matrix attn_in;  // LN1 output
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, L x L
  Matrix heads;               // concatenated head outputs, L x d
  Matrix attn_drop;
  Matrix mid;
  LayerNormCache ln2;
  Matrix ffn_in;  // LN2 output
  Matrix pre_act, act;
  Matrix gelu_t;  // tanh term of GELU at pre_act
  Matrix ffn_drop;
};

}  // namespace detail

// Everything backward() needs from one forward pass of one sequence.
struct ForwardCache {
  std::vector<TokenId> ids;
  std::vector<char> key_is_pad;
  Matrix embed_drop;
  std::vector<detail::LayerCache> layers;
  detail::LayerNormCache final_ln;
  Matrix hidden;  // L x d final-layer states
};

using HiddenStates = Matrix;

inline void check_input(const Parameters& params, std::span<const TokenId> ids) {
  if (ids.size() > static_cast<std::size_t>(params.config.max_seq_len))
    throw SequenceLengthError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                              std::to_string(params.config.max_seq_len));
  for (const auto id : ids)
    if (id < 0 || id >= params.config.vocab_size)
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(params.config.vocab_size));
}

// Pre-LN transformer encoder. [PAD] keys are excluded from attention. Dropout
// is active only when train_mode is set and a dropout stream is given.
inline ForwardCache forward_cached(const Parameters& params, std::span<const TokenId> ids, bool train_mode = false,
                                   Rng* dropout_rng = nullptr) {
  check_input(params, ids);
  const auto& cfg = params.config;
  const auto L = static_cast<Eigen::Index>(ids.size());
  const auto d = cfg.d_model;
  const auto dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double rate = train_mode ? cfg.dropout : 0.0;
  Rng* drng = train_mode ? dropout_rng : nullptr;

  ForwardCache c;
  c.ids.assign(ids.begin(), ids.end());
  c.key_is_pad.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) c.key_is_pad[i] = ids[i] == Vocabulary::pad_id;

  Matrix x(L, d);
  for (Eigen::Index i = 0; i < L; ++i)
    x.row(i) = params.token_embedding.row(ids[static_cast<std::size_t>(i)]) + params.position_embedding.row(i);
  c.embed_drop = detail::dropout_mask(L, d, rate, drng);
  detail::apply_mask(x, c.embed_drop);

  for (const auto& P : params.layers) {
    detail::LayerCache lc;
    lc.input = x;
    lc.attn_in = detail::layer_norm(x, P.ln1_gain, P.ln1_bias, lc.ln1);
    lc.q = lc.attn_in * P.wq;
    lc.q.rowwise() += P.bq.row(0);
    lc.k = lc.attn_in * P.wk;
    lc.k.rowwise() += P.bk.row(0);
    lc.v = lc.attn_in * P.wv;
    lc.v.rowwise() += P.bv.row(0);
    lc.heads.resize(L, d);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      Matrix s = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < L; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < L; ++j)
          if (!c.key_is_pad[static_cast<std::size_t>(j)]) mx = std::max(mx, s(r, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) {
          const double e = c.key_is_pad[static_cast<std::size_t>(j)] ? 0.0 : std::exp(s(r, j) - mx);
          s(r, j) = e;
          sum += e;
        }
        if (sum > 0.0) s.row(r) /= sum;
      }
      lc.heads.middleCols(h * dh, dh) = s * vh;
      lc.probs.push_back(std::move(s));
    }
    Matrix y = lc.heads * P.wo;
    y.rowwise() += P.bo.row(0);
    lc.attn_drop = detail::dropout_mask(L, d, rate, drng);
    detail::apply_mask(y, lc.attn_drop);
    lc.mid = x + y;

    lc.ffn_in = detail::layer_norm(lc.mid, P.ln2_gain, P.ln2_bias, lc.ln2);
    lc.pre_act = lc.ffn_in * P.w1;
    lc.pre_act.rowwise() += P.b1.row(0);
    lc.gelu_t = lc.pre_act.unaryExpr([](double v) { return detail::gelu_tanh(v); });
    lc.act = 0.5 * lc.pre_act.array() * (1.0 + lc.gelu_t.array());
    Matrix f = lc.act * P.w2;
    f.rowwise() += P.b2.row(0);
    lc.ffn_drop = detail::dropout_mask(L, d, rate, drng);
    detail::apply_mask(f, lc.ffn_drop);
    x = lc.mid + f;
    c.layers.push_back(std::move(lc));
  }
  c.hidden = detail::layer_norm(x, params.final_gain, params.final_bias, c.final_ln);
  return c;
}

inline HiddenStates forward(const Parameters& params, std::span<const TokenId> ids, bool train_mode = false,
                            Rng* dropout_rng = nullptr) {
  return forward_cached(params, ids, train_mode, dropout_rng).hidden;
}

// Accumulates d(loss)/d(params) into grads given d(loss)/d(hidden). `params`
// must be the tensors the cache was computed with.
inline void backward(const Parameters& params, const ForwardCache& c, const Matrix& dhidden, Parameters& grads) {
  const auto& cfg = params.config;
  const auto L = static_cast<Eigen::Index>(c.ids.size());
  const auto dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dx = detail::layer_norm_backward(dhidden, params.final_gain, c.final_ln, grads.final_gain, grads.final_bias);

  for (auto l = static_cast<std::ptrdiff_t>(params.layers.size()) - 1; l >= 0; --l) {
    const auto& P = params.layers[static_cast<std::size_t>(l)];
    auto& G = grads.layers[static_cast<std::size_t>(l)];
    const auto& lc = c.layers[static_cast<std::size_t>(l)];

    // Feedforward branch.
    Matrix df = dx;
    detail::apply_mask(df, lc.ffn_drop);
    G.w2.noalias() += lc.act.transpose() * df;
    G.b2.row(0) += df.colwise().sum();
    Matrix dact = df * P.w2.transpose();
    Matrix dpre = dact.array() * lc.pre_act.binaryExpr(lc.gelu_t, [](double v, double t) { return detail::gelu_grad(v, t); }).array();
    G.w1.noalias() += lc.ffn_in.transpose() * dpre;
    G.b1.row(0) += dpre.colwise().sum();
    Matrix dffn_in = dpre * P.w1.transpose();
    Matrix dmid = dx + detail::layer_norm_backward(dffn_in, P.ln2_gain, lc.ln2, G.ln2_gain, G.ln2_bias);

    // Attention branch.
    Matrix dy = dmid;
    detail::apply_mask(dy, lc.attn_drop);
    G.wo.noalias() += lc.heads.transpose() * dy;
    G.bo.row(0) += dy.colwise().sum();
    const Matrix dheads = dy * P.wo.transpose();
    Matrix dq(L, cfg.d_model), dk(L, cfg.d_model), dv(L, cfg.d_model);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto& prob = lc.probs[static_cast<std::size_t>(h)];
      const auto dout = dheads.middleCols(h * dh, dh);
      const Matrix dprob = dout * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = prob.transpose() * dout;
      Matrix ds = prob.array() * (dprob.array().colwise() - (dprob.array() * prob.array()).rowwise().sum());
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    G.wq.noalias() += lc.attn_in.transpose() * dq;
    G.bq.row(0) += dq.colwise().sum();
    G.wk.noalias() += lc.attn_in.transpose() * dk;
    G.bk.row(0) += dk.colwise().sum();
    G.wv.noalias() += lc.attn_in.transpose() * dv;
    G.bv.row(0) += dv.colwise().sum();
    Matrix dattn_in = dq * P.wq.transpose() + dk * P.wk.transpose() + dv * P.wv.transpose();
    dx = dmid + detail::layer_norm_backward(dattn_in, P.ln1_gain, lc.ln1, G.ln1_gain, G.ln1_bias);
  }

  detail::apply_mask(dx, c.embed_drop);
  for (Eigen::Index i = 0; i < L; ++i) {
    grads.token_embedding.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

enum class Representation { mask_token, cls_token };

inline std::string to_string(Representation r) { return r == Representation::mask_token ? "mask" : "cls"; }

inline Representation parse_representation(const std::string& s) {
  if (s == "mask" || s == "mask_token") return Representation::mask_token;
  if (s == "cls" || s == "cls_token") return Representation::cls_token;
  throw ConfigError("unknown representation '" + s + "'");
}

inline std::size_t representation_row(const PromptedText& prompted, Representation mode) {
  if (mode == Representation::cls_token) return 0;
  if (!prompted.mask_position) throw ExtractionError("prompt has no [MASK] position");
  return *prompted.mask_position;
}

// Unit-norm feature taken at [MASK] (or [CLS]).
inline Vector extract_representation(const HiddenStates& hidden, const PromptedText& prompted, Representation mode) {
  const auto row = static_cast<Eigen::Index>(representation_row(prompted, mode));
  if (row >= hidden.rows()) throw ExtractionError("representation row outside hidden states");
  Vector h = hidden.row(row).transpose();
  const double norm = h.norm();
  if (!(norm > 0.0)) throw ExtractionError("zero hidden state cannot be normalized");
  return h / norm;
}

// Gradient of z = h/|h| pulled back to h.
inline Vector normalize_backward(const Vector& h, const Vector& dz) {
  const double norm = h.norm();
  const Vector z = h / norm;
  return (dz - z * z.dot(dz)) / norm;
}

inline Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

// Logits w_{V(y)} . h_mask for every class y.
inline Vector label_word_logits(const HiddenStates& hidden, const PromptedText& prompted,
                                std::span<const TokenId> label_ids, const Parameters& params) {
  if (!prompted.mask_position) throw ExtractionError("prompt has no [MASK] position");
  const auto h = hidden.row(static_cast<Eigen::Index>(*prompted.mask_position));
  Vector logits(static_cast<Eigen::Index>(label_ids.size()));
  for (std::size_t y = 0; y < label_ids.size(); ++y)
    logits(static_cast<Eigen::Index>(y)) = params.output_words.row(label_ids[y]).dot(h);
  return logits;
}

// Softmax restricted to the label words.
inline Vector label_word_distribution(const HiddenStates& hidden, const PromptedText& prompted,
                                      std::span<const TokenId> label_ids, const Parameters& params) {
  return softmax(label_word_logits(hidden, prompted, label_ids, params));
}

// --- checkpoints -----------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'L', 'R', 'C', 'K', 'P', '1'};

// `<stem>.bin` holds the magic followed by every tensor's float64 data in visit
// order; `<stem>.json` records names, shapes, byte offsets and the config.
inline void save_checkpoint(const Parameters& params, const std::string& stem) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  nlohmann::json meta;
  meta["format"] = "promptclr-checkpoint-v1";
  meta["config"] = params.config;
  meta["tensors"] = nlohmann::json::array();
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw Error("cannot write checkpoint '" + stem + ".bin'");
  bin.write(kCheckpointMagic, sizeof kCheckpointMagic);
  std::uint64_t offset = sizeof kCheckpointMagic;
  params.for_each([&](const std::string& name, const Matrix& m) {
    meta["tensors"].push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    const auto bytes = static_cast<std::streamsize>(m.size() * sizeof(double));
    bin.write(reinterpret_cast<const char*>(m.data()), bytes);
    offset += static_cast<std::uint64_t>(bytes);
  });
  if (!bin) throw Error("short write to checkpoint '" + stem + ".bin'");
  std::ofstream js(stem + ".json");
  js << meta.dump(2) << '\n';
}

inline Parameters load_checkpoint(const std::string& stem) {
  std::ifstream js(stem + ".json");
  if (!js) throw ParseError("cannot open checkpoint sidecar '" + stem + ".json'");
  const auto meta = nlohmann::json::parse(js);
  const auto config = meta.at("config").get<ModelConfig>();
  config.validate();
  Rng unused(0);
  Parameters params = init_params(config, unused);

  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw ParseError("cannot open checkpoint '" + stem + ".bin'");
  char magic[sizeof kCheckpointMagic];
  bin.read(magic, sizeof magic);
  if (!bin || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ParseError("'" + stem + ".bin' is not a checkpoint");
  const auto& entries = meta.at("tensors");
  std::size_t k = 0;
  params.for_each([&](const std::string& name, Matrix& m) {
    if (k >= entries.size()) throw ParseError("checkpoint sidecar lists too few tensors");
    const auto& e = entries[k++];
    if (e.at("name") != name || e.at("shape")[0] != m.rows() || e.at("shape")[1] != m.cols())
      throw ParseError("checkpoint tensor mismatch at '" + name + "'");
    bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!bin) throw ParseError("checkpoint truncated at '" + name + "'");
  });
  if (k != entries.size()) throw ParseError("checkpoint sidecar lists extra tensors");
  return params;
}

}  // namespace promptclr
