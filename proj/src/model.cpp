#include "orca/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace orca {

namespace {

constexpr std::array<std::string_view, kNumSegments> kSegmentNames = {
    "tok_emb",  "pos_emb",   "attn_q_w",  "attn_q_b", "attn_k_w", "attn_rel_bias",
    "attn_v_w", "attn_v_b",  "attn_o_w",  "attn_o_b", "ffn_in_w", "ffn_in_b",
    "ffn_out_w", "ffn_out_b", "norm_gain", "norm_bias", "out_bias", "soft_prompt",
};

constexpr double kNormEps = 1e-5;

// Number of terms accumulated sequentially before blocks are summed. Fixed so
// that batch gradients are bit-identical for any worker count.
constexpr std::size_t kGradientBlock = 16;

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y = x W + b with W row-major (in x out).
void affine(const double* x, const double* w, const double* b, double* y, std::size_t in, std::size_t out) {
  if (b != nullptr) {
    std::copy(b, b + out, y);
  } else {
    std::fill(y, y + out, 0.0);
  }
  for (std::size_t i = 0; i < in; ++i) axpy(x[i], w + i * out, y, out);
}

// dx = W dy (dx has `in` entries).
void affine_backward_input(const double* w, const double* dy, double* dx, std::size_t in, std::size_t out) {
  for (std::size_t i = 0; i < in; ++i) dx[i] = dot(w + i * out, dy, out);
}

// dW += x^T dy
void outer_accumulate(const double* x, const double* dy, double* dw, std::size_t in, std::size_t out) {
  for (std::size_t i = 0; i < in; ++i) {
    if (x[i] != 0.0) axpy(x[i], dy, dw + i * out, out);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
  if (context_len <= 0) throw ConfigError("model: context_len must be positive");
  if (dim <= 0 || ffn_dim <= 0) throw ConfigError("model: dim and ffn_dim must be positive");
  if (prompt_len < 0) throw ConfigError("model: prompt_len must be non-negative");
  if (heads < 1 || dim % heads != 0) throw ConfigError("model: dim must be a positive multiple of heads");
  if (rel_window < 0) throw ConfigError("model: rel_window must be non-negative");
  if (pad_id < 0 || pad_id >= vocab_size || mask_id < 0 || mask_id >= vocab_size || pad_id == mask_id) {
    throw ConfigError("model: pad_id/mask_id must be distinct ids inside the vocabulary");
  }
}

std::string_view segment_name(Segment s) { return kSegmentNames[static_cast<int>(s)]; }

Segment segment_from_name(std::string_view name) {
  for (int i = 0; i < kNumSegments; ++i) {
    if (kSegmentNames[i] == name) return static_cast<Segment>(i);
  }
  throw ConfigError("unknown parameter segment '" + std::string(name) + "'");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t v = cfg.vocab_size, l = cfg.context_len, d = cfg.dim, f = cfg.ffn_dim, p = cfg.prompt_len;
  const std::size_t rb = static_cast<std::size_t>(cfg.heads) * static_cast<std::size_t>(cfg.rel_buckets());
  const std::array<std::size_t, kNumSegments> sizes = {
      v * d, l * d, d * d, d, d * d, rb, d * d, d, d * d, d, d * f, f, f * d, d, d, d, v, p * d,
  };
  std::size_t offset = 0;
  for (int i = 0; i < kNumSegments; ++i) {
    spans_[i] = SegmentSpan{offset, sizes[i]};
    offset += sizes[i];
  }
  total_ = offset;
}

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg), layout_(cfg), values_(layout_.total(), 0.0) {}

ModelParams ModelParams::random(const ModelConfig& cfg, std::uint64_t seed, double init_scale) {
  ModelParams p(cfg);
  Rng rng(seed);
  for (double& v : p.values_) v = init_scale * rng.normal();
  for (Segment s : {Segment::kQueryBias, Segment::kRelativeBias, Segment::kValueBias, Segment::kAttnOutBias, Segment::kFfnInBias,
                    Segment::kFfnOutBias, Segment::kNormBias, Segment::kOutputBias}) {
    auto seg = p.segment(s);
    std::fill(seg.begin(), seg.end(), 0.0);
  }
  auto gain = p.segment(Segment::kNormGain);
  std::fill(gain.begin(), gain.end(), 1.0);
  return p;
}

std::span<const double> ModelParams::segment(Segment s) const {
  const auto& sp = layout_[s];
  return std::span<const double>(values_).subspan(sp.offset, sp.size);
}

std::span<double> ModelParams::segment(Segment s) {
  const auto& sp = layout_[s];
  return std::span<double>(values_).subspan(sp.offset, sp.size);
}

void ModelParams::assign(std::span<const double> values) {
  if (values.size() != values_.size()) {
    throw ConfigError("parameter vector has " + std::to_string(values.size()) + " entries, layout needs " +
                      std::to_string(values_.size()));
  }
  std::copy(values.begin(), values.end(), values_.begin());
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

GradientFilter GradientFilter::by_id(const std::string& id) {
  GradientFilter f;
  f.id_ = id;
  if (id == "all") {
    f.mask_.fill(true);
  } else if (id == "lm") {
    f.mask_.fill(true);
    f.mask_[static_cast<int>(Segment::kSoftPrompt)] = false;
  } else if (id == "head") {
    for (Segment s : {Segment::kFfnInWeight, Segment::kFfnInBias, Segment::kFfnOutWeight, Segment::kFfnOutBias,
                      Segment::kNormGain, Segment::kNormBias, Segment::kOutputBias}) {
      f.mask_[static_cast<int>(s)] = true;
    }
  } else {
    throw ConfigError("unknown gradient filter '" + id + "' (expected all, lm or head)");
  }
  return f;
}

std::size_t GradientFilter::dimension(const ParamLayout& layout) const {
  std::size_t n = 0;
  for (int i = 0; i < kNumSegments; ++i) {
    if (mask_[i]) n += layout[static_cast<Segment>(i)].size;
  }
  return n;
}

void GradientFilter::extract(const ParamLayout& layout, std::span<const double> full, std::span<double> out) const {
  std::size_t pos = 0;
  for (int i = 0; i < kNumSegments; ++i) {
    if (!mask_[i]) continue;
    const auto& sp = layout[static_cast<Segment>(i)];
    std::copy_n(full.begin() + static_cast<std::ptrdiff_t>(sp.offset), sp.size,
                out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += sp.size;
  }
}

LossTerm lm_term(const PretrainExample& ex) {
  return LossTerm{ex.context, ex.masked_position, ex.masked_token, false};
}

LossTerm task_term(const TaskExample& x, const Template& tpl, const Verbalizer& vb, const ModelConfig& cfg) {
  auto rendered = apply_template(x, tpl, static_cast<std::size_t>(cfg.context_len), cfg.special());
  return LossTerm{std::move(rendered.context), rendered.mask_position, vb.token(x.label), true};
}

MaskedLm::MaskedLm(const ModelParams& params) : params_(params), cfg_(params.config()) {}

void MaskedLm::check_term(std::span<const TokenId> context, std::uint32_t position) const {
  if (context.size() != static_cast<std::size_t>(cfg_.context_len)) {
    throw ConfigError("context length " + std::to_string(context.size()) + " does not match model length " +
                      std::to_string(cfg_.context_len));
  }
  if (position >= context.size()) throw ConfigError("masked position outside context");
  for (TokenId t : context) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw ConfigError("token id " + std::to_string(t) + " outside model vocabulary");
    }
  }
  if (context[position] == cfg_.pad_id) throw ConfigError("query position holds padding");
}

void MaskedLm::forward(std::span<const TokenId> context, std::uint32_t position, bool with_prompt,
                       Workspace& ws) const {
  check_term(context, position);
  const std::size_t d = cfg_.dim, f = cfg_.ffn_dim, v = cfg_.vocab_size, l = cfg_.context_len;
  const std::size_t prompt = with_prompt ? static_cast<std::size_t>(cfg_.prompt_len) : 0;
  const std::size_t rows = prompt + l;
  const std::size_t qrow = prompt + position;
  const double* emb = params_.segment(Segment::kTokenEmbedding).data();
  const double* pos = params_.segment(Segment::kPositionEmbedding).data();
  const double* soft = params_.segment(Segment::kSoftPrompt).data();

  ws.inputs.assign(rows * d, 0.0);
  ws.valid.clear();
  for (std::size_t r = 0; r < prompt; ++r) {
    std::copy(soft + r * d, soft + (r + 1) * d, ws.inputs.data() + r * d);
    ws.valid.push_back(r);
  }
  for (std::size_t j = 0; j < l; ++j) {
    const TokenId t = context[j];
    if (t == cfg_.pad_id) continue;
    double* x = ws.inputs.data() + (prompt + j) * d;
    const double* e = emb + static_cast<std::size_t>(t) * d;
    const double* p = pos + j * d;
    for (std::size_t i = 0; i < d; ++i) x[i] = e[i] + p[i];
    ws.valid.push_back(prompt + j);
  }

  // Soft-prompt rows fall in the far-left bucket.
  const int window = cfg_.rel_window;
  ws.bucket.resize(ws.valid.size());
  for (std::size_t k = 0; k < ws.valid.size(); ++k) {
    const long off = static_cast<long>(ws.valid[k]) - static_cast<long>(qrow);
    const long clamped = ws.valid[k] < prompt ? -window - 1 : std::clamp<long>(off, -window - 1, window + 1);
    ws.bucket[k] = static_cast<std::size_t>(clamped + window + 1);
  }

  const double* xq = ws.inputs.data() + qrow * d;
  ws.query_in.assign(xq, xq + d);
  ws.query.resize(d);
  affine(xq, params_.segment(Segment::kQueryWeight).data(), params_.segment(Segment::kQueryBias).data(),
         ws.query.data(), d, d);

  const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = d / heads;
  const std::size_t nb = static_cast<std::size_t>(cfg_.rel_buckets());
  const double* wk = params_.segment(Segment::kKeyWeight).data();
  const double* rel = params_.segment(Segment::kRelativeBias).data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nv = ws.valid.size();
  ws.key_query.assign(heads * d, 0.0);
  ws.scores.resize(heads * nv);
  ws.attn.resize(heads * nv);
  ws.mixed.assign(heads * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    // key_query_h = W_k[:, head h] query[head h]
    double* kq = ws.key_query.data() + h * d;
    for (std::size_t i = 0; i < d; ++i) kq[i] = dot(wk + i * d + h * dh, ws.query.data() + h * dh, dh);
    double* sc = ws.scores.data() + h * nv;
    double* at = ws.attn.data() + h * nv;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nv; ++k) {
      sc[k] = scale * dot(ws.inputs.data() + ws.valid[k] * d, kq, d) + rel[h * nb + ws.bucket[k]];
      max_score = std::max(max_score, sc[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < nv; ++k) {
      at[k] = std::exp(sc[k] - max_score);
      z += at[k];
    }
    double* mx = ws.mixed.data() + h * d;
    for (std::size_t k = 0; k < nv; ++k) {
      at[k] /= z;
      axpy(at[k], ws.inputs.data() + ws.valid[k] * d, mx, d);
    }
  }

  // value[head h] = mixed_h W_v[:, head h] + b_v[head h]
  const double* wv = params_.segment(Segment::kValueWeight).data();
  const double* bv = params_.segment(Segment::kValueBias).data();
  ws.value.resize(d);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* mx = ws.mixed.data() + h * d;
    double* val = ws.value.data() + h * dh;
    std::copy(bv + h * dh, bv + (h + 1) * dh, val);
    for (std::size_t i = 0; i < d; ++i) axpy(mx[i], wv + i * d + h * dh, val, dh);
  }
  ws.attn_out.resize(d);
  affine(ws.value.data(), params_.segment(Segment::kAttnOutWeight).data(),
         params_.segment(Segment::kAttnOutBias).data(), ws.attn_out.data(), d, d);
  ws.resid1.resize(d);
  for (std::size_t i = 0; i < d; ++i) ws.resid1[i] = xq[i] + ws.attn_out[i];

  ws.ffn_pre.resize(f);
  affine(ws.resid1.data(), params_.segment(Segment::kFfnInWeight).data(), params_.segment(Segment::kFfnInBias).data(),
         ws.ffn_pre.data(), d, f);
  ws.ffn_act.resize(f);
  for (std::size_t k = 0; k < f; ++k) ws.ffn_act[k] = std::tanh(ws.ffn_pre[k]);
  ws.resid2.resize(d);
  affine(ws.ffn_act.data(), params_.segment(Segment::kFfnOutWeight).data(),
         params_.segment(Segment::kFfnOutBias).data(), ws.resid2.data(), f, d);
  for (std::size_t i = 0; i < d; ++i) ws.resid2[i] += ws.resid1[i];

  double mean = 0.0;
  for (double x : ws.resid2) mean += x;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double x : ws.resid2) var += (x - mean) * (x - mean);
  var /= static_cast<double>(d);
  ws.inv_std = 1.0 / std::sqrt(var + kNormEps);
  ws.normed.resize(d);
  ws.hidden.resize(d);
  const double* gain = params_.segment(Segment::kNormGain).data();
  const double* bias = params_.segment(Segment::kNormBias).data();
  for (std::size_t i = 0; i < d; ++i) {
    ws.normed[i] = (ws.resid2[i] - mean) * ws.inv_std;
    ws.hidden[i] = gain[i] * ws.normed[i] + bias[i];
  }

  ws.logits.resize(v);
  ws.probs.resize(v);
  const double* out_bias = params_.segment(Segment::kOutputBias).data();
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < v; ++t) {
    ws.logits[t] = dot(emb + t * d, ws.hidden.data(), d) + out_bias[t];
    max_logit = std::max(max_logit, ws.logits[t]);
  }
  double zsum = 0.0;
  for (std::size_t t = 0; t < v; ++t) {
    ws.probs[t] = std::exp(ws.logits[t] - max_logit);
    zsum += ws.probs[t];
  }
  for (double& p : ws.probs) p /= zsum;
}

double MaskedLm::loss(const LossTerm& term, Workspace& ws) const {
  forward(term.context, term.position, term.with_prompt, ws);
  if (term.target < 0 || term.target >= cfg_.vocab_size) throw ConfigError("target token outside vocabulary");
  // log-sum-exp form keeps confident predictions accurate near zero loss
  double max_logit = *std::max_element(ws.logits.begin(), ws.logits.end());
  double z = 0.0;
  for (double lg : ws.logits) z += std::exp(lg - max_logit);
  return std::log(z) + max_logit - ws.logits[static_cast<std::size_t>(term.target)];
}

double MaskedLm::accumulate_gradient(const LossTerm& term, double weight, std::span<double> grad,
                                     Workspace& ws) const {
  const double value = loss(term, ws);
  const auto& layout = params_.layout();
  if (grad.size() != layout.total()) throw ConfigError("gradient buffer does not match parameter layout");
  const std::size_t d = cfg_.dim, f = cfg_.ffn_dim, v = cfg_.vocab_size, l = cfg_.context_len;
  const std::size_t prompt = term.with_prompt ? static_cast<std::size_t>(cfg_.prompt_len) : 0;
  const std::size_t qrow = prompt + term.position;
  auto g = [&](Segment s) { return grad.data() + layout[s].offset; };
  auto w = [&](Segment s) { return params_.segment(s).data(); };

  // output softmax + tied projection
  const double* emb = w(Segment::kTokenEmbedding);
  double* g_emb = g(Segment::kTokenEmbedding);
  double* g_out_bias = g(Segment::kOutputBias);
  ws.d_hidden.assign(d, 0.0);
  for (std::size_t t = 0; t < v; ++t) {
    double dl = ws.probs[t];
    if (static_cast<TokenId>(t) == term.target) dl -= 1.0;
    dl *= weight;
    g_out_bias[t] += dl;
    axpy(dl, ws.hidden.data(), g_emb + t * d, d);
    axpy(dl, emb + t * d, ws.d_hidden.data(), d);
  }

  // norm
  const double* gain = w(Segment::kNormGain);
  double* g_gain = g(Segment::kNormGain);
  double* g_nbias = g(Segment::kNormBias);
  ws.d_normed.resize(d);
  double mean_dn = 0.0, mean_dn_n = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    g_gain[i] += ws.d_hidden[i] * ws.normed[i];
    g_nbias[i] += ws.d_hidden[i];
    ws.d_normed[i] = ws.d_hidden[i] * gain[i];
    mean_dn += ws.d_normed[i];
    mean_dn_n += ws.d_normed[i] * ws.normed[i];
  }
  mean_dn /= static_cast<double>(d);
  mean_dn_n /= static_cast<double>(d);
  ws.d_resid2.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    ws.d_resid2[i] = ws.inv_std * (ws.d_normed[i] - mean_dn - ws.normed[i] * mean_dn_n);
  }

  // feed-forward
  outer_accumulate(ws.ffn_act.data(), ws.d_resid2.data(), g(Segment::kFfnOutWeight), f, d);
  axpy(1.0, ws.d_resid2.data(), g(Segment::kFfnOutBias), d);
  ws.d_act.resize(f);
  affine_backward_input(w(Segment::kFfnOutWeight), ws.d_resid2.data(), ws.d_act.data(), f, d);
  for (std::size_t k = 0; k < f; ++k) ws.d_act[k] *= 1.0 - ws.ffn_act[k] * ws.ffn_act[k];
  outer_accumulate(ws.resid1.data(), ws.d_act.data(), g(Segment::kFfnInWeight), d, f);
  axpy(1.0, ws.d_act.data(), g(Segment::kFfnInBias), f);
  ws.d_resid1.resize(d);
  affine_backward_input(w(Segment::kFfnInWeight), ws.d_act.data(), ws.d_resid1.data(), d, f);
  for (std::size_t i = 0; i < d; ++i) ws.d_resid1[i] += ws.d_resid2[i];

  // attention output and value projections
  outer_accumulate(ws.value.data(), ws.d_resid1.data(), g(Segment::kAttnOutWeight), d, d);
  axpy(1.0, ws.d_resid1.data(), g(Segment::kAttnOutBias), d);
  ws.d_value.resize(d);
  affine_backward_input(w(Segment::kAttnOutWeight), ws.d_resid1.data(), ws.d_value.data(), d, d);
  ws.d_inputs.assign(ws.inputs.size(), 0.0);
  axpy(1.0, ws.d_resid1.data(), ws.d_inputs.data() + qrow * d, d);

  const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = d / heads;
  const std::size_t nb = static_cast<std::size_t>(cfg_.rel_buckets());
  const std::size_t nv = ws.valid.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* wv = w(Segment::kValueWeight);
  const double* wk = w(Segment::kKeyWeight);
  double* g_wv = g(Segment::kValueWeight);
  double* g_key = g(Segment::kKeyWeight);
  double* g_rel = g(Segment::kRelativeBias);
  axpy(1.0, ws.d_value.data(), g(Segment::kValueBias), d);
  ws.d_mixed.resize(d);
  ws.d_key_query.resize(d);
  ws.attn_grad.resize(nv);
  ws.d_query.assign(d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* mx = ws.mixed.data() + h * d;
    const double* dval = ws.d_value.data() + h * dh;
    for (std::size_t i = 0; i < d; ++i) {
      if (mx[i] != 0.0) axpy(mx[i], dval, g_wv + i * d + h * dh, dh);
      ws.d_mixed[i] = dot(wv + i * d + h * dh, dval, dh);
    }

    const double* at = ws.attn.data() + h * nv;
    double expected = 0.0;
    for (std::size_t k = 0; k < nv; ++k) {
      const std::size_t r = ws.valid[k];
      ws.attn_grad[k] = dot(ws.inputs.data() + r * d, ws.d_mixed.data(), d);
      expected += at[k] * ws.attn_grad[k];
      axpy(at[k], ws.d_mixed.data(), ws.d_inputs.data() + r * d, d);
    }
    const double* kq = ws.key_query.data() + h * d;
    std::fill(ws.d_key_query.begin(), ws.d_key_query.end(), 0.0);
    for (std::size_t k = 0; k < nv; ++k) {
      const std::size_t r = ws.valid[k];
      const double ds = at[k] * (ws.attn_grad[k] - expected);
      g_rel[h * nb + ws.bucket[k]] += ds;
      axpy(scale * ds, ws.inputs.data() + r * d, ws.d_key_query.data(), d);
      axpy(scale * ds, kq, ws.d_inputs.data() + r * d, d);
    }

    // key_query_h = W_k[:, head h] query[head h]
    const double* q = ws.query.data() + h * dh;
    double* dq = ws.d_query.data() + h * dh;
    for (std::size_t i = 0; i < d; ++i) {
      axpy(ws.d_key_query[i], q, g_key + i * d + h * dh, dh);
      axpy(ws.d_key_query[i], wk + i * d + h * dh, dq, dh);
    }
  }

  outer_accumulate(ws.query_in.data(), ws.d_query.data(), g(Segment::kQueryWeight), d, d);
  axpy(1.0, ws.d_query.data(), g(Segment::kQueryBias), d);
  ws.d_query_in.resize(d);
  affine_backward_input(w(Segment::kQueryWeight), ws.d_query.data(), ws.d_query_in.data(), d, d);
  axpy(1.0, ws.d_query_in.data(), ws.d_inputs.data() + qrow * d, d);

  // scatter input gradients
  double* g_soft = g(Segment::kSoftPrompt);
  double* g_pos = g(Segment::kPositionEmbedding);
  for (std::size_t r = 0; r < prompt; ++r) axpy(1.0, ws.d_inputs.data() + r * d, g_soft + r * d, d);
  for (std::size_t j = 0; j < l; ++j) {
    const TokenId t = term.context[j];
    if (t == cfg_.pad_id) continue;
    const double* dx = ws.d_inputs.data() + (prompt + j) * d;
    axpy(1.0, dx, g_emb + static_cast<std::size_t>(t) * d, d);
    axpy(1.0, dx, g_pos + j * d, d);
  }
  return value;
}

double loss_lm(const ModelParams& params, const PretrainExample& ex) {
  Workspace ws;
  return MaskedLm(params).loss(lm_term(ex), ws);
}

double loss_task(const ModelParams& params, const TaskExample& x, const Template& tpl, const Verbalizer& vb) {
  Workspace ws;
  return MaskedLm(params).loss(task_term(x, tpl, vb, params.config()), ws);
}

std::vector<double> full_gradient(const ModelParams& params, std::span<const LossTerm> terms, int workers,
                                  double* mean_loss) {
  const std::size_t dim = params.size();
  std::vector<double> total(dim, 0.0);
  if (mean_loss != nullptr) *mean_loss = 0.0;
  if (terms.empty()) return total;
  const double weight = 1.0 / static_cast<double>(terms.size());
  const std::size_t blocks = (terms.size() + kGradientBlock - 1) / kGradientBlock;
  MaskedLm lm(params);
  std::vector<double> block_loss(blocks, 0.0);
  if (blocks == 1) {
    Workspace ws;
    for (const auto& t : terms) block_loss[0] += lm.accumulate_gradient(t, weight, total, ws);
  } else {
    std::vector<std::vector<double>> partial(blocks);
    parallel_for(blocks, workers, [&](std::size_t b) {
      partial[b].assign(dim, 0.0);
      Workspace ws;
      const std::size_t end = std::min(terms.size(), (b + 1) * kGradientBlock);
      for (std::size_t i = b * kGradientBlock; i < end; ++i) {
        block_loss[b] += lm.accumulate_gradient(terms[i], weight, partial[b], ws);
      }
    });
    for (const auto& p : partial) axpy(1.0, p.data(), total.data(), dim);
  }
  if (mean_loss != nullptr) {
    for (double l : block_loss) *mean_loss += l;
    *mean_loss *= weight;
  }
  return total;
}

GradientVector gradient(const ModelParams& params, std::span<const LossTerm> terms, const GradientFilter& filter) {
  const auto full = full_gradient(params, terms);
  GradientVector out;
  out.filter_id = filter.id();
  out.values.resize(filter.dimension(params.layout()));
  filter.extract(params.layout(), full, out.values);
  return out;
}

std::vector<double> mask_logits(const ModelParams& params, const TaskExample& x, const Template& tpl) {
  const auto& cfg = params.config();
  const auto rendered = apply_template(x, tpl, static_cast<std::size_t>(cfg.context_len), cfg.special());
  Workspace ws;
  MaskedLm(params).forward(rendered.context, rendered.mask_position, true, ws);
  return ws.logits;
}

int argmax_label(std::span<const double> logits, const Verbalizer& vb) {
  int best = 0;
  for (std::size_t c = 1; c < vb.num_classes(); ++c) {
    if (logits[static_cast<std::size_t>(vb.tokens()[c])] > logits[static_cast<std::size_t>(vb.tokens()[best])]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

int predict_label(const ModelParams& params, const TaskExample& x, const Template& tpl, const Verbalizer& vb) {
  return argmax_label(mask_logits(params, x, tpl), vb);
}

std::vector<double> hidden_with_token(const ModelParams& params, std::span<const TokenId> context,
                                      std::uint32_t position, TokenId token, bool with_prompt, Workspace& ws) {
  std::vector<TokenId> filled(context.begin(), context.end());
  if (position >= filled.size()) throw ConfigError("masked position outside context");
  filled[position] = token;
  MaskedLm(params).forward(filled, position, with_prompt, ws);
  return ws.hidden;
}

}  // namespace orca
