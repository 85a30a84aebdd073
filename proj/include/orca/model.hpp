#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "orca/common.hpp"
#include "orca/corpus.hpp"

namespace orca {

struct ModelConfig {
  int vocab_size = 0;
  int context_len = 64;
  int dim = 32;
  int ffn_dim = 64;
  int heads = 4;       // dim must be divisible by heads
  int rel_window = 4;  // relative offsets beyond +-rel_window share one bias
  int prompt_len = 0;  // soft-prompt vectors prepended to templated task inputs
  TokenId pad_id = 0;
  TokenId mask_id = 1;

  bool operator==(const ModelConfig&) const = default;
  void validate() const;
  SpecialTokens special() const { return SpecialTokens{pad_id, mask_id, {}}; }
  int rel_buckets() const { return 2 * rel_window + 3; }
};

// Parameter segments in flattened order. Matrices are row-major with the
// input dimension first (y = x W).
enum class Segment : int {
  kTokenEmbedding,   // V x d, also the tied output projection
  kPositionEmbedding,  // L x d
  kQueryWeight,      // d x d
  kQueryBias,
  kKeyWeight,        // d x d; a key bias would cancel in the softmax
  kRelativeBias,     // heads x rel_buckets, added to attention scores
  kValueWeight,
  kValueBias,
  kAttnOutWeight,
  kAttnOutBias,
  kFfnInWeight,      // d x f
  kFfnInBias,
  kFfnOutWeight,     // f x d
  kFfnOutBias,
  kNormGain,
  kNormBias,
  kOutputBias,       // V
  kSoftPrompt,       // P x d, empty when prompt_len == 0
};
inline constexpr int kNumSegments = 18;

std::string_view segment_name(Segment s);
Segment segment_from_name(std::string_view name);

struct SegmentSpan {
  std::size_t offset = 0;
  std::size_t size = 0;
};

class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& cfg);

  std::size_t total() const { return total_; }
  const SegmentSpan& operator[](Segment s) const { return spans_[static_cast<int>(s)]; }

 private:
  std::array<SegmentSpan, kNumSegments> spans_{};
  std::size_t total_ = 0;
};

// The full parameter vector of the masked LM with its segment view.
class ModelParams {
 public:
  ModelParams() = default;
  // All-zero parameters.
  explicit ModelParams(const ModelConfig& cfg);

  // Gaussian weights scaled by init_scale, unit norm gain, zero biases.
  static ModelParams random(const ModelConfig& cfg, std::uint64_t seed, double init_scale = 0.02);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> flat() const { return values_; }
  std::span<double> flat() { return values_; }
  std::span<const double> segment(Segment s) const;
  std::span<double> segment(Segment s);

  // Replace the flat vector; size must match the layout.
  void assign(std::span<const double> values);
  bool all_finite() const;

  bool operator==(const ModelParams& o) const { return config_ == o.config_ && values_ == o.values_; }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
};

// Which segments participate in a GradientVector.
class GradientFilter {
 public:
  // "all": every segment. "lm": everything but the soft prompt (default).
  // "head": feed-forward, norm and output bias only.
  static GradientFilter by_id(const std::string& id);

  const std::string& id() const { return id_; }
  bool includes(Segment s) const { return mask_[static_cast<int>(s)]; }
  std::size_t dimension(const ParamLayout& layout) const;
  // Concatenates the included segments of a full-size vector.
  void extract(const ParamLayout& layout, std::span<const double> full, std::span<double> out) const;

 private:
  std::string id_;
  std::array<bool, kNumSegments> mask_{};
};

struct GradientVector {
  std::string filter_id;
  std::vector<double> values;
};

// One scalar loss term: -log p(target | context) at `position`. Task terms
// carry the soft prompt (when the model has one); pretraining terms do not.
struct LossTerm {
  std::vector<TokenId> context;
  std::uint32_t position = 0;
  TokenId target = 0;
  bool with_prompt = false;
};

LossTerm lm_term(const PretrainExample& ex);
LossTerm task_term(const TaskExample& x, const Template& tpl, const Verbalizer& vb, const ModelConfig& cfg);

// Scratch buffers for one forward/backward pass. Not shared between threads.
struct Workspace {
  std::vector<double> inputs;  // (P + L) x d
  std::vector<std::size_t> valid;  // sequence rows attended to
  std::vector<std::size_t> bucket;  // relative-offset bucket per valid row
  std::vector<double> scores, attn, attn_grad;  // heads x valid
  std::vector<double> query_in, query, value, attn_out, resid1;
  std::vector<double> key_query, mixed;  // heads x d
  std::vector<double> ffn_pre, ffn_act, resid2, normed, hidden;
  double inv_std = 0.0;
  std::vector<double> logits, probs;
  // backward scratch
  std::vector<double> d_hidden, d_normed, d_resid2, d_act, d_resid1, d_value, d_mixed, d_key_query, d_query;
  std::vector<double> d_query_in, d_inputs;
};

// Stateless evaluator over one parameter snapshot.
class MaskedLm {
 public:
  explicit MaskedLm(const ModelParams& params);

  // Runs the forward pass; afterwards ws.hidden holds the last hidden state
  // at `position` and ws.probs the softmax over the vocabulary.
  void forward(std::span<const TokenId> context, std::uint32_t position, bool with_prompt, Workspace& ws) const;
  double loss(const LossTerm& term, Workspace& ws) const;
  // Adds weight * dloss/dparams to grad (full layout size); returns the loss.
  double accumulate_gradient(const LossTerm& term, double weight, std::span<double> grad, Workspace& ws) const;

  const ModelParams& params() const { return params_; }

 private:
  void check_term(std::span<const TokenId> context, std::uint32_t position) const;

  const ModelParams& params_;
  const ModelConfig& cfg_;
};

double loss_lm(const ModelParams& params, const PretrainExample& ex);
double loss_task(const ModelParams& params, const TaskExample& x, const Template& tpl, const Verbalizer& vb);

// Mean of the term losses' gradients, restricted to `filter`.
GradientVector gradient(const ModelParams& params, std::span<const LossTerm> terms, const GradientFilter& filter);
// Unfiltered mean gradient over the full layout. Bit-identical for any
// worker count. When mean_loss is given it receives the mean term loss.
std::vector<double> full_gradient(const ModelParams& params, std::span<const LossTerm> terms, int workers = 1,
                                  double* mean_loss = nullptr);

// Logits at the template's mask position.
std::vector<double> mask_logits(const ModelParams& params, const TaskExample& x, const Template& tpl);
// Argmax of the verbalizer-token logits; ties go to the smallest label.
int predict_label(const ModelParams& params, const TaskExample& x, const Template& tpl, const Verbalizer& vb);
int argmax_label(std::span<const double> logits, const Verbalizer& vb);

// Last hidden state at the masked position with `token` placed there.
std::vector<double> hidden_with_token(const ModelParams& params, std::span<const TokenId> context,
                                      std::uint32_t position, TokenId token, bool with_prompt, Workspace& ws);

}  // namespace orca
