#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "orca/io.hpp"
#include "orca/training.hpp"
#include "support.hpp"

using namespace orca;
using namespace fixture;

namespace {

// Straightforward re-implementation of the forward pass: explicit per-head
// keys and values for every row, then the usual post-attention stack.
std::vector<double> oracle_logits(const ModelParams& p, std::span<const TokenId> ctx, std::uint32_t pos, bool prompt) {
  const auto& c = p.config();
  const int d = c.dim, H = c.heads, dh = d / H, R = c.rel_window, P = prompt ? c.prompt_len : 0;
  auto seg = [&](Segment s) { return p.segment(s); };
  auto mat = [&](Segment s, int r, int col, int cols) { return seg(s)[static_cast<std::size_t>(r * cols + col)]; };
  std::vector<std::vector<double>> rows;
  std::vector<int> offsets;
  for (int r = 0; r < P; ++r) {
    rows.emplace_back(seg(Segment::kSoftPrompt).begin() + r * d, seg(Segment::kSoftPrompt).begin() + (r + 1) * d);
    offsets.push_back(-R - 1);
  }
  std::vector<double> xq;
  for (int j = 0; j < c.context_len; ++j) {
    if (ctx[j] == c.pad_id) continue;
    std::vector<double> x(d);
    for (int i = 0; i < d; ++i) x[i] = mat(Segment::kTokenEmbedding, ctx[j], i, d) + mat(Segment::kPositionEmbedding, j, i, d);
    if (j == static_cast<int>(pos)) xq = x;
    rows.push_back(x);
    offsets.push_back(std::clamp(j - static_cast<int>(pos), -R - 1, R + 1));
  }
  std::vector<double> q(d);
  for (int o = 0; o < d; ++o) {
    q[o] = seg(Segment::kQueryBias)[o];
    for (int i = 0; i < d; ++i) q[o] += xq[i] * mat(Segment::kQueryWeight, i, o, d);
  }
  std::vector<double> concat(d, 0.0);
  for (int h = 0; h < H; ++h) {
    std::vector<double> s(rows.size());
    double mx = -1e300;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      double acc = 0.0;
      for (int j = 0; j < dh; ++j) {
        double key = 0.0;
        for (int i = 0; i < d; ++i) key += rows[k][i] * mat(Segment::kKeyWeight, i, h * dh + j, d);
        acc += key * q[h * dh + j];
      }
      s[k] = acc / std::sqrt(static_cast<double>(dh)) +
             seg(Segment::kRelativeBias)[static_cast<std::size_t>(h * c.rel_buckets() + offsets[k] + R + 1)];
      mx = std::max(mx, s[k]);
    }
    double z = 0.0;
    for (double& v : s) z += (v = std::exp(v - mx));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int j = 0; j < dh; ++j) {
        double val = seg(Segment::kValueBias)[h * dh + j];
        for (int i = 0; i < d; ++i) val += rows[k][i] * mat(Segment::kValueWeight, i, h * dh + j, d);
        concat[h * dh + j] += s[k] / z * val;
      }
    }
  }
  std::vector<double> r1(d);
  for (int o = 0; o < d; ++o) {
    r1[o] = xq[o] + seg(Segment::kAttnOutBias)[o];
    for (int i = 0; i < d; ++i) r1[o] += concat[i] * mat(Segment::kAttnOutWeight, i, o, d);
  }
  std::vector<double> act(c.ffn_dim);
  for (int k = 0; k < c.ffn_dim; ++k) {
    double a = seg(Segment::kFfnInBias)[k];
    for (int i = 0; i < d; ++i) a += r1[i] * mat(Segment::kFfnInWeight, i, k, c.ffn_dim);
    act[k] = std::tanh(a);
  }
  std::vector<double> r2(d);
  for (int o = 0; o < d; ++o) {
    r2[o] = r1[o] + seg(Segment::kFfnOutBias)[o];
    for (int k = 0; k < c.ffn_dim; ++k) r2[o] += act[k] * mat(Segment::kFfnOutWeight, k, o, d);
  }
  double mean = 0.0, var = 0.0;
  for (double v : r2) mean += v / d;
  for (double v : r2) var += (v - mean) * (v - mean) / d;
  std::vector<double> hid(d);
  for (int i = 0; i < d; ++i) {
    hid[i] = seg(Segment::kNormGain)[i] * (r2[i] - mean) / std::sqrt(var + 1e-5) + seg(Segment::kNormBias)[i];
  }
  std::vector<double> logits(c.vocab_size);
  for (int v = 0; v < c.vocab_size; ++v) {
    logits[v] = seg(Segment::kOutputBias)[v];
    for (int i = 0; i < d; ++i) logits[v] += hid[i] * mat(Segment::kTokenEmbedding, v, i, d);
  }
  return logits;
}

double oracle_nll(const std::vector<double>& logits, TokenId target) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[target] - mx - std::log(z));
}

ModelParams bias_only_model(std::vector<double> out_bias) {
  ModelConfig mc = tiny_model(static_cast<int>(out_bias.size()), 6, 4);
  ModelParams p(mc);
  std::copy(out_bias.begin(), out_bias.end(), p.segment(Segment::kOutputBias).begin());
  return p;
}

}  // namespace

TEST_CASE("zero-weight model gives ln V for LM and task losses") {
  const auto mc = tiny_model(24, 12, 8);
  const ModelParams zero(mc);
  const auto ex = random_examples(5, mc, 1);
  for (const auto& e : ex) CHECK(loss_lm(zero, e) == doctest::Approx(std::log(24.0)).epsilon(1e-12));
  const auto task = random_task(3, mc, 2);
  for (const auto& x : task.examples) {
    CHECK(loss_task(zero, x, task.tpl, task.verbalizer) == doctest::Approx(std::log(24.0)).epsilon(1e-12));
  }
}

TEST_CASE("confident model has near-zero loss; two-token toy matches closed form") {
  PretrainExample e;
  e.context = {2, 1, 0, 0, 0, 0};
  e.masked_position = 1;
  e.masked_token = 2;
  CHECK(loss_lm(bias_only_model({-50, -50, 40, 0}), e) < 1e-12);
  // Only tokens 2 and 3 carry mass: p(2) = e / (e + 1).
  CHECK(loss_lm(bias_only_model({-50, -50, 1, 0}), e) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("forward pass matches an independent re-implementation to 1e-10") {
  auto s = fd_setup(3);
  const auto& mc = s.params.config();
  const auto examples = random_examples(20, mc, 4);
  for (const auto& e : examples) {
    const auto logits = oracle_logits(s.params, e.context, e.masked_position, false);
    CHECK(loss_lm(s.params, e) == doctest::Approx(oracle_nll(logits, e.masked_token)).epsilon(1e-10));
  }
  const auto task = random_task(10, mc, 5);
  for (const auto& x : task.examples) {
    const auto t = task_term(x, task.tpl, task.verbalizer, mc);
    const auto logits = oracle_logits(s.params, t.context, t.position, true);
    Workspace ws;
    CHECK(MaskedLm(s.params).loss(t, ws) == doctest::Approx(oracle_nll(logits, t.target)).epsilon(1e-10));
  }
}

TEST_CASE("loss_task equals loss_lm on the templated, verbalized example") {
  const auto mc = tiny_model(24, 12, 8);
  const auto p = ModelParams::random(mc, 9, 0.3);
  const auto task = random_task(6, mc, 3);
  for (const auto& x : task.examples) {
    const auto r = apply_template(x, task.tpl, 12, mc.special());
    PretrainExample e{"x", "x", "A", r.context, r.mask_position, task.verbalizer.token(x.label)};
    CHECK(loss_task(p, x, task.tpl, task.verbalizer) == loss_lm(p, e));
  }
}

TEST_CASE("softmax sums to one; mismatched context length is a config error") {
  auto s = fd_setup(1);
  const auto ex = random_examples(10, s.params.config(), 2);
  MaskedLm lm(s.params);
  Workspace ws;
  for (const auto& e : ex) {
    lm.forward(e.context, e.masked_position, false, ws);
    double z = 0.0;
    for (double v : ws.probs) z += v;
    CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
  }
  auto bad = ex[0];
  bad.context.pop_back();
  CHECK_THROWS_AS(loss_lm(s.params, bad), ConfigError);
}

TEST_CASE("analytic gradient matches central differences on every segment") {
  const auto s = fd_setup(11);
  CHECK(s.params.size() <= 50000);
  const auto checks = fd_sweep(s.params, s.batches, 200, 5);
  CHECK(checks.size() == kNumSegments);
  for (const auto& c : checks) {
    INFO(segment_name(c.segment));
    CHECK(c.checks >= 200);
    CHECK(c.worst <= 1e-4);
  }
}

TEST_CASE("dead-path gradient and duplicate-batch identity") {
  auto s = fd_setup(2);
  const auto ex = random_examples(2, s.params.config(), 6);
  const LossTerm t = lm_term(ex[0]);
  const auto g = full_gradient(s.params, std::span(&t, 1));
  const auto& span = s.params.layout()[Segment::kSoftPrompt];
  for (std::size_t i = 0; i < span.size; ++i) CHECK(g[span.offset + i] == 0.0);

  const std::vector<LossTerm> twice{t, t};
  const auto g2 = full_gradient(s.params, twice);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g2[i] == doctest::Approx(g[i]).epsilon(1e-14));
}

TEST_CASE("full_gradient is bit-identical across worker counts") {
  auto s = fd_setup(4);
  std::vector<LossTerm> terms;
  for (const auto& b : s.batches) terms.insert(terms.end(), b.begin(), b.end());
  const auto one = full_gradient(s.params, terms, 1);
  for (int w : {2, 3, 8}) CHECK(full_gradient(s.params, terms, w) == one);
}

TEST_CASE("gradient filters select segments") {
  auto s = fd_setup(5);
  const auto& layout = s.params.layout();
  const auto all = GradientFilter::by_id("all");
  const auto lm = GradientFilter::by_id("lm");
  const auto head = GradientFilter::by_id("head");
  CHECK(all.dimension(layout) == s.params.size());
  CHECK(lm.dimension(layout) == s.params.size() - layout[Segment::kSoftPrompt].size);
  CHECK(!head.includes(Segment::kTokenEmbedding));
  CHECK(head.includes(Segment::kOutputBias));
  CHECK_THROWS_AS(GradientFilter::by_id("nope"), ConfigError);
  const auto gv = gradient(s.params, s.batches[0], lm);
  CHECK(gv.filter_id == "lm");
  CHECK(gv.values.size() == lm.dimension(layout));
}

TEST_CASE("predict_label: argmax, tie-break and shift invariance") {
  TaskExample x{"x", {{"x", {2}}}, 0};
  PromptedTask t;
  t.tpl = Template({Template::Slot{"x"}, Template::Mask{}});
  t.verbalizer = Verbalizer({2, 3});
  CHECK(predict_label(bias_only_model({0, 0, 2.0, 1.0}), x, t.tpl, t.verbalizer) == 0);
  CHECK(predict_label(bias_only_model({0, 0, 1.0, 2.0}), x, t.tpl, t.verbalizer) == 1);
  CHECK(predict_label(bias_only_model({0, 0, 1.5, 1.5}), x, t.tpl, t.verbalizer) == 0);
  const std::vector<double> logits{0.3, -1.0, 0.25, 0.5};
  std::vector<double> shifted = logits;
  for (double& v : shifted) v += 17.0;
  CHECK(argmax_label(logits, t.verbalizer) == argmax_label(shifted, t.verbalizer));
}

TEST_CASE("predict_label agrees with a full-softmax argmax oracle") {
  auto s = fd_setup(6);
  ModelParams p = s.params;
  for (double& v : p.segment(Segment::kSoftPrompt)) v = 0.0;
  const auto task = random_task(100, p.config(), 8);
  for (const auto& x : task.examples) {
    const auto t = task_term(x, task.tpl, task.verbalizer, p.config());
    const auto logits = oracle_logits(p, t.context, t.position, true);
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    const double p0 = std::exp(logits[2]) / z, p1 = std::exp(logits[3]) / z;
    CHECK(predict_label(p, x, task.tpl, task.verbalizer) == (p1 > p0 ? 1 : 0));
  }
}

TEST_CASE("flat round trip and checkpoint persistence") {
  auto s = fd_setup(7);
  ModelParams q(s.params.config());
  q.assign(s.params.flat());
  CHECK(q == s.params);
  CHECK_THROWS(q.assign(std::vector<double>(3, 0.0)));

  const auto path = std::filesystem::temp_directory_path() / "orca_test_model.ckpt";
  for (auto [heads, rel] : std::vector<std::pair<int, int>>{{4, 3}, {2, 1}, {1, 6}}) {
    ModelConfig mc = s.params.config();
    mc.heads = heads;
    mc.rel_window = rel;
    const auto p = ModelParams::random(mc, 2, 0.3);
    io::save_checkpoint(path, p);
    const auto back = io::load_checkpoint(path);
    CHECK(back.config() == mc);
    CHECK(back == p);
    CHECK(io::load_checkpoint(path, mc) == p);
    mc.rel_window += 1;
    CHECK_THROWS_AS(io::load_checkpoint(path, mc), ConfigError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("soft-prompt tuning touches only the prompt and helps on a separable task") {
  ModelConfig mc = tiny_model(24, 10, 8, 4);
  const auto p = ModelParams::random(mc, 3, 0.3);
  PromptedTask task;
  task.tpl = Template({Template::Slot{"x"}, Template::Mask{}});
  task.verbalizer = Verbalizer({2, 3});
  for (int i = 0; i < 40; ++i) {
    task.examples.push_back(TaskExample{"t" + std::to_string(i), {{"x", {static_cast<TokenId>(4 + i % 2), 6}}}, i % 2});
  }
  TuneConfig cfg;
  cfg.steps = 0;
  CHECK(tune_soft_prompt(p, task, cfg).params == p);

  cfg.steps = 150;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  const auto r = tune_soft_prompt(p, task, cfg);
  const auto& sp = p.layout()[Segment::kSoftPrompt];
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i >= sp.offset && i < sp.offset + sp.size) continue;
    REQUIRE(r.params.flat()[i] == p.flat()[i]);
  }
  CHECK(evaluate_accuracy(r.params, task) >= evaluate_accuracy(p, task));
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 30; ++i) {
    first += r.losses[static_cast<std::size_t>(i)];
    last += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last <= first);

  ModelParams no_prompt = ModelParams::random(tiny_model(), 1);
  CHECK_THROWS_AS(tune_soft_prompt(no_prompt, task, cfg), ConfigError);
}

TEST_CASE("pretraining lowers the LM loss and is deterministic") {
  const auto mc = tiny_model(24, 12, 8);
  const auto init = ModelParams::random(mc, 1);
  const auto ex = random_examples(64, mc, 3);
  PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.final_lr_fraction = 0.1;
  const auto a = pretrain_mlm(init, ex, cfg);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  cfg.workers = 4;
  CHECK(pretrain_mlm(init, ex, cfg).params == a.params);
  cfg.final_lr_fraction = 0.0;
  CHECK_THROWS_AS(pretrain_mlm(init, ex, cfg), ConfigError);
}
