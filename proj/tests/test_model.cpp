#include <catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "telesee/model.hpp"

using namespace telesee;
using test_support::tiny_setup;

namespace {

std::vector<TrainExample> tiny_batch(const test_support::TinySetup& s) {
  TrainExample a;
  a.stage = 1;
  a.src_ids = s.vocab.encode_text("semantic communication improves spectral efficiency");
  a.prompt_ids = {s.vocab.prompt_ent_names_id()};
  a.target_ids = s.vocab.encode_text("semantic communication");

  TrainExample b;
  b.stage = 3;
  b.src_ids = s.vocab.encode_text("edge intelligence reduces latency");
  b.prompt_ids = {s.vocab.prompt_val_id(), s.vocab.id_of("attr_benefits")};
  b.target_ids = s.vocab.encode_text("reduces latency");
  return {a, b};
}

}  // namespace

TEST_CASE("init is deterministic and validates the config") {
  auto s = tiny_setup();
  ModelParams a = init_params(s.config);
  ModelParams b = init_params(s.config);
  CHECK(a.data == b.data);
  CHECK(a.param_count() < 10000);

  ModelConfig bad = s.config;
  bad.d_model = 30;
  bad.n_heads = 4;
  CHECK_THROWS_AS(init_params(bad), ValidationError);

  ModelConfig short_len = s.config;
  short_len.max_src_len = 4;
  CHECK_THROWS_AS(init_params(short_len), ValidationError);

  ModelConfig other_seed = s.config;
  other_seed.seed = s.config.seed + 1;
  CHECK(init_params(other_seed).data != a.data);
}

TEST_CASE("encoder output shape, determinism, and truncation flag") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto ids = s.vocab.encode_text("semantic communication improves latency");
  EncoderOutput e1 = encode(p, ids, s.vocab.pad_id());
  CHECK(e1.len == ids.size());
  CHECK(e1.hidden.size() == ids.size() * static_cast<size_t>(s.config.d_model));
  CHECK_FALSE(e1.truncated);
  EncoderOutput e2 = encode(p, ids, s.vocab.pad_id());
  CHECK(e1.hidden == e2.hidden);

  std::vector<int> long_ids(32, ids[0]);
  EncoderOutput e3 = encode(p, long_ids, s.vocab.pad_id());
  CHECK(e3.truncated);
  CHECK(e3.len == static_cast<size_t>(s.config.max_src_len));
}

TEST_CASE("padded positions do not influence real positions") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto ids = s.vocab.encode_text("semantic communication improves latency");
  EncoderOutput plain = encode(p, ids, s.vocab.pad_id());

  auto padded_ids = ids;
  padded_ids.push_back(s.vocab.pad_id());
  padded_ids.push_back(s.vocab.pad_id());
  EncoderOutput padded = encode(p, padded_ids, s.vocab.pad_id());

  size_t d = static_cast<size_t>(s.config.d_model);
  for (size_t i = 0; i < ids.size() * d; ++i)
    CHECK(padded.hidden[i] == Catch::Approx(plain.hidden[i]).margin(1e-12));

  // Same prefix without masking the pads would differ: sanity-check the mask
  // is what makes this hold, by confirming pad positions are flagged.
  CHECK(padded.mask[ids.size()] == 0);
  CHECK(padded.mask[0] == 1);
}

TEST_CASE("decode_step_logits is a normalized distribution after softmax") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  EncoderOutput enc = encode(p, s.vocab.encode_text("semantic communication"), s.vocab.pad_id());
  std::vector<int> prefix = {s.vocab.bos_id(), s.vocab.prompt_ent_names_id()};
  auto logits = decode_step_logits(p, enc, prefix);
  REQUIRE(logits.size() == static_cast<size_t>(s.config.vocab_size));
  double maxv = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - maxv);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - maxv) / denom;
  CHECK(sum == Catch::Approx(1.0).epsilon(1e-6));
  for (double z : logits) CHECK(std::isfinite(z));

  auto again = decode_step_logits(p, enc, prefix);
  CHECK(logits == again);

  std::vector<int> other_prefix = {s.vocab.bos_id(), s.vocab.prompt_val_id()};
  auto other = decode_step_logits(p, enc, other_prefix);
  CHECK(logits != other);
}

TEST_CASE("constrained greedy decoding never leaves the allowed set") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);  // untrained: outputs arbitrary but constrained
  EncoderOutput enc = encode(p, s.vocab.encode_text("semantic communication"), s.vocab.pad_id());

  DecodeConstraint c = DecodeConstraint::special_tokens_only(s.vocab);
  auto result = greedy_decode(p, enc, {s.vocab.prompt_type_attr_id()}, s.vocab.bos_id(), c, 10);
  for (int id : result.ids) CHECK(s.vocab.is_schema_token(id));

  DecodeConstraint f = DecodeConstraint::first_token_type(s.vocab);
  auto typed = greedy_decode(p, enc, {s.vocab.prompt_type_attr_id()}, s.vocab.bos_id(), f, 10);
  if (!typed.ids.empty()) {
    bool is_type = std::find(s.vocab.type_token_ids().begin(), s.vocab.type_token_ids().end(),
                             typed.ids[0]) != s.vocab.type_token_ids().end();
    CHECK(is_type);
  }

  auto one = greedy_decode(p, enc, {}, s.vocab.bos_id(),
                           DecodeConstraint::unrestricted(s.vocab.eos_id()), 1);
  CHECK(one.ids.size() <= 1);

  auto bounded = greedy_decode(p, enc, {}, s.vocab.bos_id(),
                               DecodeConstraint::unrestricted(s.vocab.eos_id()), 12);
  CHECK(bounded.ids.size() <= 12);
}

TEST_CASE("batch loss expectations") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto batch = tiny_batch(s);

  LossResult r = batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(), true);
  CHECK(r.finite);
  CHECK(r.target_tokens > 0);
  CHECK(r.grads.size() == p.param_count());

  // Near-uniform logits at init: per-token loss close to ln(V).
  double per_token = r.total / static_cast<double>(r.target_tokens);
  double lnv = std::log(static_cast<double>(s.config.vocab_size));
  CHECK(per_token == Catch::Approx(lnv).epsilon(0.05));

  // Duplicating the batch doubles the summed loss.
  std::vector<TrainExample> doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  LossResult r2 = batch_loss(p, doubled, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(),
                             false);
  CHECK(r2.total == Catch::Approx(2.0 * r.total).margin(1e-9));

  // Threaded gradients agree with the serial ones.
  LossResult r_par = batch_loss(p, doubled, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(),
                                true, 2);
  LossResult r_ser = batch_loss(p, doubled, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(),
                                true, 1);
  CHECK(r_par.total == Catch::Approx(r_ser.total).margin(1e-9));
  double max_diff = 0.0;
  for (size_t i = 0; i < r_par.grads.size(); ++i)
    max_diff = std::max(max_diff, std::abs(r_par.grads[i] - r_ser.grads[i]));
  CHECK(max_diff < 1e-9);

  CHECK_THROWS_AS(batch_loss(p, {}, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id()),
                  ValidationError);
  TrainExample padded = batch[0];
  padded.target_ids.push_back(s.vocab.pad_id());
  CHECK_THROWS_AS(
      batch_loss(p, {padded}, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id()),
      ValidationError);
}

TEST_CASE("loss approaches zero once a single example is memorized") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  std::vector<TrainExample> batch = {tiny_batch(s)[0]};
  OptimizerState state = OptimizerState::for_params(p);
  OptimizerConfig opt;
  opt.lr = 0.01;
  opt.warmup_steps = 10;
  for (int step = 0; step < 150; ++step) {
    LossResult r = batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id());
    for (double& g : r.grads) g /= static_cast<double>(r.target_tokens);
    train_step(p, state, r.grads, opt);
  }
  LossResult final_loss =
      batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(), false);
  CHECK(final_loss.total / static_cast<double>(final_loss.target_tokens) < 0.05);
}

TEST_CASE("optimizer no-ops") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  std::vector<double> before = p.data;
  OptimizerState state = OptimizerState::for_params(p);

  OptimizerConfig no_decay;
  no_decay.weight_decay = 0.0;
  std::vector<double> zeros(p.param_count(), 0.0);
  CHECK(train_step(p, state, zeros, no_decay));
  CHECK(p.data == before);

  OptimizerConfig zero_lr;
  zero_lr.lr = 0.0;
  std::vector<double> grads(p.param_count(), 0.5);
  CHECK(train_step(p, state, grads, zero_lr));
  CHECK(p.data == before);

  std::vector<double> bad = zeros;
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(train_step(p, state, bad, no_decay));
  CHECK(state.skipped == 1);
  CHECK(p.data == before);
}

TEST_CASE("loss strictly decreases on nearly every step of a memorization run") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto batch = tiny_batch(s);
  // 10-example task: replicate the two examples five times.
  std::vector<TrainExample> task;
  for (int i = 0; i < 5; ++i) task.insert(task.end(), batch.begin(), batch.end());

  OptimizerState state = OptimizerState::for_params(p);
  OptimizerConfig opt;
  opt.lr = 0.003;
  opt.warmup_steps = 30;
  double prev = 0.0;
  int decreases = 0, counted = 0;
  for (int step = 0; step < 200; ++step) {
    LossResult r = batch_loss(p, task, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id());
    if (step > opt.warmup_steps) {
      ++counted;
      if (r.total < prev) ++decreases;
    }
    prev = r.total;
    for (double& g : r.grads) g /= static_cast<double>(r.target_tokens);
    train_step(p, state, r.grads, opt);
  }
  CHECK(counted > 0);
  CHECK(static_cast<double>(decreases) / static_cast<double>(counted) >= 0.9);
}

TEST_CASE("analytic gradients match central differences") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto batch = tiny_batch(s);
  auto result = grad_check(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(), 1e-3,
                           200, 999);
  CHECK(result.coords_checked == 200);
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("a corrupted gradient is detected") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto batch = tiny_batch(s);
  auto corrupt = [](std::vector<double>& g) {
    for (auto& v : g) v = v * 1.5 + 0.01;
  };
  auto result = grad_check(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(), 1e-3,
                           200, 999, corrupt);
  CHECK(result.max_rel_error > 1e-2);
}

TEST_CASE("epsilon sweep exhibits the V-shaped error curve") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  auto batch = tiny_batch(s);
  std::vector<double> epsilons = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  std::vector<double> errors;
  for (double eps : epsilons)
    errors.push_back(grad_check(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(),
                                eps, 60, 999).max_rel_error);
  double best = *std::min_element(errors.begin(), errors.end());
  CHECK(errors.front() > best);  // truncation error dominates at large eps
  CHECK(errors.back() > best);   // roundoff dominates at tiny eps
}

TEST_CASE("checkpoints round trip and refuse tampered vocab hashes") {
  auto s = tiny_setup();
  ModelParams p = init_params(s.config);
  std::string path = test_support::temp_path("model.ckpt");
  save_checkpoint(path, p, s.vocab);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.params.data == p.data);
  CHECK(loaded.vocab.hash() == s.vocab.hash());
  CHECK(loaded.params.config.d_model == s.config.d_model);

  // Corrupt the stored hash inside the JSON header.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto pos = bytes.find("vocab_hash");
  REQUIRE(pos != std::string::npos);
  pos = bytes.find(':', pos) + 2;
  bytes[pos] = bytes[pos] == '0' ? '1' : '0';
  std::string tampered = test_support::temp_path("tampered.ckpt");
  std::ofstream out(tampered, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(load_checkpoint(tampered), ValidationError);
}

TEST_CASE("dropout only affects the training path and stays reproducible") {
  auto s = tiny_setup();
  ModelConfig cfg = s.config;
  cfg.dropout_rate = 0.2;
  ModelParams p = init_params(cfg);
  auto batch = tiny_batch(s);

  LossResult no_drop = batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(), s.vocab.eos_id(),
                                  false, 1, 0);
  LossResult with_drop = batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(),
                                    s.vocab.eos_id(), false, 1, 42);
  LossResult with_drop2 = batch_loss(p, batch, s.vocab.pad_id(), s.vocab.bos_id(),
                                     s.vocab.eos_id(), false, 1, 42);
  CHECK(with_drop.total != no_drop.total);
  CHECK(with_drop.total == with_drop2.total);

  // Inference path ignores dropout entirely.
  EncoderOutput e1 = encode(p, batch[0].src_ids, s.vocab.pad_id());
  EncoderOutput e2 = encode(p, batch[0].src_ids, s.vocab.pad_id());
  CHECK(e1.hidden == e2.hidden);
}
