// Acceptance gate: one pass/fail line per criterion, exit 0 iff all pass.
// Numeric criteria use frozen constants and self-contained oracles
// (exhaustive enumeration, central finite differences); empirical criteria
// run the full pipeline on the deterministic synthetic corpus.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "promalign/toy_corpus.hpp"
#include "promalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace promalign;

namespace {

struct Report {
  int passed = 0, failed = 0;

  void line(bool ok, const std::string& text) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", text.c_str());
    std::fflush(stdout);
    ++(ok ? passed : failed);
  }
  void na(const std::string& text) {
    std::printf("[ N/A] %s\n", text.c_str());
    std::fflush(stdout);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// Chain-scoring oracle: exhaustive enumeration over all label sequences
// ---------------------------------------------------------------------------

struct ChainFixture {
  Tensor emissions;  // n x y
  CRFParams params;  // unmasked, free-standing
};

ChainFixture random_chain(Rng& rng) {
  std::size_t n = 1 + rng.below(4);  // sequence length <= 4
  std::size_t y = 2 + rng.below(4);  // label count <= 5
  auto rand_tensor = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.data()) v = rng.uniform(-1.5, 1.5);
    return t;
  };
  ChainFixture f{rand_tensor(n, y),
                 CRFParams::from_tensors(rand_tensor(y, y), rand_tensor(1, y),
                                         rand_tensor(1, y))};
  return f;
}

// Visit every length-n sequence over y labels.
void for_each_sequence(std::size_t n, std::size_t y,
                       const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> labels(n, 0);
  while (true) {
    fn(labels);
    std::size_t i = 0;
    while (i < n && ++labels[i] == y) labels[i++] = 0;
    if (i == n) return;
  }
}

void check_chain_oracle(Report& rep) {
  Rng rng(9001);
  auto t0 = std::chrono::steady_clock::now();
  double worst_logz_rel = 0.0;
  int viterbi_exact = 0;
  double worst_norm_err = 0.0;
  const int kInstances = 100;

  for (int k = 0; k < kInstances; ++k) {
    ChainFixture f = random_chain(rng);
    std::size_t n = f.emissions.rows(), y = f.emissions.cols();

    std::vector<double> scores;
    for_each_sequence(n, y, [&](const std::vector<std::size_t>& labels) {
      scores.push_back(crf_sequence_score(f.emissions, f.params, labels));
    });
    double max_score = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - max_score);
    double logz_enum = max_score + std::log(z);

    BIOLabelSequence gold;
    gold.labels.assign(n, 0);
    Var lp = crf_log_prob(Var::constant(f.emissions), f.params, gold);
    double logz_fwd = crf_sequence_score(f.emissions, f.params, gold.labels) - lp.scalar();
    worst_logz_rel = std::max(worst_logz_rel,
                              std::abs(logz_fwd - logz_enum) / std::abs(logz_enum));

    BIOLabelSequence best = viterbi_decode(f.emissions, f.params);
    if (crf_sequence_score(f.emissions, f.params, best.labels) == max_score) ++viterbi_exact;

    double prob_sum = 0.0;
    for_each_sequence(n, y, [&](const std::vector<std::size_t>& labels) {
      BIOLabelSequence s;
      s.labels = labels;
      prob_sum += std::exp(crf_log_prob(Var::constant(f.emissions), f.params, s).scalar());
    });
    worst_norm_err = std::max(worst_norm_err, std::abs(prob_sum - 1.0));
  }

  double dt = seconds_since(t0);
  rep.line(worst_logz_rel <= 1e-6 && viterbi_exact == kInstances && dt < 10.0,
           fmt("chain scoring vs exhaustive enumeration: %d instances, max logZ rel err "
               "%.2e, viterbi max exact %d/%d, %.1fs",
               kInstances, worst_logz_rel, viterbi_exact, kInstances, dt));
  rep.line(worst_norm_err <= 1e-6,
           fmt("chain distribution normalization: max |sum(exp(log_prob)) - 1| = %.2e "
               "over %d instances",
               worst_norm_err, kInstances));
}

// ---------------------------------------------------------------------------
// Gradient checks: analytic backward vs central finite differences
// ---------------------------------------------------------------------------

using Tensors = std::vector<Tensor>;

Tensor grad_or_zeros(const Var& v) {
  const Tensor& g = v.grad();
  if (g.rows() == v.value().rows() && g.cols() == v.value().cols()) return g;
  return Tensor(v.value().rows(), v.value().cols(), 0.0);
}

// Max relative error between `analytic` and central differences of `eval`.
double gradcheck(const Tensors& inputs, const Tensors& analytic,
                 const std::function<double(const Tensors&)>& eval) {
  const double h = 1e-3;
  double worst = 0.0;
  Tensors work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k) {
    std::vector<double>& data = work[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double keep = data[i];
      data[i] = keep + h;
      double fp = eval(work);
      data[i] = keep - h;
      double fm = eval(work);
      data[i] = keep;
      double numeric = (fp - fm) / (2.0 * h);
      double exact = analytic[k].data()[i];
      double rel = std::abs(exact - numeric) /
                   std::max({std::abs(exact), std::abs(numeric), 1e-2});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

Tensor rand_tensor(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void check_gradients(Report& rep) {
  auto t0 = std::chrono::steady_clock::now();
  const int kFixtures = 24;
  struct Entry {
    const char* name;
    double worst = 0.0;
  };
  std::vector<Entry> entries;

  {
    Entry e{"itm"};
    Rng rng(101);
    for (int k = 0; k < kFixtures; ++k) {
      std::size_t B = 2 + rng.below(5);
      Tensor probs = rand_tensor(rng, 1, B, 0.15, 0.85);
      std::vector<int> labels(B);
      for (auto& l : labels) l = static_cast<int>(rng.below(2));
      Var x = Var::leaf(probs);
      Var loss = itm_loss(x, labels);
      backward(loss);
      e.worst = std::max(
          e.worst, gradcheck({probs}, {grad_or_zeros(x)}, [&](const Tensors& in) {
            return itm_loss(Var::constant(in[0]), labels).scalar();
          }));
    }
    entries.push_back(e);
  }
  {
    Entry e{"cit"};
    Rng rng(102);
    for (int k = 0; k < kFixtures; ++k) {
      std::size_t n = 2 + rng.below(4);
      Tensor sim = rand_tensor(rng, n, n, -2.0, 2.0);
      double tau = 0.3 + 0.2 * (k % 4);
      Var x = Var::leaf(sim);
      Var loss = cit_loss(x, tau);
      backward(loss);
      e.worst = std::max(
          e.worst, gradcheck({sim}, {grad_or_zeros(x)}, [&](const Tensors& in) {
            return cit_loss(Var::constant(in[0]), tau).scalar();
          }));
    }
    entries.push_back(e);
  }
  for (int which = 0; which < 2; ++which) {
    Entry e{which == 0 ? "coe" : "cir"};
    Rng rng(103 + which);
    for (int k = 0; k < kFixtures; ++k) {
      std::size_t R = 1 + rng.below(4), M = 2 + rng.below(5);
      Tensor logits = rand_tensor(rng, R, M, -2.0, 2.0);
      std::vector<SoftLabelDistribution> targets(R);
      for (auto& d : targets) {
        d.probs.resize(M);
        double z = 0.0;
        for (double& p : d.probs) z += (p = rng.uniform(0.05, 1.0));
        for (double& p : d.probs) p /= z;
      }
      Var x = Var::leaf(logits);
      Var loss = which == 0 ? coe_loss(x, targets) : cir_loss(x, targets);
      backward(loss);
      e.worst = std::max(
          e.worst, gradcheck({logits}, {grad_or_zeros(x)}, [&](const Tensors& in) {
            Var v = Var::constant(in[0]);
            return (which == 0 ? coe_loss(v, targets) : cir_loss(v, targets)).scalar();
          }));
    }
    entries.push_back(e);
  }
  {
    Entry e{"mner"};
    Rng rng(105);
    for (int k = 0; k < kFixtures; ++k) {
      std::size_t y = 2 + rng.below(4);
      std::vector<BIOLabelSequence> gold(2);
      Tensors inputs;
      for (auto& g : gold) {
        std::size_t n = 1 + rng.below(4);
        inputs.push_back(rand_tensor(rng, n, y, -1.5, 1.5));
        g.labels.resize(n);
        for (auto& l : g.labels) l = rng.below(y);
      }
      inputs.push_back(rand_tensor(rng, y, y, -1.0, 1.0));  // transition
      inputs.push_back(rand_tensor(rng, 1, y, -1.0, 1.0));  // start
      inputs.push_back(rand_tensor(rng, 1, y, -1.0, 1.0));  // end

      Var e0 = Var::leaf(inputs[0]), e1 = Var::leaf(inputs[1]);
      CRFParams params = CRFParams::from_tensors(inputs[2], inputs[3], inputs[4]);
      Var loss = mner_loss({e0, e1}, gold, params);
      backward(loss);
      Tensors analytic = {grad_or_zeros(e0), grad_or_zeros(e1),
                          grad_or_zeros(params.transition), grad_or_zeros(params.start),
                          grad_or_zeros(params.end)};
      e.worst = std::max(
          e.worst, gradcheck(inputs, analytic, [&](const Tensors& in) {
            CRFParams p = CRFParams::from_tensors(in[2], in[3], in[4]);
            return mner_loss({Var::constant(in[0]), Var::constant(in[1])}, gold, p).scalar();
          }));
    }
    entries.push_back(e);
  }
  {
    Entry e{"mre"};
    Rng rng(106);
    for (int k = 0; k < kFixtures; ++k) {
      std::size_t B = 2 + rng.below(4), L = 2 + rng.below(5);
      Tensor logits = rand_tensor(rng, B, L, -2.0, 2.0);
      std::vector<std::size_t> gold(B);
      for (auto& g : gold) g = rng.below(L);
      Var x = Var::leaf(logits);
      Var loss = mre_loss(x, gold);
      backward(loss);
      e.worst = std::max(
          e.worst, gradcheck({logits}, {grad_or_zeros(x)}, [&](const Tensors& in) {
            return mre_loss(Var::constant(in[0]), gold).scalar();
          }));
    }
    entries.push_back(e);
  }

  double dt = seconds_since(t0);
  double worst = 0.0;
  std::string detail;
  for (const auto& e : entries) {
    worst = std::max(worst, e.worst);
    detail += fmt("%s %.1e ", e.name, e.worst);
  }
  rep.line(worst <= 1e-4 && dt < 60.0,
           fmt("gradient checks (%d fixtures per loss, step 1e-3): max rel err by loss: "
               "%s(%.1fs)",
               kFixtures, detail.c_str(), dt));
}

// ---------------------------------------------------------------------------
// Closed-form loss values
// ---------------------------------------------------------------------------

void check_closed_form(Report& rep) {
  bool ok = true;
  std::string notes;

  Tensor diag2(2, 2, 0.0);
  diag2.at(0, 0) = 2.0;
  diag2.at(1, 1) = 2.0;
  double got = cit_loss(diag2, 1.0);
  double want = std::log(1.0 + std::exp(-2.0));
  ok &= std::abs(got - want) <= 1e-6;
  notes += fmt("contrastive diag-2 %.6f (want %.6f); ", got, want);

  for (std::size_t n : {2u, 3u, 5u}) {
    Tensor flat(n, n, 0.7);
    double g = cit_loss(flat, 1.0);
    ok &= std::abs(g - std::log(double(n))) <= 1e-6;
    notes += fmt("equal-sim n=%zu %.6f; ", n, g);
  }

  double itm = itm_loss(std::vector<double>{0.5}, std::vector<int>{1});
  ok &= std::abs(itm - std::log(2.0)) <= 1e-9;
  notes += fmt("match p=0.5 %.9f; ", itm);

  Tensor logits(1, 4, 0.3);
  SoftLabelDistribution uni;
  uni.probs.assign(4, 0.25);
  double coe = coe_loss(logits, {uni});
  ok &= std::abs(coe - std::log(4.0)) <= 1e-9;
  notes += fmt("uniform soft-CE M=4 %.9f", coe);

  rep.line(ok, "closed-form loss values: " + notes);
}

// ---------------------------------------------------------------------------
// Soft pseudo-label distribution properties
// ---------------------------------------------------------------------------

void check_pseudo_labels(Report& rep) {
  Rng rng(2718);
  const double taus[] = {0.07, 0.25, 1.0, 2.5};
  double worst_sum = 0.0, worst_shift = 0.0, worst_perm = 0.0;

  for (int k = 0; k < 100; ++k) {
    std::size_t n = 2 + rng.below(7);
    double tau = taus[k % 4];
    std::vector<double> sims(n);
    for (double& s : sims) s = rng.uniform(-3.0, 3.0);

    SoftLabelDistribution d = soft_label_from_similarities(sims, tau);
    double sum = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    double c = rng.uniform(-5.0, 5.0);
    std::vector<double> shifted = sims;
    for (double& s : shifted) s += c;
    SoftLabelDistribution ds = soft_label_from_similarities(shifted, tau);
    for (std::size_t i = 0; i < n; ++i)
      worst_shift = std::max(worst_shift, std::abs(ds.probs[i] - d.probs[i]));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> permuted(n);
    for (std::size_t i = 0; i < n; ++i) permuted[i] = sims[perm[i]];
    SoftLabelDistribution dp = soft_label_from_similarities(permuted, tau);
    for (std::size_t i = 0; i < n; ++i)
      worst_perm = std::max(worst_perm, std::abs(dp.probs[i] - d.probs[perm[i]]));
  }

  SoftLabelDistribution triple = soft_label_from_similarities({2.0, 1.0, 0.0}, 1.0);
  const double want[] = {0.665241, 0.244728, 0.090031};
  double triple_err = 0.0;
  for (int i = 0; i < 3; ++i)
    triple_err = std::max(triple_err, std::abs(triple.probs[i] - want[i]));

  rep.line(worst_sum <= 1e-6 && worst_shift <= 1e-9 && worst_perm <= 1e-9 &&
               triple_err <= 1e-6,
           fmt("soft pseudo-labels: sum-to-1 err %.1e, shift invariance %.1e, permutation "
               "equivariance %.1e over 100 fixtures; [2,1,0] tau=1 err %.1e",
               worst_sum, worst_shift, worst_perm, triple_err));
}

// ---------------------------------------------------------------------------
// Empirical pipeline criteria on the synthetic corpus
// ---------------------------------------------------------------------------

struct PipelineState {
  ToyCorpus corpus;
  PretrainResult pretrain;
};

void check_pretraining(Report& rep, PipelineState& st, const std::string& dir) {
  st.corpus = generate_toy_corpus(dir, 1);
  auto t0 = std::chrono::steady_clock::now();
  st.pretrain = run_pretrain(st.corpus.pretrain_config());
  double dt = seconds_since(t0);
  double first = st.pretrain.steps.front().total;
  double last = st.pretrain.steps.back().total;
  double final_acc = st.pretrain.steps.back().itm_accuracy;
  rep.line(last < 0.5 * first && final_acc == 1.0 && dt < 300.0,
           fmt("toy pre-training (64 pairs, %zu steps): total %.3f -> %.3f (%.1f%% of "
               "initial), final batch match accuracy %.0f%%, %.1fs",
               st.pretrain.steps.size(), first, last, 100.0 * last / first,
               100.0 * final_acc, dt));
}

void check_overfit(Report& rep, PipelineState& st) {
  auto t0 = std::chrono::steady_clock::now();
  FinetuneResult ner = run_finetune_ner(st.corpus.ner_config());
  double ner_dt = seconds_since(t0);

  RunConfig re_cfg = st.corpus.re_config();
  t0 = std::chrono::steady_clock::now();
  FinetuneResult re = run_finetune_re(re_cfg);
  double re_dt = seconds_since(t0);

  // The relation criterion is stated in accuracy; rescore the final weights.
  Vocabulary vocab = Vocabulary::load(re_cfg.paths.vocab_file);
  Tokenizer tok(vocab, re_cfg.encoder.max_text_len);
  RelationTagSet tags = load_relation_tags(re_cfg.paths.relation_tags);
  std::vector<ReExample> train = load_re_split(re_cfg.paths.mre_train, re_cfg, tok, tags);
  ParamStore ps(re_cfg.seed);
  ReModel model(re_cfg.encoder, tags.tags.size(), ps);
  apply_checkpoint(load_checkpoint(re.final_checkpoint), ps, /*strict=*/true);
  double re_acc = evaluate_re(model, train, negative_label_index(re_cfg, tags)).accuracy;

  rep.line(ner.final_train_metric == 1.0 && ner_dt < 120.0 && re_acc == 1.0 && re_dt < 120.0,
           fmt("toy fine-tuning overfit within 200 steps: sequence labeling train span-F1 "
               "%.3f (%.1fs), relation train accuracy %.3f (%.1fs)",
               ner.final_train_metric, ner_dt, re_acc, re_dt));
}

void check_transfer(Report& rep, PipelineState& st, const std::string& dir) {
  double warm_sum = 0.0, scratch_sum = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::string pretrain_ckpt;
    if (seed == 1) {
      pretrain_ckpt = st.pretrain.final_checkpoint;
    } else {
      RunConfig pre = st.corpus.pretrain_config();
      pre.seed = seed;
      pre.encoder.seed = seed;
      pre.paths.output_dir = dir + "/out/tx_pre_s" + std::to_string(seed);
      pretrain_ckpt = run_pretrain(pre).final_checkpoint;
    }
    RunConfig warm_cfg = st.corpus.ner_config();
    warm_cfg.seed = seed;
    warm_cfg.encoder.seed = seed;
    warm_cfg.paths.init_checkpoint = pretrain_ckpt;
    warm_cfg.paths.output_dir = dir + "/out/tx_warm_s" + std::to_string(seed);
    double warm = run_finetune_ner(warm_cfg).best_dev;

    RunConfig scratch_cfg = warm_cfg;
    scratch_cfg.paths.init_checkpoint.clear();
    scratch_cfg.paths.output_dir = dir + "/out/tx_scratch_s" + std::to_string(seed);
    double scratch = run_finetune_ner(scratch_cfg).best_dev;

    warm_sum += warm;
    scratch_sum += scratch;
    per_seed += fmt("s%llu %.3f/%.3f ", (unsigned long long)seed, warm, scratch);
  }
  double warm_mean = warm_sum / 5.0, scratch_mean = scratch_sum / 5.0;
  rep.line(warm_mean >= scratch_mean,
           fmt("transfer over 5 seeds: pre-trained-init dev span-F1 mean %.4f vs "
               "random-init mean %.4f (per seed warm/scratch: %s)",
               warm_mean, scratch_mean, per_seed.c_str()));
}

void check_determinism(Report& rep, PipelineState& st, const std::string& dir) {
  // Identical seeds, fresh output directory: the loss curves must match
  // step for step, exactly.
  RunConfig rerun_cfg = st.corpus.pretrain_config();
  rerun_cfg.paths.output_dir = dir + "/out/pretrain_rerun";
  PretrainResult rerun = run_pretrain(rerun_cfg);
  bool curves_equal = rerun.steps.size() == st.pretrain.steps.size();
  for (std::size_t i = 0; curves_equal && i < rerun.steps.size(); ++i) {
    const auto& a = st.pretrain.steps[i];
    const auto& b = rerun.steps[i];
    curves_equal = a.total == b.total && a.itm == b.itm && a.cit == b.cit &&
                   a.coe == b.coe && a.cir == b.cir;
  }

  // Checkpoint round-trip: parameters written, loaded into a differently
  // initialized model, forwarded on a fixed pair -- outputs bit-identical;
  // re-serialization byte-identical.
  EncoderConfig enc = st.corpus.encoder_config();
  Vocabulary vocab = Vocabulary::load(st.corpus.vocab_file);
  Tokenizer tok(vocab, enc.max_text_len);
  PretrainRecord rec = read_pretrain_corpus(st.corpus.pretrain_corpus).front();
  TokenSequence tokens = tok.tokenize(rec.caption);
  PatchGrid patches{read_patch_file(dir + "/" + rec.patch_file, enc.num_patches,
                                    enc.patch_feature_dim)};

  ParamStore psA(7);
  PretrainModel mA(enc, st.corpus.nouns.size(), st.corpus.relations.size(), true, psA);
  EncodedPair encA = mA.encode_pair(tokens, patches);
  double probA = mA.match_prob(encA.fused).scalar();
  Tensor fusedA = encA.fused.seq.value();

  std::string ckpt = dir + "/out/roundtrip.ckpt";
  save_checkpoint(ckpt, psA, "{}", 0, "rt");

  ParamStore psB(8);
  PretrainModel mB(enc, st.corpus.nouns.size(), st.corpus.relations.size(), true, psB);
  apply_checkpoint(load_checkpoint(ckpt), psB, /*strict=*/true);
  EncodedPair encB = mB.encode_pair(tokens, patches);
  bool forward_equal = mB.match_prob(encB.fused).scalar() == probA &&
                       encB.fused.seq.value().data() == fusedA.data();

  std::string ckpt2 = dir + "/out/roundtrip2.ckpt";
  save_checkpoint(ckpt2, psB, "{}", 0, "rt");
  bool bytes_equal = read_bytes(ckpt) == read_bytes(ckpt2);

  // Pseudo-label cache rebuild on unchanged inputs is byte-identical.
  RunConfig genA = st.corpus.base_config();
  genA.stage = Stage::kGenPseudoLabels;
  genA.paths.cache_file = dir + "/out/cache_a.jsonl";
  run_gen_pseudo_labels(genA);
  RunConfig genB = genA;
  genB.paths.cache_file = dir + "/out/cache_b.jsonl";
  run_gen_pseudo_labels(genB);
  bool cache_equal = read_bytes(genA.paths.cache_file) == read_bytes(genB.paths.cache_file);

  rep.line(curves_equal && forward_equal && bytes_equal && cache_equal,
           fmt("determinism and persistence: loss curves identical across reruns (%s), "
               "checkpoint round-trip forward bit-identical (%s) and re-serialization "
               "byte-identical (%s), pseudo-label cache rebuild byte-identical (%s)",
               curves_equal ? "yes" : "NO", forward_equal ? "yes" : "NO",
               bytes_equal ? "yes" : "NO", cache_equal ? "yes" : "NO"));
}

}  // namespace

int main() {
  Report rep;
  rep.na("paper-scale F1 reproduction (Table-level numbers): out of desk scale by design "
         "-- needs the original corpora and multi-GPU budgets; the property and "
         "synthetic-corpus criteria below stand in");

  check_chain_oracle(rep);
  check_gradients(rep);
  check_closed_form(rep);
  check_pseudo_labels(rep);

  std::string dir = (fs::temp_directory_path() / "promalign_acceptance").string();
  fs::remove_all(dir);
  PipelineState st;
  check_pretraining(rep, st, dir);
  check_overfit(rep, st);
  check_transfer(rep, st, dir);
  check_determinism(rep, st, dir);

  std::printf("%d passed, %d failed\n", rep.passed, rep.failed);
  return rep.failed == 0 ? 0 : 1;
}
