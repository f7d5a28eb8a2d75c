#include "slidelm/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "slidelm/trainer.hpp"

namespace slidelm {

GeneratedReport generate_report(const Model<float>& model, const Vocabulary& vocab,
                                const nn::Tensor<float>& tiles, int max_len) {
  const auto& m = model;
  auto enc = m.encoder().encode(nullptr, tiles);

  GeneratedReport out;
  std::vector<int64_t> seq = {Vocabulary::kBos};
  const int64_t cap = std::min<int64_t>(
      max_len, m.decoder().config().max_seq_len - 2);
  for (int64_t step = 0; step < cap; ++step) {
    auto uni = m.decoder().unimodal_forward(nullptr, seq);
    auto logits = m.decoder().multimodal_forward(nullptr, uni.hidden,
                                                 enc.context_latents);
    const int64_t T = logits.rows(), V = logits.cols();
    const float* row = logits.data() + (T - 1) * V;
    int64_t best = 0;
    for (int64_t j = 1; j < V; ++j)
      if (row[j] > row[best]) best = j;  // strict: ties keep the lowest id
    if (best == Vocabulary::kEos) {
      out.truncated = false;
      out.text = detokenize(vocab, out.ids);
      return out;
    }
    out.ids.push_back(best);
    seq.push_back(best);
  }
  out.truncated = true;
  out.text = detokenize(vocab, out.ids);
  return out;
}

nn::Tensor<float> embed_prompt(const Model<float>& model, const Vocabulary& vocab,
                               const std::string& text) {
  if (text.empty()) throw std::invalid_argument("embed_prompt: empty prompt");
  const auto& m = model;
  std::vector<int64_t> ids = {Vocabulary::kBos};
  auto tokens = tokenize(vocab, text);
  const size_t cap = static_cast<size_t>(m.decoder().config().max_seq_len) - 2;
  if (tokens.size() > cap) tokens.resize(cap);
  ids.insert(ids.end(), tokens.begin(), tokens.end());
  auto uni = m.decoder().unimodal_forward(nullptr, ids);
  return m.project_text(nullptr, uni.cls);
}

PromptSet load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_prompts: cannot open " + path);
  PromptSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto l = line.find_first_not_of(" \t\r");
    if (l == std::string::npos) continue;
    const auto r = line.find_last_not_of(" \t\r");
    line = line.substr(l, r - l + 1);
    if (line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      set.classes.emplace_back(line.substr(1, line.size() - 2),
                               std::vector<std::string>{});
    } else {
      if (set.classes.empty())
        throw std::runtime_error("load_prompts: prompt before any [class] at line " +
                                 std::to_string(lineno));
      set.classes.back().second.push_back(line);
    }
  }
  validate_prompts(set);
  return set;
}

void save_prompts(const std::string& path, const PromptSet& prompts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_prompts: cannot open " + path);
  for (const auto& [label, list] : prompts.classes) {
    out << "[" << label << "]\n";
    for (const auto& p : list) out << p << "\n";
  }
}

void validate_prompts(const PromptSet& prompts) {
  if (prompts.classes.size() < 2)
    throw std::invalid_argument("prompts: need at least two classes");
  for (const auto& [label, list] : prompts.classes) {
    if (list.empty())
      throw std::invalid_argument("prompts: class '" + label + "' has no prompts");
    for (size_t i = 0; i < list.size(); ++i)
      for (size_t j = i + 1; j < list.size(); ++j)
        if (list[i] == list[j])
          throw std::invalid_argument("prompts: duplicate prompt within class '" +
                                      label + "'");
  }
}

ZeroShotResult zero_shot_classify(const Model<float>& model, const Vocabulary& vocab,
                                  const nn::Tensor<float>& tiles,
                                  const PromptSet& prompts) {
  // distinctness is a file-format invariant enforced at IO time; the
  // classifier itself only needs classes and prompts to exist
  if (prompts.classes.size() < 2)
    throw std::invalid_argument("zero_shot: need at least two classes");
  for (const auto& [label, list] : prompts.classes)
    if (list.empty())
      throw std::invalid_argument("zero_shot: class '" + label + "' has no prompts");
  const auto& m = model;
  auto enc = m.encoder().encode(nullptr, tiles);
  auto v = m.project_slide(nullptr, enc.slide_embedding);  // [1 x P]

  // cosine similarity of every prompt to the slide (both unit norm)
  std::vector<double> sims;
  std::vector<size_t> class_of;
  for (size_t c = 0; c < prompts.classes.size(); ++c) {
    for (const auto& text : prompts.classes[c].second) {
      auto t = embed_prompt(model, vocab, text);
      double dot = 0;
      for (int64_t j = 0; j < t.numel(); ++j)
        dot += static_cast<double>(v.data()[j]) * static_cast<double>(t.data()[j]);
      sims.push_back(dot);
      class_of.push_back(c);
    }
  }

  // one softmax over the union of prompts at the learned temperature
  const double tau = m.temperature();
  double mx = sims[0];
  for (double s : sims) mx = std::max(mx, s);
  double denom = 0;
  std::vector<double> e(sims.size());
  for (size_t i = 0; i < sims.size(); ++i) {
    e[i] = std::exp((sims[i] - mx) / tau);
    denom += e[i];
  }

  ZeroShotResult out;
  out.probabilities.assign(prompts.classes.size(), 0.0);
  for (size_t i = 0; i < sims.size(); ++i)
    out.probabilities[class_of[i]] += e[i] / denom;

  int best = 0;
  for (int c = 1; c < static_cast<int>(out.probabilities.size()); ++c) {
    const double pc = out.probabilities[static_cast<size_t>(c)];
    const double pb = out.probabilities[static_cast<size_t>(best)];
    if (pc > pb || (pc == pb && prompts.classes[static_cast<size_t>(c)].first <
                                    prompts.classes[static_cast<size_t>(best)].first))
      best = c;
  }
  out.predicted_class = best;
  return out;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auroc: bad inputs");
  int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: both classes must be present");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // average ranks over ties
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_pos = 0;
  for (size_t k = 0; k < scores.size(); ++k)
    if (labels[k]) rank_pos += rank[k];
  const double u = rank_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// linear probe

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  void fit(const std::vector<std::vector<double>>& x, const std::vector<size_t>& idx) {
    const size_t d = x[0].size();
    mean.assign(d, 0.0);
    inv_std.assign(d, 1.0);
    for (size_t i : idx)
      for (size_t j = 0; j < d; ++j) mean[j] += x[i][j];
    for (auto& m : mean) m /= static_cast<double>(idx.size());
    std::vector<double> var(d, 0.0);
    for (size_t i : idx)
      for (size_t j = 0; j < d; ++j) {
        const double c = x[i][j] - mean[j];
        var[j] += c * c;
      }
    for (size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(idx.size()));
      inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }

  std::vector<double> apply(const std::vector<double>& row) const {
    std::vector<double> out(row.size());
    for (size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) * inv_std[j];
    return out;
  }
};

struct LogRegModel {
  std::vector<double> w;
  double b = 0;
  double score(const std::vector<double>& row) const {
    double z = b;
    for (size_t j = 0; j < row.size(); ++j) z += w[j] * row[j];
    return z;
  }
};

// Regularized logistic regression fit with the shared AdamW optimizer.
// Objective: mean log-loss + ||w||^2 / (2 * coefficient * n); the bias is
// unregularized. Runs to gradient-norm < tol or max_iter.
LogRegModel fit_logreg(const std::vector<std::vector<double>>& x,
                       const std::vector<int>& y, const std::vector<size_t>& idx,
                       double coefficient, int max_iter, double tol) {
  const size_t d = x[0].size();
  const double n = static_cast<double>(idx.size());

  auto wt = nn::Tensor<double>::zeros({static_cast<int64_t>(d)}, true);
  auto bt = nn::Tensor<double>::zeros({1}, true);
  std::vector<nn::Tensor<double>> params = {wt, bt};
  nn::AdamW<double> opt(0.9, 0.999, 1e-8, 0.0);
  opt.register_params(params);

  for (int it = 0; it < max_iter; ++it) {
    wt.zero_grad();
    bt.zero_grad();
    for (size_t i : idx) {
      double z = bt.data()[0];
      for (size_t j = 0; j < d; ++j) z += wt.data()[j] * x[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double g = (p - (y[i] ? 1.0 : 0.0)) / n;
      for (size_t j = 0; j < d; ++j) wt.grad()[j] += g * x[i][j];
      bt.grad()[0] += g;
    }
    for (size_t j = 0; j < d; ++j) wt.grad()[j] += wt.data()[j] / (coefficient * n);

    double sq = 0;
    for (size_t j = 0; j < d; ++j) sq += wt.grad()[j] * wt.grad()[j];
    sq += bt.grad()[0] * bt.grad()[0];
    if (std::sqrt(sq) < tol) break;
    opt.step(params, 0.1);
  }
  LogRegModel m;
  m.w.assign(wt.data(), wt.data() + d);
  m.b = bt.data()[0];
  return m;
}

// Stratified fold assignment: shuffle each class, deal round-robin.
std::vector<int> stratified_folds(const std::vector<int>& y, int folds, Rng rng) {
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
  auto shuffle = [&rng](std::vector<size_t>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
  };
  shuffle(pos);
  shuffle(neg);
  std::vector<int> fold_of(y.size(), 0);
  int f = 0;
  for (size_t i : pos) fold_of[i] = f++ % folds;
  f = 0;
  for (size_t i : neg) fold_of[i] = f++ % folds;
  return fold_of;
}

}  // namespace

ProbeResult linear_probe(const std::vector<std::vector<double>>& x,
                         const std::vector<int>& y,
                         const std::vector<std::vector<double>>& x_heldout,
                         const std::vector<int>& y_heldout, const ProbeConfig& cfg) {
  if (x.size() != y.size() || x.size() < 10)
    throw std::invalid_argument("linear_probe: need at least 10 labeled rows");
  const auto fold_of = stratified_folds(y, cfg.folds, substream(cfg.seed, "folds"));
  for (int f = 0; f < cfg.folds; ++f) {
    int pos = 0, neg = 0;
    for (size_t i = 0; i < y.size(); ++i)
      if (fold_of[i] == f) (y[i] ? pos : neg)++;
    if (pos == 0 || neg == 0)
      throw std::invalid_argument("linear_probe: a fold lost one of the classes");
  }

  ProbeResult result;
  double best_mean = -1.0;
  for (double coeff : cfg.grid) {
    double mean_auc = 0;
    for (int f = 0; f < cfg.folds; ++f) {
      std::vector<size_t> train_idx, val_idx;
      for (size_t i = 0; i < y.size(); ++i)
        (fold_of[i] == f ? val_idx : train_idx).push_back(i);

      std::vector<std::vector<double>> xt = x;
      if (cfg.standardize) {
        Standardizer st;
        st.fit(x, train_idx);
        for (auto& row : xt) row = st.apply(row);
      }
      auto model = fit_logreg(xt, y, train_idx, coeff, cfg.max_iter, cfg.tol);
      std::vector<double> scores;
      std::vector<int> labels;
      for (size_t i : val_idx) {
        scores.push_back(model.score(xt[i]));
        labels.push_back(y[i]);
      }
      mean_auc += auroc(scores, labels) / cfg.folds;
    }
    result.cv_mean_auroc.push_back(mean_auc);
    // strict improvement required: ties keep the earlier (stronger) setting
    if (mean_auc > best_mean) {
      best_mean = mean_auc;
      result.chosen_coefficient = coeff;
    }
  }

  // refit on all training data with the chosen coefficient
  std::vector<size_t> all_idx(x.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);
  std::vector<std::vector<double>> xt = x;
  std::vector<std::vector<double>> xh = x_heldout;
  if (cfg.standardize) {
    Standardizer st;
    st.fit(x, all_idx);
    for (auto& row : xt) row = st.apply(row);
    for (auto& row : xh) row = st.apply(row);
  }
  auto model = fit_logreg(xt, y, all_idx, result.chosen_coefficient, cfg.max_iter,
                          cfg.tol);
  for (const auto& row : xh) result.heldout_scores.push_back(model.score(row));
  result.heldout_auroc = auroc(result.heldout_scores, y_heldout);
  return result;
}

// ---------------------------------------------------------------------------
// fine-tuning

namespace {
void copy_params(const SlideEncoder<float>& src, SlideEncoder<float>& dst) {
  std::vector<NamedParam<float>> a, b;
  src.collect(a, "enc");
  dst.collect(b, "enc");
  if (a.size() != b.size())
    throw std::runtime_error("fine_tune: encoder parameter sets disagree");
  for (size_t i = 0; i < a.size(); ++i) b[i].tensor.value_vec() = a[i].tensor.value_vec();
}
}  // namespace

double fine_tune(const PerceiverConfig& cfg, const SlideEncoder<float>* init_from,
                 const std::vector<nn::Tensor<float>>& train_bags,
                 const std::vector<int>& train_labels,
                 const std::vector<nn::Tensor<float>>& heldout_bags,
                 const std::vector<int>& heldout_labels, const FineTuneOptions& opt) {
  if (train_bags.size() != train_labels.size() || train_bags.empty())
    throw std::invalid_argument("fine_tune: bad training data");
  {
    int pos = 0, neg = 0;
    for (int l : train_labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0)
      throw std::invalid_argument("fine_tune: single-class training set");
  }

  SlideEncoder<float> encoder(cfg);
  Rng init_rng = substream(opt.seed, "finetune-init");
  encoder.init(init_rng);
  if (init_from) copy_params(*init_from, encoder);

  Linear<float> head;
  head.init(cfg.latent_dim, 1, init_rng, 0.02f, true);

  std::vector<nn::Tensor<float>> params;
  {
    std::vector<NamedParam<float>> named;
    encoder.collect(named, "enc");
    for (auto& np : named) params.push_back(np.tensor);
    params.push_back(head.w);
    params.push_back(head.b);
  }
  nn::AdamW<float> adam(0.9, 0.999, 1e-8, opt.weight_decay);
  adam.register_params(params);
  // same warmup + cosine protocol as pretraining, compressed to the budget
  const nn::LrSchedule sched{opt.lr, std::max(1, opt.steps / 10), opt.steps};

  const int64_t n = static_cast<int64_t>(train_bags.size());
  const int64_t batch = std::min<int64_t>(opt.batch, n);
  for (int step = 0; step < opt.steps; ++step) {
    auto idx = sample_indices(n, batch,
                              substream(opt.seed, "finetune-batch",
                                        static_cast<uint64_t>(step)));
    nn::Tape<float> tape;
    std::vector<nn::Tensor<float>> logit_rows;
    std::vector<float> labels;
    for (int64_t i : idx) {
      auto enc = encoder.encode(&tape, train_bags[static_cast<size_t>(i)]);
      logit_rows.push_back(head.forward(&tape, enc.slide_embedding));
      labels.push_back(static_cast<float>(train_labels[static_cast<size_t>(i)]));
    }
    auto logits = nn::concat_rows(&tape, logit_rows);
    auto loss = nn::bce_with_logits(&tape, logits, labels);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw std::runtime_error("fine_tune: non-finite loss");
    tape.backward(loss);
    nn::clip_grad_norm(params, opt.clip_norm);
    adam.step(params, nn::cosine_lr(step + 1, sched));
    for (auto& p : params) p.zero_grad();
  }

  std::vector<double> scores;
  for (const auto& bag : heldout_bags) {
    auto enc = encoder.encode(nullptr, bag);
    auto z = head.forward(nullptr, enc.slide_embedding);
    scores.push_back(static_cast<double>(z.data()[0]));
  }
  return auroc(scores, heldout_labels);
}

HarnessResult subset_fraction_harness(const PerceiverConfig& cfg,
                                      const SlideEncoder<float>& pretrained,
                                      const TaskData& task,
                                      const std::vector<double>& fractions, int runs,
                                      const FineTuneOptions& ft, uint64_t master_seed) {
  if (fractions.empty() ||
      std::none_of(fractions.begin(), fractions.end(),
                   [](double f) { return f == 1.0; }))
    throw std::invalid_argument("subset harness: fractions must include 1.0");
  if (runs < 1) throw std::invalid_argument("subset harness: runs must be positive");

  std::vector<nn::Tensor<float>> train_bags;
  for (const auto& b : task.train_bags) train_bags.push_back(bag_to_tensor(b));
  std::vector<nn::Tensor<float>> heldout_bags;
  for (const auto& b : task.heldout_bags) heldout_bags.push_back(bag_to_tensor(b));

  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < task.train_labels.size(); ++i)
    (task.train_labels[i] ? pos : neg).push_back(i);

  HarnessResult result;
  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    const double fraction = fractions[fi];
    if (fraction <= 0.0 || fraction > 1.0)
      throw std::invalid_argument("subset harness: fraction out of (0,1]");
    for (int run = 0; run < runs; ++run) {
      // a different random subset for each experimental run
      Rng rng = substream(master_seed, "subset", fi, static_cast<uint64_t>(run));
      auto draw = [&rng, fraction](const std::vector<size_t>& cls) {
        const int64_t want = std::max<int64_t>(
            1, static_cast<int64_t>(std::lround(fraction * static_cast<double>(cls.size()))));
        auto picks = sample_indices(static_cast<int64_t>(cls.size()), want, rng);
        std::vector<size_t> out;
        for (int64_t p : picks) out.push_back(cls[static_cast<size_t>(p)]);
        return out;
      };
      std::vector<size_t> chosen = draw(neg);
      for (size_t i : draw(pos)) chosen.push_back(i);
      std::sort(chosen.begin(), chosen.end());

      std::vector<nn::Tensor<float>> bags;
      std::vector<int> labels;
      for (size_t i : chosen) {
        bags.push_back(train_bags[i]);
        labels.push_back(task.train_labels[i]);
      }
      for (int mode = 0; mode < 2; ++mode) {
        const bool use_pretrained = mode == 1;
        FineTuneOptions local = ft;
        local.seed = fnv1a64_u64(
            static_cast<uint64_t>(run) * 2 + (use_pretrained ? 1 : 0),
            fnv1a64_u64(fi, master_seed));
        const double auc =
            fine_tune(cfg, use_pretrained ? &pretrained : nullptr, bags, labels,
                      heldout_bags, task.heldout_labels, local);
        result.cells.push_back({fraction, run, use_pretrained, auc});
      }
    }
  }

  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    for (int mode = 0; mode < 2; ++mode) {
      const bool pre = mode == 1;
      std::vector<double> vals;
      for (const auto& c : result.cells)
        if (c.fraction == fractions[fi] && c.pretrained == pre)
          vals.push_back(c.auroc_value);
      double mean = 0;
      for (double v : vals) mean += v / static_cast<double>(vals.size());
      double var = 0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sd = vals.size() > 1
                            ? std::sqrt(var / static_cast<double>(vals.size() - 1))
                            : 0.0;
      result.summary.push_back({fractions[fi], pre, mean, sd});
      if (fractions[fi] == 1.0 && !pre) result.scratch_full_mean = mean;
    }
  }

  std::vector<double> sorted_fracs = fractions;
  std::sort(sorted_fracs.begin(), sorted_fracs.end());
  for (double f : sorted_fracs) {
    for (const auto& row : result.summary) {
      if (row.fraction == f && row.pretrained &&
          row.mean >= 0.995 * result.scratch_full_mean) {
        result.minimal_sufficient_fraction = f;
        break;
      }
    }
    if (result.minimal_sufficient_fraction >= 0) break;
  }
  return result;
}

std::vector<std::vector<double>> slide_embeddings(const SlideEncoder<float>& encoder,
                                                  const std::vector<nn::Tensor<float>>& bags) {
  std::vector<std::vector<double>> out;
  for (const auto& bag : bags) {
    auto enc = encoder.encode(nullptr, bag);
    std::vector<double> row(static_cast<size_t>(enc.slide_embedding.numel()));
    for (int64_t j = 0; j < enc.slide_embedding.numel(); ++j)
      row[static_cast<size_t>(j)] = static_cast<double>(enc.slide_embedding.data()[j]);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace slidelm
