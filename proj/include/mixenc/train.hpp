#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mixenc/models.hpp"

namespace mixenc {

template <class T>
struct Adam {
  double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor<T>> params;
  std::vector<std::vector<double>> m, v;

  template <class Model>
  void attach(Model& model) {
    params.clear();
    model.visit([this](const std::string&, Tensor<T>& p) {
      params.push_back(p);
    });
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
      v[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }

  void step(double lr_now) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad()) continue;
      auto& vals = params[i].values_mut();
      const auto& g = params[i].grad();
      for (size_t j = 0; j < vals.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
        const double mhat = m[i][j] / bc1;
        const double vhat = v[i][j] / bc2;
        vals[j] = static_cast<T>(static_cast<double>(vals[j]) -
                                 lr_now * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

// Linear warmup to lr over warmup_frac of total steps, then linear decay.
inline double lr_at(double base_lr, double warmup_frac, int64_t step,
                    int64_t total_steps) {
  const int64_t warm =
      std::max<int64_t>(1, static_cast<int64_t>(warmup_frac * total_steps));
  if (step < warm) return base_lr * static_cast<double>(step + 1) / warm;
  const double rest = static_cast<double>(total_steps - warm);
  if (rest <= 0) return base_lr;
  return base_lr * std::max(0.0, 1.0 - (step + 1 - warm) / rest);
}

struct TrainResult {
  std::vector<double> losses;  // per step
  RankingMetrics final_metrics;
  double final_accuracy = 0.0;
  int64_t epochs_run = 0;
};

class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::binary);
      if (!out_) throw std::runtime_error("cannot open metrics log: " + path);
    }
  }
  void record(const nlohmann::json& j) {
    if (out_.is_open()) out_ << j.dump() << '\n';
  }
  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

// Scores one query's candidate list with a prepared representation set.
template <class Model>
std::vector<double> score_record(const Model& model, const Vocab& vocab,
                                 const CorpusRecord& rec) {
  std::vector<TokenSequence> cands;
  cands.reserve(rec.candidates.size());
  for (const auto& c : rec.candidates)
    cands.push_back(candidate_sequence(vocab, c.text));
  if constexpr (requires(const Model& m) {
                  m.score_query_texts(std::string{}, std::vector<std::string>{},
                                      vocab);
                }) {
    std::vector<std::string> texts;
    for (const auto& c : rec.candidates) texts.push_back(c.text);
    return model.score_query_texts(rec.text, texts, vocab);
  } else {
    auto prep = model.prepare(cands, vocab);
    return model.score_prepared(query_sequence(vocab, rec.text), prep);
  }
}

template <class Model>
RankingMetrics evaluate_ranking(const Model& model, const Corpus& corpus,
                                const Vocab& vocab, int64_t limit = -1) {
  if (corpus.records.empty())
    throw std::runtime_error("cannot evaluate an empty corpus");
  NoGradGuard ng;
  std::vector<RankedQuery> ranked;
  const int64_t n = limit < 0
                        ? static_cast<int64_t>(corpus.records.size())
                        : std::min<int64_t>(limit, corpus.records.size());
  for (int64_t i = 0; i < n; ++i) {
    const auto& rec = corpus.records[static_cast<size_t>(i)];
    RankedQuery rq;
    rq.scores = score_record(model, vocab, rec);
    for (const auto& c : rec.candidates) {
      rq.cand_ids.push_back(c.id);
      bool pos = false;
      for (int64_t pid : rec.positive_ids) pos |= (pid == c.id);
      rq.is_positive.push_back(pos ? 1 : 0);
    }
    ranked.push_back(std::move(rq));
  }
  return ranking_metrics(ranked);
}

template <class Model>
double evaluate_classification(const Model& model, const Corpus& corpus,
                               const Vocab& vocab, int64_t limit = -1) {
  if (corpus.records.empty())
    throw std::runtime_error("cannot evaluate an empty corpus");
  NoGradGuard ng;
  std::vector<int> pred, gold;
  const int64_t n = limit < 0
                        ? static_cast<int64_t>(corpus.records.size())
                        : std::min<int64_t>(limit, corpus.records.size());
  const int64_t chunk = 64;
  for (int64_t at = 0; at < n; at += chunk) {
    const int64_t stop = std::min(n, at + chunk);
    std::vector<TokenSequence> qs, cs;
    for (int64_t i = at; i < stop; ++i) {
      const auto& rec = corpus.records[static_cast<size_t>(i)];
      qs.push_back(query_sequence(vocab, rec.text));
      cs.push_back(candidate_sequence(vocab, rec.candidates.at(0).text));
      gold.push_back(rec.label);
    }
    auto logits = model.classification_logits(qs, cs, vocab);
    const int64_t c = logits.shape()[1];
    for (int64_t r = 0; r < stop - at; ++r) {
      int best = 0;
      for (int64_t j = 1; j < c; ++j)
        if (logits.values()[r * c + j] > logits.values()[r * c + best])
          best = static_cast<int>(j);
      pred.push_back(best);
    }
  }
  return classification_accuracy(pred, gold);
}

// In-batch-negative training for ranking corpora, plain cross-entropy for
// classification ones. Deterministic for a fixed seed.
template <class T, class Model>
TrainResult train_model(Model& model, const Corpus& train_corpus,
                        const Corpus* eval_corpus, const Vocab& vocab,
                        const TrainConfig& tc) {
  const bool classification = train_corpus.is_classification();
  Adam<T> opt;
  opt.lr = tc.lr;
  opt.beta1 = tc.beta1;
  opt.beta2 = tc.beta2;
  opt.eps = tc.adam_eps;
  opt.attach(model);

  MetricsLog log(tc.log_path);
  Philox shuffler(tc.seed, 0x7A17);

  const int64_t n = static_cast<int64_t>(train_corpus.records.size());
  const int64_t batch = std::min<int64_t>(tc.batch, n);
  if (!classification && batch < 2)
    throw std::runtime_error("ranking training needs batch size >= 2");
  const int64_t steps_per_epoch = n / batch;
  if (steps_per_epoch == 0)
    throw std::runtime_error("corpus smaller than one batch");
  const int64_t total_steps = steps_per_epoch * tc.epochs;

  TrainResult result;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    for (int64_t bi = 0; bi < steps_per_epoch; ++bi, ++step) {
      std::vector<TokenSequence> queries, cands;
      std::vector<int> labels;
      std::vector<int64_t> pos_ids;
      for (int64_t r = 0; r < batch; ++r) {
        const auto& rec =
            train_corpus.records[static_cast<size_t>(order[bi * batch + r])];
        queries.push_back(query_sequence(vocab, rec.text));
        if (classification) {
          cands.push_back(candidate_sequence(vocab, rec.candidates.at(0).text));
          labels.push_back(rec.label);
        } else {
          if (rec.positive_ids.size() != 1)
            throw std::runtime_error(
                "ranking training expects exactly one positive per record");
          const int64_t pid = rec.positive_ids[0];
          for (int64_t seen : pos_ids)
            if (seen == pid)
              throw std::runtime_error(
                  "duplicate positive candidate id in batch");
          pos_ids.push_back(pid);
          for (const auto& c : rec.candidates)
            if (c.id == pid) cands.push_back(candidate_sequence(vocab, c.text));
        }
      }

      Tensor<T> loss;
      if (classification) {
        loss = softmax_ce_loss(model.classification_logits(queries, cands, vocab),
                               labels);
      } else {
        loss = in_batch_ce_loss(model.in_batch_scores(queries, cands, vocab));
      }
      const double loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val))
        throw std::runtime_error(
            "training aborted: non-finite loss at step " + std::to_string(step) +
            " (epoch " + std::to_string(epoch) + ", lr " +
            std::to_string(lr_at(tc.lr, tc.warmup_frac, step, total_steps)) + ")");
      result.losses.push_back(loss_val);

      opt.zero_grad();
      loss.backward();
      opt.step(lr_at(tc.lr, tc.warmup_frac, step, total_steps));
      log.record({{"step", step}, {"loss", loss_val}});
    }

    result.epochs_run = epoch + 1;
    if (eval_corpus) {
      if (classification) {
        result.final_accuracy = evaluate_classification(model, *eval_corpus, vocab);
        log.record({{"epoch", epoch},
                    {"metric", "accuracy"},
                    {"value", result.final_accuracy}});
      } else {
        result.final_metrics = evaluate_ranking(model, *eval_corpus, vocab);
        log.record({{"epoch", epoch},
                    {"metric", "mrr"},
                    {"value", result.final_metrics.mrr}});
        log.record({{"epoch", epoch},
                    {"metric", "r_at_1"},
                    {"value", result.final_metrics.r_at_1}});
        if (tc.stop_mrr > 0 && result.final_metrics.mrr >= tc.stop_mrr) break;
      }
      log.flush();
    }
  }
  log.flush();
  return result;
}

}  // namespace mixenc
