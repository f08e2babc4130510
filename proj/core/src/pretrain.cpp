#include "ctn/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ctn/autograd.hpp"
#include "ctn/ops.hpp"
#include "ctn/optim.hpp"

namespace ctn {

Mixing Mixing::parse(std::string_view text) {
  Mixing m;
  if (text == "agnostic") return m;
  m.mode = MixingMode::sequential;
  if (text == "sequential") return m;
  constexpr std::string_view prefix = "sequential:";
  require(text.substr(0, prefix.size()) == prefix, ErrorCode::InvalidArgument,
          "unknown mixing mode '" + std::string(text) + "' (expected agnostic, sequential or sequential:a-b-c)");
  auto rest = text.substr(prefix.size());
  while (!rest.empty()) {
    const auto dash = rest.find('-');
    const auto name = rest.substr(0, dash);
    require(!name.empty(), ErrorCode::InvalidArgument, "empty domain name in mixing order '" + std::string(text) + "'");
    m.order.emplace_back(name);
    rest = dash == std::string_view::npos ? std::string_view{} : rest.substr(dash + 1);
  }
  return m;
}

std::string Mixing::to_string() const {
  if (mode == MixingMode::agnostic) return "agnostic";
  std::string out = "sequential";
  for (std::size_t i = 0; i < order.size(); ++i) out += (i ? "-" : ":") + order[i];
  return out;
}

std::vector<PretrainBatch> pretrain_schedule(const std::vector<DomainTokens>& corpora, const Mixing& mixing,
                                             std::int64_t batch_size, SeededRng& rng) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be positive");
  std::vector<PretrainBatch> out;
  auto chunk = [&](std::vector<std::pair<std::size_t, std::size_t>>& items, const std::string& domain) {
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(batch_size)) {
      PretrainBatch b;
      b.domain = domain;
      const auto stop = std::min(items.size(), start + static_cast<std::size_t>(batch_size));
      b.items.assign(items.begin() + static_cast<std::ptrdiff_t>(start), items.begin() + static_cast<std::ptrdiff_t>(stop));
      if (b.domain.empty()) {
        std::set<std::size_t> owners;
        for (const auto& it : b.items) owners.insert(it.first);
        if (owners.size() == 1) b.domain = corpora[*owners.begin()].domain;
      }
      out.push_back(std::move(b));
    }
  };

  if (mixing.mode == MixingMode::agnostic) {
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t c = 0; c < corpora.size(); ++c)
      for (std::size_t i = 0; i < corpora[c].train.size(); ++i) items.emplace_back(c, i);
    rng.shuffle(std::span(items));
    chunk(items, "");
    return out;
  }

  std::vector<std::size_t> order;
  if (mixing.order.empty()) {
    for (std::size_t c = 0; c < corpora.size(); ++c) order.push_back(c);
  } else {
    require(mixing.order.size() == corpora.size(), ErrorCode::InvalidArgument,
            "sequential order '" + mixing.to_string() + "' must name every domain exactly once");
    for (const auto& name : mixing.order) {
      const auto it = std::find_if(corpora.begin(), corpora.end(), [&](const DomainTokens& d) { return d.domain == name; });
      require(it != corpora.end(), ErrorCode::UnknownDomain, "mixing order names unknown domain '" + name + "'");
      const auto c = static_cast<std::size_t>(it - corpora.begin());
      require(std::find(order.begin(), order.end(), c) == order.end(), ErrorCode::DuplicateDomain,
              "mixing order repeats domain '" + name + "'");
      order.push_back(c);
    }
  }
  for (auto c : order) {
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t i = 0; i < corpora[c].train.size(); ++i) items.emplace_back(c, i);
    rng.shuffle(std::span(items));
    chunk(items, corpora[c].domain);
  }
  return out;
}

Tensor mtp_logits(const EncoderCheckpoint& model, const EncodedBatch& encoded, std::span<const std::int64_t> flat_rows) {
  const Tensor rows = gather_rows(encoded.hidden, flat_rows);
  return linear(rows, model.params.get("mtp_head.weight"), model.params.get("mtp_head.bias"));
}

Tensor mtp_loss(const Tensor& logits, std::span<const std::int64_t> targets) {
  require(!targets.empty(), ErrorCode::EmptyMask, "masked token prediction needs at least one masked position");
  return softmax_cross_entropy(logits, targets);
}

namespace {

struct MaskedBatch {
  std::vector<std::vector<std::int64_t>> inputs;
  std::vector<std::int64_t> rows;
  std::vector<std::int64_t> targets;
};

/// Corrupts each sequence with its plan and lists (row, target) pairs in the
/// padded layout the encoder will produce.
MaskedBatch mask_batch(const std::vector<const std::vector<std::int64_t>*>& seqs, const std::vector<MaskPlan>& plans,
                       std::int64_t mask_id) {
  MaskedBatch out;
  std::int64_t longest = 0;
  for (const auto* s : seqs) longest = std::max<std::int64_t>(longest, static_cast<std::int64_t>(s->size()));
  const auto seq = longest + 1;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.inputs.push_back(corrupt(*seqs[i], plans[i], mask_id));
    for (auto p : plans[i].positions) {
      out.rows.push_back(static_cast<std::int64_t>(i) * seq + p + 1);
      out.targets.push_back((*seqs[i])[static_cast<std::size_t>(p)]);
    }
  }
  return out;
}

std::int64_t argmax_row(std::span<const double> row) {
  std::int64_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(j);
  return best;
}

}  // namespace

MtpEvaluation evaluate_mtp(const EncoderCheckpoint& model, const std::vector<std::vector<std::int64_t>>& sequences,
                           double mask_ratio, std::uint64_t seed, std::int64_t batch_size) {
  require(!sequences.empty(), ErrorCode::EmptyInput, "no sequences to evaluate");
  const SeededRng root = SeededRng(seed).fork("mtp.eval");
  MtpEvaluation out;
  double loss_sum = 0;
  std::int64_t correct = 0;
  const auto v = model.space.vocab_size;
  for (std::size_t start = 0; start < sequences.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(sequences.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const std::vector<std::int64_t>*> seqs;
    std::vector<MaskPlan> plans;
    for (std::size_t i = start; i < stop; ++i) {
      SeededRng r = root.fork(static_cast<std::uint64_t>(i));
      seqs.push_back(&sequences[i]);
      plans.push_back(mask_plan(static_cast<std::int64_t>(sequences[i].size()), mask_ratio, r));
    }
    const auto batch = mask_batch(seqs, plans, model.space.mask_id());
    if (batch.rows.empty()) continue;
    const auto encoded = encoder_forward(model, batch.inputs);
    const Tensor logits = mtp_logits(model, encoded, batch.rows);
    loss_sum += mtp_loss(logits, batch.targets).item() * static_cast<double>(batch.rows.size());
    const auto values = logits.to_doubles();
    for (std::size_t r = 0; r < batch.rows.size(); ++r)
      if (argmax_row(std::span<const double>(values).subspan(r * static_cast<std::size_t>(v), static_cast<std::size_t>(v))) ==
          batch.targets[r])
        ++correct;
    out.masked += static_cast<std::int64_t>(batch.rows.size());
  }
  require(out.masked > 0, ErrorCode::EmptyMask, "evaluation masked no positions");
  out.loss = loss_sum / static_cast<double>(out.masked);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.masked);
  return out;
}

namespace {

std::vector<std::vector<std::int64_t>> globalize(const GlobalTokenSpace& space, const std::string& domain,
                                                 const std::vector<TokenSequence>& seqs) {
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(space.to_global(domain, s.ids));
  return out;
}

std::int64_t longest_sequence(const std::vector<DomainTokens>& corpora) {
  std::int64_t longest = 1;
  for (const auto& c : corpora) {
    for (const auto& s : c.train) longest = std::max(longest, s.length());
    for (const auto& s : c.eval) longest = std::max(longest, s.length());
  }
  return longest;
}

}  // namespace

EncoderCheckpoint initialize_encoder(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                                     EncoderConfig config, const PretrainConfig& pretrain) {
  config.max_length = std::max(config.max_length, longest_sequence(corpora) + 1);
  const auto external = pretrain.external_vocab > 0 ? pretrain.external_vocab : space.total_size();
  const auto words = word_map(space, external, pretrain.seed);
  return EncoderCheckpoint::initialize(config, space, words, pretrain.seed);
}

PretrainResult run_pretraining(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                               const EncoderConfig& config, const PretrainConfig& pretrain,
                               const std::function<void(const PretrainEpoch&)>& on_epoch, const EncoderCheckpoint* init) {
  require(!corpora.empty(), ErrorCode::EmptyInput, "pre-training needs at least one domain");
  require(pretrain.mask_ratio >= 0 && pretrain.mask_ratio <= 1, ErrorCode::InvalidArgument, "mask ratio must lie in [0, 1]");
  require(pretrain.epochs >= 0 && pretrain.batch_size >= 1, ErrorCode::InvalidArgument, "epochs and batch size must be valid");

  std::vector<std::vector<std::vector<std::int64_t>>> train;
  std::vector<std::vector<std::int64_t>> eval;
  for (const auto& c : corpora) {
    require(space.contains(c.domain), ErrorCode::UnknownDomain, "token space has no domain '" + c.domain + "'");
    require(!c.train.empty(), ErrorCode::EmptyInput, "domain '" + c.domain + "' has no training sequences");
    train.push_back(globalize(space, c.domain, c.train));
    const auto e = globalize(space, c.domain, c.eval.empty() ? c.train : c.eval);
    eval.insert(eval.end(), e.begin(), e.end());
  }

  PretrainResult result{init ? init->clone() : initialize_encoder(space, corpora, config, pretrain), {}};
  EncoderCheckpoint& model = result.checkpoint;
  require(model.space == space, ErrorCode::InvalidArgument, "initial checkpoint uses a different token space");
  model.info.set_double("pretrain.mask_ratio", pretrain.mask_ratio);
  model.info.set_double("pretrain.lr", pretrain.lr);
  model.info.set_int("pretrain.batch_size", pretrain.batch_size);
  model.info.set_int("pretrain.epochs", pretrain.epochs);
  model.info.set("pretrain.mixing", pretrain.mixing.to_string());
  model.info.set("pretrain.seed", std::to_string(pretrain.seed));

  Adam adam(model.params.tensors(), AdamOptions{.lr = pretrain.lr});
  const SeededRng root(pretrain.seed);
  SeededRng schedule_rng = root.fork("pretrain.schedule");
  SeededRng mask_rng = root.fork("pretrain.mask");
  SeededRng dropout_rng = root.fork("pretrain.dropout");

  auto report = [&](std::int64_t epoch, double train_loss) {
    const auto ev = evaluate_mtp(model, eval, pretrain.mask_ratio, pretrain.seed);
    PretrainEpoch rec{epoch, train_loss, ev.loss, ev.accuracy};
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  };
  report(0, std::numeric_limits<double>::quiet_NaN());

  for (std::int64_t epoch = 1; epoch <= pretrain.epochs; ++epoch) {
    double loss_sum = 0;
    std::int64_t masked = 0;
    for (const auto& batch : pretrain_schedule(corpora, pretrain.mixing, pretrain.batch_size, schedule_rng)) {
      std::vector<const std::vector<std::int64_t>*> seqs;
      std::vector<MaskPlan> plans;
      for (const auto& [c, i] : batch.items) {
        seqs.push_back(&train[c][i]);
        plans.push_back(mask_plan(static_cast<std::int64_t>(train[c][i].size()), pretrain.mask_ratio, mask_rng));
      }
      const auto masked_batch = mask_batch(seqs, plans, space.mask_id());

      Record record;
      RecordScope scope(record);
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &dropout_rng;
      const auto encoded = encoder_forward(model, masked_batch.inputs, opts);
      const Tensor loss = mtp_loss(mtp_logits(model, encoded, masked_batch.rows), masked_batch.targets);
      record.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_sum += loss.item() * static_cast<double>(masked_batch.rows.size());
      masked += static_cast<std::int64_t>(masked_batch.rows.size());
    }
    report(epoch, loss_sum / static_cast<double>(std::max<std::int64_t>(1, masked)));
  }
  return result;
}

}  // namespace ctn
