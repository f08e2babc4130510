#include <algorithm>
#include <cmath>

#include "ctn/autograd.hpp"
#include "ctn/downstream.hpp"
#include "ctn/ops.hpp"
#include "ctn/pretrain.hpp"
#include "ctn/tokenizer.hpp"
#include "test_support.hpp"

namespace ctn::testing {

Tensor random_tensor(const Shape& shape, SeededRng& rng, double lo, double hi, DType dtype, bool requires_grad) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  Tensor t = Tensor::from_vector(shape, std::move(v));
  if (dtype != DType::f64) t = t.to(dtype);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor random_away_from_zero(const Shape& shape, SeededRng& rng, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  Tensor t = Tensor::from_vector(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor project(const Tensor& out, std::uint64_t seed) {
  SeededRng rng(seed);
  const Tensor weights = random_tensor(out.shape(), rng, -1, 1, out.dtype(), false);
  return sum(mul(out, weights));
}

double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves, double h,
                      std::int64_t max_coords, std::uint64_t coord_seed) {
  return gradient_error_against(loss, loss, leaves, h, max_coords, coord_seed);
}

double gradient_error_against(const std::function<Tensor()>& loss, const std::function<Tensor()>& numeric_loss,
                              const std::vector<Tensor>& leaves, double h, std::int64_t max_coords,
                              std::uint64_t coord_seed) {
  for (auto leaf : leaves) leaf.zero_grad();
  {
    Record record;
    RecordScope scope(record);
    const Tensor l = loss();
    record.backward(l);
  }

  SeededRng pick(coord_seed);
  double diff2 = 0, analytic2 = 0, numeric2 = 0;
  for (auto leaf : leaves) {
    auto values = leaf.values<double>();
    const auto grad = leaf.has_grad() ? leaf.grad().to_doubles() : std::vector<double>(values.size(), 0.0);
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > static_cast<std::size_t>(max_coords)) {
      pick.shuffle(std::span<std::size_t>(coords));
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = numeric_loss().item();
      values[i] = saved - h;
      const double down = numeric_loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff2 += (grad[i] - numeric) * (grad[i] - numeric);
      analytic2 += grad[i] * grad[i];
      numeric2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(analytic2), std::sqrt(numeric2), 1e-12});
}

namespace {

std::int64_t draw(SeededRng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

}  // namespace

std::vector<GradCase> primitive_grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::function<double(SeededRng&)> run) { cases.push_back({std::move(name), std::move(run)}); };

  add_case("add", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradient_error([&] { return project(add(a, b), 1); }, {a, b});
  });
  add_case("sub", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradient_error([&] { return project(sub(a, b), 2); }, {a, b});
  });
  add_case("mul", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradient_error([&] { return project(mul(a, b), 3); }, {a, b});
  });
  add_case("scale", [](SeededRng& rng) {
    auto a = random_tensor({draw(rng, 1, 6)}, rng);
    const double f = rng.uniform(-3, 3);
    return gradient_error([&] { return project(scale(a, f), 4); }, {a});
  });
  add_case("add_bias", [](SeededRng& rng) {
    const auto n = draw(rng, 1, 5);
    auto x = random_tensor({draw(rng, 1, 3), draw(rng, 1, 3), n}, rng);
    auto b = random_tensor({n}, rng);
    return gradient_error([&] { return project(add_bias(x, b), 5); }, {x, b});
  });
  add_case("add_broadcast_batch", [](SeededRng& rng) {
    Shape inner{draw(rng, 1, 3), draw(rng, 1, 4)};
    auto x = random_tensor({draw(rng, 1, 3), inner[0], inner[1]}, rng);
    auto y = random_tensor(inner, rng);
    return gradient_error([&] { return project(add_broadcast_batch(x, y), 6); }, {x, y});
  });
  add_case("matmul", [](SeededRng& rng) {
    const auto m = draw(rng, 1, 4), k = draw(rng, 1, 4), n = draw(rng, 1, 4);
    const bool ta = rng.uniform() < 0.5, tb = rng.uniform() < 0.5;
    auto a = random_tensor(ta ? Shape{k, m} : Shape{m, k}, rng);
    auto b = random_tensor(tb ? Shape{n, k} : Shape{k, n}, rng);
    return gradient_error([&] { return project(matmul(a, b, ta, tb), 7); }, {a, b});
  });
  add_case("linear", [](SeededRng& rng) {
    const auto in = draw(rng, 1, 5), out = draw(rng, 1, 4);
    auto x = random_tensor({draw(rng, 1, 3), draw(rng, 1, 3), in}, rng);
    auto w = random_tensor({out, in}, rng);
    auto b = random_tensor({out}, rng);
    const bool with_bias = rng.uniform() < 0.5;
    if (with_bias) return gradient_error([&] { return project(linear(x, w, b), 8); }, {x, w, b});
    return gradient_error([&] { return project(linear(x, w), 8); }, {x, w});
  });
  add_case("conv1d", [](SeededRng& rng) {
    const auto cin = draw(rng, 1, 3), cout = draw(rng, 1, 3), k = draw(rng, 1, 3), dil = draw(rng, 1, 3);
    const auto span = (k - 1) * dil + 1;
    const auto t = span + draw(rng, 0, 4);
    const auto padding = rng.uniform() < 0.5 ? Padding::same : Padding::valid;
    const bool batched = rng.uniform() < 0.5;
    auto x = random_tensor(batched ? Shape{draw(rng, 1, 2), cin, t} : Shape{cin, t}, rng);
    auto w = random_tensor({cout, cin, k}, rng);
    auto b = random_tensor({cout}, rng);
    return gradient_error([&] { return project(conv1d(x, w, b, dil, padding), 9); }, {x, w, b});
  });
  add_case("relu", [](SeededRng& rng) {
    auto x = random_away_from_zero({draw(rng, 1, 8)}, rng, 0.01, 2.0);
    return gradient_error([&] { return project(relu(x), 10); }, {x});
  });
  add_case("gelu", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 8)}, rng, -3, 3);
    return gradient_error([&] { return project(gelu(x), 11); }, {x});
  });
  add_case("sigmoid", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 8)}, rng, -4, 4);
    return gradient_error([&] { return project(sigmoid(x), 12); }, {x});
  });
  add_case("layer_norm", [](SeededRng& rng) {
    const auto d = draw(rng, 2, 6);
    auto x = random_tensor({draw(rng, 1, 3), d}, rng, -2, 2);
    auto g = random_tensor({d}, rng, 0.5, 1.5);
    auto b = random_tensor({d}, rng);
    return gradient_error([&] { return project(layer_norm(x, g, b), 13); }, {x, g, b});
  });
  add_case("softmax", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 3), draw(rng, 2, 6)}, rng, -3, 3);
    return gradient_error([&] { return project(softmax(x), 14); }, {x});
  });
  add_case("softmax_cross_entropy", [](SeededRng& rng) {
    const auto n = draw(rng, 1, 4), v = draw(rng, 2, 7);
    auto x = random_tensor({n, v}, rng, -3, 3);
    std::vector<std::int64_t> targets;
    for (std::int64_t i = 0; i < n; ++i) targets.push_back(draw(rng, 0, v - 1));
    return gradient_error([&] { return softmax_cross_entropy(x, targets); }, {x});
  });
  add_case("sigmoid_bce", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    auto x = random_tensor(s, rng, -4, 4);
    std::vector<double> bits(static_cast<std::size_t>(shape_numel(s)));
    for (auto& b : bits) b = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const Tensor y = Tensor::from_vector(s, bits);
    return gradient_error([&] { return sigmoid_bce(x, y); }, {x});
  });
  add_case("gather_rows", [](SeededRng& rng) {
    const auto rows = draw(rng, 1, 5);
    auto table = random_tensor({rows, draw(rng, 1, 4)}, rng);
    std::vector<std::int64_t> pick;
    for (std::int64_t i = 0, n = draw(rng, 1, 7); i < n; ++i) pick.push_back(draw(rng, 0, rows - 1));
    return gradient_error([&] { return project(gather_rows(table, pick), 15); }, {table});
  });
  add_case("reshape", [](SeededRng& rng) {
    const auto a = draw(rng, 1, 4), b = draw(rng, 1, 4);
    auto x = random_tensor({a, b}, rng);
    return gradient_error([&] { return project(reshape(x, {b, a}), 16); }, {x});
  });
  add_case("mean_last", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 3), draw(rng, 1, 5)}, rng);
    return gradient_error([&] { return project(mean_last(x), 17); }, {x});
  });
  add_case("repeat_last", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 3), draw(rng, 1, 3)}, rng);
    const auto times = draw(rng, 1, 4);
    return gradient_error([&] { return project(repeat_last(x, times), 18); }, {x});
  });
  add_case("sum", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
    return gradient_error([&] { return scale(sum(mul(x, x)), 0.5); }, {x});
  });
  add_case("mean", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
    return gradient_error([&] { return mean(mul(x, x)); }, {x});
  });
  add_case("mse", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 4)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradient_error([&] { return mse(a, b); }, {a, b});
  });
  add_case("mean_row_sq_dist", [](SeededRng& rng) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 4)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradient_error([&] { return mean_row_sq_dist(a, b); }, {a, b});
  });
  add_case("dropout", [](SeededRng& rng) {
    auto x = random_tensor({draw(rng, 2, 4), draw(rng, 2, 6)}, rng);
    const double p = rng.uniform(0.1, 0.6);
    const std::uint64_t seed = rng.next_u64();
    return gradient_error(
        [&] {
          SeededRng mask_rng(seed);
          return project(dropout(x, p, mask_rng), 19);
        },
        {x});
  });
  add_case("multi_head_attention", [](SeededRng& rng) {
    const auto b = draw(rng, 1, 2), l = draw(rng, 2, 4), heads = draw(rng, 1, 2), dk = draw(rng, 1, 3);
    auto q = random_tensor({b, l, heads * dk}, rng);
    auto k = random_tensor({b, l, heads * dk}, rng);
    auto v = random_tensor({b, l, heads * dk}, rng);
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(b * l), 1);
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t j = 1; j < l; ++j)
        if (rng.uniform() < 0.3) valid[static_cast<std::size_t>(i * l + j)] = 0;
    return gradient_error([&] { return project(multi_head_attention(q, k, v, heads, valid), 20); }, {q, k, v});
  });
  return cases;
}

namespace {

/// VQ objective in 64-bit on random patches, code assignments held fixed.
/// Analytic gradients of the full loss are compared per parameter group with
/// the objective that group actually sees under the straight-through rule:
/// the decoder sees the full loss, the codebook only ||sg(z) - e||^2, and the
/// encoder the surrogate in which the decoder input is e + (z - sg z).
double vq_case(SeededRng& rng) {
  const auto p = draw(rng, 2, 4);
  DomainMeta meta{"vq", draw(rng, 1, 2), 4 * p, p, Task::multiclass, 2};
  TokenizerConfig cfg;
  cfg.codebook_size = draw(rng, 2, 6);
  cfg.latent_dim = draw(rng, 2, 4);
  cfg.hidden_channels = draw(rng, 2, 4);
  cfg.layers = draw(rng, 0, 2);
  cfg.seed = rng.next_u64();
  cfg.beta = rng.uniform(0.0, 1.0);
  Tokenizer tok = Tokenizer::initialize(meta, cfg, DType::f64);
  // Zero-initialized biases can leave a pre-activation exactly on a ReLU kink
  // (a fully dead column feeding a zero bias); probe generic points instead.
  for (auto t : tok.params().tensors())
    if (t.rank() == 1 || (t.rank() == 2 && t.dim(1) == meta.patch_size))
      for (auto& v : t.values<double>()) v = rng.uniform(-0.5, 0.5);
  const auto n = draw(rng, 1, 3);
  const Tensor x = random_tensor({n, meta.channels, meta.patch_size}, rng, -1, 1, DType::f64, false);

  const Tensor z0 = detach(tok.encode(x));
  const auto ids = tok.quantize_rows(z0);

  std::vector<Tensor> encoder, decoder;
  for (const auto& [name, t] : tok.params().items()) {
    if (name.rfind("encoder.", 0) == 0) encoder.push_back(t);
    if (name.rfind("decoder.", 0) == 0) decoder.push_back(t);
  }

  auto full_loss = [&] {
    const Tensor z = tok.encode(x);
    const Tensor e = gather_rows(tok.codebook(), ids);
    const Tensor x_hat = tok.decode(straight_through(z, e));
    return vq_loss(x, x_hat, z, e, cfg.beta).total;
  };
  auto encoder_view = [&] {
    const Tensor z = tok.encode(x);
    const Tensor e = detach(gather_rows(tok.codebook(), ids));
    const Tensor x_hat = tok.decode(add(e, sub(z, z0)));
    return add(mse(x_hat, x), scale(mean_row_sq_dist(z, e), cfg.beta));
  };
  auto codebook_view = [&] { return mean_row_sq_dist(z0, gather_rows(tok.codebook(), ids)); };

  return std::max({gradient_error_against(full_loss, encoder_view, encoder),
                   gradient_error(full_loss, decoder),
                   gradient_error_against(full_loss, codebook_view, {tok.codebook()})});
}

EncoderCheckpoint tiny_model(SeededRng& rng, DType dtype) {
  const auto space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", draw(rng, 2, 5)}, {"b", draw(rng, 2, 5)}});
  const auto words = word_map(space, space.total_size() + draw(rng, 0, 3), rng.next_u64());
  EncoderConfig cfg;
  cfg.layers = draw(rng, 1, 2);
  cfg.heads = draw(rng, 1, 2);
  cfg.d_model = cfg.heads * draw(rng, 2, 3);
  cfg.ffn_width = draw(rng, 3, 6);
  cfg.dropout = 0;
  cfg.max_length = 8;
  return EncoderCheckpoint::initialize(cfg, space, words, rng.next_u64(), dtype);
}

std::vector<std::vector<std::int64_t>> random_sequences(SeededRng& rng, const EncoderCheckpoint& model, std::int64_t count) {
  std::vector<std::vector<std::int64_t>> seqs;
  for (std::int64_t i = 0; i < count; ++i) {
    std::vector<std::int64_t> s(static_cast<std::size_t>(draw(rng, 2, 6)));
    for (auto& id : s) id = draw(rng, 0, model.space.vocab_size - 1);
    seqs.push_back(std::move(s));
  }
  return seqs;
}

double mtp_case(SeededRng& rng) {
  auto model = tiny_model(rng, DType::f64);
  auto seqs = random_sequences(rng, model, draw(rng, 1, 3));
  std::int64_t seq_len = 0;
  for (const auto& s : seqs) seq_len = std::max<std::int64_t>(seq_len, static_cast<std::int64_t>(s.size()) + 1);
  std::vector<std::int64_t> rows, targets;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto pos = draw(rng, 0, static_cast<std::int64_t>(seqs[b].size()) - 1);
    targets.push_back(seqs[b][static_cast<std::size_t>(pos)]);
    seqs[b][static_cast<std::size_t>(pos)] = model.space.mask_id();
    rows.push_back(static_cast<std::int64_t>(b) * seq_len + pos + 1);
  }
  return gradient_error([&] { return mtp_loss(mtp_logits(model, encoder_forward(model, seqs), rows), targets); },
                        model.params.tensors(), 1e-5, 24, rng.next_u64());
}

double classification_case(SeededRng& rng) {
  auto model = tiny_model(rng, DType::f64);
  const bool multilabel = rng.uniform() < 0.5;
  DomainMeta meta{"a", 1, 4, 1, multilabel ? Task::multilabel : Task::multiclass, draw(rng, 2, 4)};
  const auto head = attach_head(model, meta, rng.next_u64());
  const auto seqs = random_sequences(rng, model, draw(rng, 1, 3));
  const auto n = static_cast<std::int64_t>(seqs.size());
  std::vector<std::int64_t> classes;
  std::vector<double> bits;
  for (std::int64_t i = 0; i < n; ++i) {
    classes.push_back(draw(rng, 0, meta.num_classes - 1));
    for (std::int64_t c = 0; c < meta.num_classes; ++c) bits.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
  }
  const Tensor bit_targets = Tensor::from_vector({n, meta.num_classes}, bits);
  auto loss = [&] {
    const Tensor logits = linear(cls_rows(encoder_forward(model, seqs)), model.params.get("head.weight"),
                                 model.params.get("head.bias"));
    return multilabel ? sigmoid_bce(logits, bit_targets) : softmax_cross_entropy(logits, classes);
  };
  (void)head;
  return gradient_error(loss, model.params.tensors(), 1e-5, 24, rng.next_u64());
}

}  // namespace

std::vector<GradCase> composed_grad_cases() {
  return {{"vq_objective", vq_case}, {"mtp_loss", mtp_case}, {"classification_loss", classification_case}};
}

}  // namespace ctn::testing
