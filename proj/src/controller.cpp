#include "dnas/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dnas/error.hpp"
#include "dnas/nn/checkpoint.hpp"
#include "dnas/nn/layers.hpp"
#include "dnas/nn/losses.hpp"
#include "dnas/rng.hpp"

namespace dnas {

using nn::Activation;
using nn::DenseCache;
using nn::LstmSequenceCache;

ControllerConfig ControllerConfig::large() {
  ControllerConfig cfg;
  cfg.hidden_size = 46;
  cfg.latent_dim = 46;
  return cfg;
}

void ControllerConfig::validate() const {
  const auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
  if (hidden_size < 1) fail("hidden_size must be positive");
  if (latent_dim != hidden_size) fail("latent_dim must equal hidden_size");
  if (acc_hidden < 1) fail("acc_hidden must be positive");
  if (decoder_layers < 1) fail("decoder_layers must be positive");
  if (alpha < 0 || lambda < 0 || mu < 0 || beta < 0) fail("alpha, lambda, mu and beta must be non-negative");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
}

nlohmann::json to_json(const ControllerConfig& c) {
  return {{"hidden_size", c.hidden_size}, {"latent_dim", c.latent_dim},
          {"acc_hidden", c.acc_hidden},   {"decoder_layers", c.decoder_layers},
          {"alpha", c.alpha},             {"lambda", c.lambda},
          {"mu", c.mu},                   {"beta", c.beta},
          {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}};
}

ControllerConfig controller_config_from_json(const nlohmann::json& j) {
  ControllerConfig c;
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.latent_dim = j.value("latent_dim", c.hidden_size);
  c.acc_hidden = j.value("acc_hidden", c.acc_hidden);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.alpha = j.value("alpha", c.alpha);
  c.lambda = j.value("lambda", c.lambda);
  c.mu = j.value("mu", c.mu);
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  return c;
}

LatentCode LatentCode::point(const VectorXd& z) {
  return {z, VectorXd::Constant(z.size(), -std::numeric_limits<double>::infinity()), z};
}

FlopsNormalizer FlopsNormalizer::fit(std::span<const TrainingExample> data) {
  FlopsNormalizer n;
  if (data.empty()) return n;
  double sum = 0.0;
  for (const auto& e : data) sum += e.flops;
  n.mean = sum / static_cast<double>(data.size());
  double sq = 0.0;
  for (const auto& e : data) sq += (e.flops - n.mean) * (e.flops - n.mean);
  const double sd = std::sqrt(sq / static_cast<double>(data.size()));
  n.stddev = sd > 1e-12 * std::max(1.0, std::abs(n.mean)) ? sd : 1.0;
  return n;
}

namespace {

constexpr int kStartToken = kVocabSize;  // decoder-only start symbol

std::string layer_name(int l, const char* part) {
  return "dec.lstm" + std::to_string(l) + "." + part;
}
std::string init_name(int l, const char* part) {
  return "dec.init" + std::to_string(l) + "." + part;
}

void init_uniform(MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = uniform(rng, -bound, bound);
}

nn::LstmWeights<double> lstm_weights(const nn::ParamStore<double>& p, const std::string& prefix) {
  return {p.value(prefix + "w_x"), p.value(prefix + "w_h"), p.value(prefix + "b")};
}

nn::LstmGrads<double> lstm_grads(nn::ParamStore<double>& p, const std::string& prefix) {
  return {p.grad(prefix + "w_x"), p.grad(prefix + "w_h"), p.grad(prefix + "b")};
}

// Token ids packed step-major: column t * batch + b holds sequence b, step t.
std::vector<int> pack_tokens(std::span<const TokenSequence> seqs) {
  const std::size_t b = seqs.size();
  std::vector<int> ids(kSequenceLength * b);
  for (int t = 0; t < kSequenceLength; ++t)
    for (std::size_t s = 0; s < b; ++s) ids[t * b + s] = seqs[s][t];
  return ids;
}

struct EncoderPass {
  std::vector<int> ids;
  LstmSequenceCache<double> lstm;
  DenseCache<double> mean_cache, logvar_cache;
  MatrixXd mean, logvar;
};

EncoderPass run_encoder(const nn::ParamStore<double>& p, std::span<const TokenSequence> seqs) {
  for (const auto& s : seqs)
    for (int tok : s)
      if (tok < 0 || tok >= kVocabSize) throw Error(ErrorCode::kShapeMismatch, "token outside vocabulary");
  EncoderPass pass;
  const auto batch = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index hidden = p.value("enc.lstm.w_h").cols();
  pass.ids = pack_tokens(seqs);
  const MatrixXd inputs = p.value("enc.embed")(Eigen::all, pass.ids);
  const nn::LstmState<double> zero{MatrixXd::Zero(hidden, batch), MatrixXd::Zero(hidden, batch)};
  const MatrixXd& outputs =
      nn::lstm_sequence_forward(inputs, kSequenceLength, zero, lstm_weights(p, "enc.lstm."), pass.lstm);
  // Average of the per-step outputs.
  MatrixXd pooled = MatrixXd::Zero(hidden, batch);
  for (int t = 0; t < kSequenceLength; ++t) pooled += outputs.middleCols(t * batch, batch);
  pooled /= kSequenceLength;
  pass.mean = nn::dense_forward(pooled, p.value("enc.mean.w"), p.value("enc.mean.b"), Activation::kIdentity,
                                &pass.mean_cache);
  pass.logvar = nn::dense_forward(pooled, p.value("enc.logvar.w"), p.value("enc.logvar.b"),
                                  Activation::kIdentity, &pass.logvar_cache);
  return pass;
}

int argmax_column(const MatrixXd& m, Eigen::Index col) {
  Eigen::Index best = 0;
  m.col(col).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Controller::Controller(ControllerConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  const int h = cfg_.hidden_size, l = cfg_.latent_dim, a = cfg_.acc_hidden;
  const int emb = h;
  Rng rng(derive_seed(init_seed, "controller-init"));
  const double bh = 1.0 / std::sqrt(static_cast<double>(h));
  const auto add_dense = [&](const std::string& prefix, int out, int in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(params_.add(prefix + ".w", out, in).value, bound, rng);
    init_uniform(params_.add(prefix + ".b", out, 1).value, bound, rng);
  };
  const auto add_lstm = [&](const std::string& prefix, int in) {
    init_uniform(params_.add(prefix + "w_x", 4 * h, in).value, bh, rng);
    init_uniform(params_.add(prefix + "w_h", 4 * h, h).value, bh, rng);
    auto& b = params_.add(prefix + "b", 4 * h, 1).value;
    init_uniform(b, bh, rng);
    b.middleRows(h, h).array() += 1.0;  // forget gate starts open
  };

  init_uniform(params_.add("enc.embed", emb, kVocabSize).value, 1.0, rng);
  add_lstm("enc.lstm.", emb);
  add_dense("enc.mean", l, h);
  add_dense("enc.logvar", l, h);
  add_dense("acc.l1", a, l);
  add_dense("acc.l2", 1, a);
  add_dense("flops", 1, l);
  init_uniform(params_.add("dec.embed", emb, kVocabSize + 1).value, 1.0, rng);
  for (int k = 0; k < cfg_.decoder_layers; ++k) {
    add_dense("dec.init" + std::to_string(k), h, l);
    add_lstm("dec.lstm" + std::to_string(k) + ".", k == 0 ? emb + l : h);  // layer 0 also reads z
  }
  add_dense("dec.out", kVocabSize, h);
}

LatentCode Controller::encode(const TokenSequence& tokens, std::uint64_t seed) const {
  const EncoderPass pass = run_encoder(params_, std::span(&tokens, 1));
  const auto sample = nn::reparameterize<double>(pass.mean, pass.logvar, seed);
  return {pass.mean.col(0), pass.logvar.col(0), sample.z.col(0)};
}

MatrixXd Controller::encode_means(std::span<const TokenSequence> tokens) const {
  if (tokens.empty()) return MatrixXd(cfg_.latent_dim, 0);
  return run_encoder(params_, tokens).mean;
}

VectorXd Controller::predict_acc_batch(const MatrixXd& z) const {
  const MatrixXd hidden =
      nn::dense_forward(z, params_.value("acc.l1.w"), params_.value("acc.l1.b"), Activation::kRelu);
  return nn::dense_forward(hidden, params_.value("acc.l2.w"), params_.value("acc.l2.b"),
                           Activation::kIdentity)
      .row(0)
      .transpose();
}

VectorXd Controller::predict_flops_batch(const MatrixXd& z) const {
  return nn::dense_forward(z, params_.value("flops.w"), params_.value("flops.b"), Activation::kIdentity)
      .row(0)
      .transpose();
}

double Controller::predict_acc(const LatentCode& z) const { return predict_acc_batch(z.mean)(0); }

double Controller::predict_flops(const LatentCode& z) const { return predict_flops_batch(z.mean)(0); }

VectorXd Controller::acc_gradient(const VectorXd& z) const {
  const MatrixXd& w1 = params_.value("acc.l1.w");
  const VectorXd pre = w1 * z + params_.value("acc.l1.b").col(0);
  const VectorXd upstream = params_.value("acc.l2.w").row(0).transpose();
  const VectorXd masked = (pre.array() > 0.0).select(upstream, 0.0);
  return w1.transpose() * masked;
}

VectorXd Controller::flops_gradient(const VectorXd& z) const {
  nn::require_shape(z.size() == cfg_.latent_dim, "flops_gradient: latent size");
  return params_.value("flops.w").row(0).transpose();
}

std::vector<TokenSequence> Controller::decode_batch(const MatrixXd& z) const {
  nn::require_shape(z.rows() == cfg_.latent_dim, "decode: latent size");
  const Eigen::Index n = z.cols();
  const int h = cfg_.hidden_size;
  std::vector<nn::LstmState<double>> state(cfg_.decoder_layers);
  for (int k = 0; k < cfg_.decoder_layers; ++k) {
    state[k].h = nn::dense_forward(z, params_.value(init_name(k, "w")), params_.value(init_name(k, "b")),
                                   Activation::kTanh);
    state[k].c = MatrixXd::Zero(h, n);
  }
  std::vector<nn::LstmWeights<double>> weights;
  for (int k = 0; k < cfg_.decoder_layers; ++k)
    weights.push_back(lstm_weights(params_, "dec.lstm" + std::to_string(k) + "."));
  const MatrixXd& embed = params_.value("dec.embed");
  const MatrixXd& w_out = params_.value("dec.out.w");
  const MatrixXd& b_out = params_.value("dec.out.b");

  std::vector<TokenSequence> out(static_cast<std::size_t>(n));
  std::vector<int> prev(static_cast<std::size_t>(n), kStartToken);
  for (int t = 0; t < kSequenceLength; ++t) {
    MatrixXd x(embed.rows() + z.rows(), n);
    x << embed(Eigen::all, prev), z;
    for (int k = 0; k < cfg_.decoder_layers; ++k) {
      state[k] = nn::lstm_step(x, state[k], weights[k]);
      x = state[k].h;
    }
    MatrixXd logits = w_out * x;
    logits.colwise() += b_out.col(0);
    for (Eigen::Index s = 0; s < n; ++s) {
      const int tok = argmax_column(logits, s);
      out[s][t] = tok;
      prev[s] = tok;
    }
  }
  return out;
}

TokenSequence Controller::decode(const LatentCode& z) const { return decode_batch(z.sample).front(); }

LossBreakdown Controller::total_loss(std::span<const TrainingExample> batch, std::uint64_t noise_seed,
                                     bool accumulate_grads) {
  if (batch.empty()) throw Error(ErrorCode::kShapeMismatch, "total_loss: empty batch");
  const auto b = static_cast<Eigen::Index>(batch.size());
  const int h = cfg_.hidden_size;
  const int layers = cfg_.decoder_layers;
  auto& p = params_;

  std::vector<TokenSequence> seqs;
  seqs.reserve(batch.size());
  MatrixXd acc_target(1, b), flops_target(1, b);
  for (Eigen::Index s = 0; s < b; ++s) {
    seqs.push_back(batch[s].tokens);
    acc_target(0, s) = batch[s].accuracy;
    flops_target(0, s) = flops_norm_.to_normalized(batch[s].flops);
  }

  // Encoder and posterior sample.
  EncoderPass enc = run_encoder(p, seqs);
  const auto sample = nn::reparameterize<double>(enc.mean, enc.logvar, noise_seed);
  const MatrixXd& z = sample.z;

  // Predictors.
  DenseCache<double> acc1, acc2, fl;
  const MatrixXd acc_hidden =
      nn::dense_forward(z, p.value("acc.l1.w"), p.value("acc.l1.b"), Activation::kRelu, &acc1);
  const MatrixXd acc_pred =
      nn::dense_forward(acc_hidden, p.value("acc.l2.w"), p.value("acc.l2.b"), Activation::kIdentity, &acc2);
  const MatrixXd flops_pred =
      nn::dense_forward(z, p.value("flops.w"), p.value("flops.b"), Activation::kIdentity, &fl);

  // Teacher-forced decoder.
  std::vector<int> prev(kSequenceLength * batch.size());
  const std::vector<int> targets = pack_tokens(seqs);
  for (std::size_t k = 0; k < prev.size(); ++k)
    prev[k] = k < batch.size() ? kStartToken : targets[k - batch.size()];
  std::vector<DenseCache<double>> init_cache(layers);
  std::vector<LstmSequenceCache<double>> dec_cache(layers);
  const MatrixXd& dec_embed = p.value("dec.embed");
  MatrixXd x(dec_embed.rows() + z.rows(), kSequenceLength * b);
  x << dec_embed(Eigen::all, prev), z.replicate(1, kSequenceLength);
  for (int k = 0; k < layers; ++k) {
    nn::LstmState<double> init{
        nn::dense_forward(z, p.value(init_name(k, "w")), p.value(init_name(k, "b")), Activation::kTanh,
                          &init_cache[k]),
        MatrixXd::Zero(h, b)};
    x = nn::lstm_sequence_forward(x, kSequenceLength, init, lstm_weights(p, layer_name(k, "")), dec_cache[k]);
  }
  DenseCache<double> out_cache;
  const MatrixXd logits =
      nn::dense_forward(x, p.value("dec.out.w"), p.value("dec.out.b"), Activation::kIdentity, &out_cache);
  const auto xent = nn::softmax_xent<double>(logits, targets, nn::Reduction::kSum);

  LossBreakdown loss;
  loss.acc = nn::mse(acc_pred, acc_target);
  loss.flops = nn::mse(flops_pred, flops_target);
  loss.rec = xent.loss;
  const double kl_scale = 1.0 / cfg_.latent_dim;
  loss.kl = kl_scale * nn::gaussian_kl(enc.mean, enc.logvar);
  loss.total = cfg_.alpha * loss.acc + cfg_.lambda * loss.flops + cfg_.mu * loss.rec + cfg_.beta * loss.kl;
  if (!accumulate_grads) return loss;

  // Backward: decoder.
  MatrixXd dz = MatrixXd::Zero(cfg_.latent_dim, b);
  MatrixXd d = nn::dense_backward<double>(cfg_.mu * xent.grad, p.value("dec.out.w"), out_cache,
                                          p.grad("dec.out.w"), p.grad("dec.out.b"));
  for (int k = layers - 1; k >= 0; --k) {
    auto g = nn::lstm_sequence_backward<double>(d, dec_cache[k], lstm_weights(p, layer_name(k, "")),
                                                lstm_grads(p, layer_name(k, "")));
    dz += nn::dense_backward<double>(g.h0, p.value(init_name(k, "w")), init_cache[k],
                                     p.grad(init_name(k, "w")), p.grad(init_name(k, "b")));
    d = std::move(g.inputs);
  }
  const Eigen::Index emb_rows = dec_embed.rows();
  MatrixXd& g_dec_embed = p.grad("dec.embed");
  for (std::size_t k = 0; k < prev.size(); ++k)
    g_dec_embed.col(prev[k]) += d.col(static_cast<Eigen::Index>(k)).head(emb_rows);
  for (int t = 0; t < kSequenceLength; ++t) dz += d.bottomRows(cfg_.latent_dim).middleCols(t * b, b);

  // Predictors.
  const MatrixXd d_acc_hidden =
      nn::dense_backward<double>(cfg_.alpha * nn::mse_grad(acc_pred, acc_target), p.value("acc.l2.w"), acc2,
                                 p.grad("acc.l2.w"), p.grad("acc.l2.b"));
  dz += nn::dense_backward<double>(d_acc_hidden, p.value("acc.l1.w"), acc1, p.grad("acc.l1.w"),
                                   p.grad("acc.l1.b"));
  dz += nn::dense_backward<double>(cfg_.lambda * nn::mse_grad(flops_pred, flops_target), p.value("flops.w"),
                                   fl, p.grad("flops.w"), p.grad("flops.b"));

  // Posterior.
  MatrixXd d_mean = MatrixXd::Zero(enc.mean.rows(), b);
  MatrixXd d_logvar = MatrixXd::Zero(enc.logvar.rows(), b);
  nn::reparameterize_backward<double>(dz, enc.logvar, sample, d_mean, d_logvar);
  nn::gaussian_kl_backward<double>(enc.mean, enc.logvar, cfg_.beta * kl_scale, d_mean, d_logvar);

  // Encoder.
  MatrixXd d_last = nn::dense_backward<double>(d_mean, p.value("enc.mean.w"), enc.mean_cache,
                                               p.grad("enc.mean.w"), p.grad("enc.mean.b"));
  d_last += nn::dense_backward<double>(d_logvar, p.value("enc.logvar.w"), enc.logvar_cache,
                                       p.grad("enc.logvar.w"), p.grad("enc.logvar.b"));
  const MatrixXd d_outputs = (d_last / kSequenceLength).replicate(1, kSequenceLength);
  const auto g_enc = nn::lstm_sequence_backward<double>(d_outputs, enc.lstm, lstm_weights(p, "enc.lstm."),
                                                        lstm_grads(p, "enc.lstm."));
  MatrixXd& g_enc_embed = p.grad("enc.embed");
  for (std::size_t k = 0; k < enc.ids.size(); ++k)
    g_enc_embed.col(enc.ids[k]) += g_enc.inputs.col(static_cast<Eigen::Index>(k));
  return loss;
}

TrainHistory fit(Controller& controller, std::span<const TrainingExample> data, int epochs,
                 std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::kInsufficientRecords, "fit: empty dataset");
  controller.set_flops_normalizer(FlopsNormalizer::fit(data));
  const auto& cfg = controller.config();
  const nn::AdamOptions opt{cfg.learning_rate};
  Rng rng(derive_seed(seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainingExample> batch;
  TrainHistory history;
  std::uint64_t step = 0;
  controller.params().zero_grad();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the portable index generator.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(data[order[k]]);
      const LossBreakdown l = controller.total_loss(batch, derive_seed(seed, "noise", step++), true);
      nn::adam_step(controller.params(), opt);
      sum.total += l.total;
      sum.acc += l.acc;
      sum.flops += l.flops;
      sum.rec += l.rec;
      sum.kl += l.kl;
    }
    history.epoch_loss.push_back(sum.total);
    history.last = sum;
  }
  return history;
}

TrainedController train(std::span<const TrainingExample> data, const ControllerConfig& cfg,
                        std::uint64_t seed) {
  TrainedController out{Controller(cfg, derive_seed(seed, "init")), {}};
  out.history = fit(out.controller, data, cfg.epochs, derive_seed(seed, "fit"));
  return out;
}

TrainingExample make_example(const CellGraph& cell, double accuracy, double flops) {
  return {tokenize(cell), accuracy, flops};
}

void save_controller(const Controller& c, const std::filesystem::path& stem) {
  nn::save_checkpoint(c.params(), stem);
  std::filesystem::path side = stem;
  side += ".config.json";
  std::ofstream out(side);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + side.string());
  const nlohmann::json j{{"controller", to_json(c.config())},
                         {"flops_mean", c.flops_normalizer().mean},
                         {"flops_stddev", c.flops_normalizer().stddev}};
  out << j.dump(2) << '\n';
}

Controller load_controller(const std::filesystem::path& stem) {
  std::filesystem::path side = stem;
  side += ".config.json";
  std::ifstream in(side);
  if (!in) throw Error(ErrorCode::kMissingCheckpoint, side.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, side.string() + ": " + e.what());
  }
  Controller c(controller_config_from_json(j.at("controller")), 0);
  nn::load_checkpoint(c.params(), stem);
  c.set_flops_normalizer({j.value("flops_mean", 0.0), j.value("flops_stddev", 1.0)});
  return c;
}

}  // namespace dnas
