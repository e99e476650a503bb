#include "nopvis/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nopvis {
namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Tensor make_tensor(std::string name, std::vector<std::size_t> shape) {
  std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                  std::multiplies<>());
  return Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
}

std::vector<Tensor> shaped_params(const DetectorConfig& c) {
  std::vector<Tensor> p;
  p.push_back(make_tensor("embedding", {c.vocabulary_size, c.embedding_dim}));
  std::size_t in = c.embedding_dim;
  for (std::size_t i = 0; i < c.conv.size(); ++i) {
    auto prefix = "conv" + std::to_string(i);
    p.push_back(make_tensor(prefix + ".weight", {c.conv[i].filters, c.conv[i].width, in}));
    p.push_back(make_tensor(prefix + ".bias", {c.conv[i].filters}));
    in = c.conv[i].filters;
  }
  p.push_back(make_tensor("dense1.weight", {c.hidden_dim, in}));
  p.push_back(make_tensor("dense1.bias", {c.hidden_dim}));
  p.push_back(make_tensor("dense2.weight", {2, c.hidden_dim}));
  p.push_back(make_tensor("dense2.bias", {2}));
  return p;
}

// Parameter layout helpers: params are stored in a fixed order.
struct View {
  const Tensor* embedding;
  std::vector<const Tensor*> conv_w;
  std::vector<const Tensor*> conv_b;
  const Tensor* d1w;
  const Tensor* d1b;
  const Tensor* d2w;
  const Tensor* d2b;
};

View view(const DetectorModel& m) {
  View v;
  std::size_t k = 0;
  v.embedding = &m.params[k++];
  for (std::size_t i = 0; i < m.config.conv.size(); ++i) {
    v.conv_w.push_back(&m.params[k++]);
    v.conv_b.push_back(&m.params[k++]);
  }
  v.d1w = &m.params[k++];
  v.d1b = &m.params[k++];
  v.d2w = &m.params[k++];
  v.d2b = &m.params[k++];
  return v;
}

struct Trace {
  std::vector<OpcodeId> ids;
  // acts[0] is the embedded input; acts[i+1] the ReLU output of conv i.
  std::vector<std::vector<double>> acts;
  std::vector<std::size_t> lens;
  std::vector<double> pooled;
  std::vector<std::size_t> argmax;
  std::vector<double> hidden;
  double z0 = 0;
  double z1 = 0;
  double p_malware = 0.5;
};

void conv_forward(const std::vector<double>& in, std::size_t t_in,
                  std::size_t c_in, const Tensor& w, const Tensor& b,
                  std::size_t width, std::vector<double>& out) {
  const std::size_t m = b.size();
  const std::size_t t_out = t_in - width + 1;
  out.assign(t_out * m, 0.0);
  const std::size_t span = width * c_in;
  for (std::size_t t = 0; t < t_out; ++t) {
    const double* x = &in[t * c_in];  // window is contiguous
    for (std::size_t j = 0; j < m; ++j) {
      const double* wj = &w.data[j * span];
      double s = b.data[j];
      for (std::size_t q = 0; q < span; ++q) s += wj[q] * x[q];
      out[t * m + j] = s > 0 ? s : 0.0;
    }
  }
}

double sigmoid_diff(double z1, double z0) {
  double d = z1 - z0;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  double e = std::exp(d);
  return e / (1.0 + e);
}

// Dense head on pooled features; fills hidden/z when a trace is given.
double head_forward(const View& v, const std::vector<double>& pooled,
                    std::vector<double>* hidden_out, double* z0_out,
                    double* z1_out) {
  const std::size_t h = v.d1b->size();
  const std::size_t in = pooled.size();
  std::vector<double> hidden(h);
  for (std::size_t i = 0; i < h; ++i) {
    double s = v.d1b->data[i];
    for (std::size_t j = 0; j < in; ++j) s += v.d1w->data[i * in + j] * pooled[j];
    hidden[i] = s > 0 ? s : 0.0;
  }
  double z[2];
  for (std::size_t c = 0; c < 2; ++c) {
    double s = v.d2b->data[c];
    for (std::size_t i = 0; i < h; ++i) s += v.d2w->data[c * h + i] * hidden[i];
    z[c] = s;
  }
  if (hidden_out) *hidden_out = std::move(hidden);
  if (z0_out) *z0_out = z[0];
  if (z1_out) *z1_out = z[1];
  return sigmoid_diff(z[1], z[0]);
}

Trace run_forward(const DetectorModel& model, std::span<const OpcodeId> raw) {
  const auto& c = model.config;
  const View v = view(model);
  Trace tr;
  tr.ids = prepare_input(c, raw);
  const std::size_t k = c.embedding_dim;
  std::size_t t = tr.ids.size();
  tr.acts.emplace_back(t * k);
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(&v.embedding->data[tr.ids[i] * k], k, &tr.acts[0][i * k]);
  tr.lens.push_back(t);
  std::size_t c_in = k;
  for (std::size_t l = 0; l < c.conv.size(); ++l) {
    tr.acts.emplace_back();
    conv_forward(tr.acts[l], t, c_in, *v.conv_w[l], *v.conv_b[l],
                 c.conv[l].width, tr.acts[l + 1]);
    t = t - c.conv[l].width + 1;
    c_in = c.conv[l].filters;
    tr.lens.push_back(t);
  }
  const auto& last = tr.acts.back();
  tr.pooled.assign(c_in, 0.0);
  tr.argmax.assign(c_in, 0);
  for (std::size_t j = 0; j < c_in; ++j) {
    double best = last[j];
    std::size_t at = 0;
    for (std::size_t s = 1; s < t; ++s) {
      if (last[s * c_in + j] > best) {
        best = last[s * c_in + j];
        at = s;
      }
    }
    tr.pooled[j] = best;
    tr.argmax[j] = at;
  }
  tr.p_malware = head_forward(v, tr.pooled, &tr.hidden, &tr.z0, &tr.z1);
  return tr;
}

double cross_entropy(const Trace& tr, Label label) {
  // -log softmax, computed from the logit gap for stability.
  double d = label == Label::Malware ? tr.z0 - tr.z1 : tr.z1 - tr.z0;
  return d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
}

void accumulate_gradients(const DetectorModel& model, const Trace& tr,
                          Label label, double scale, std::vector<Tensor>& g) {
  const auto& c = model.config;
  const View v = view(model);
  const std::size_t h = c.hidden_dim;
  const std::size_t layers = c.conv.size();
  const std::size_t m_last = tr.pooled.size();
  // Index of each group inside g (same order as params).
  const std::size_t gi_d1w = 1 + 2 * layers;

  double dz[2];
  double y1 = label == Label::Malware ? 1.0 : 0.0;
  dz[1] = (tr.p_malware - y1) * scale;
  dz[0] = -dz[1];

  auto& g_d2w = g[gi_d1w + 2].data;
  auto& g_d2b = g[gi_d1w + 3].data;
  std::vector<double> dh(h, 0.0);
  for (std::size_t cls = 0; cls < 2; ++cls) {
    g_d2b[cls] += dz[cls];
    for (std::size_t i = 0; i < h; ++i) {
      g_d2w[cls * h + i] += dz[cls] * tr.hidden[i];
      dh[i] += v.d2w->data[cls * h + i] * dz[cls];
    }
  }
  auto& g_d1w = g[gi_d1w].data;
  auto& g_d1b = g[gi_d1w + 1].data;
  std::vector<double> dpool(m_last, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    if (tr.hidden[i] <= 0) continue;
    g_d1b[i] += dh[i];
    for (std::size_t j = 0; j < m_last; ++j) {
      g_d1w[i * m_last + j] += dh[i] * tr.pooled[j];
      dpool[j] += v.d1w->data[i * m_last + j] * dh[i];
    }
  }

  // Gradient w.r.t. the last conv activation: nonzero only at the argmax.
  std::vector<double> dact(tr.lens.back() * m_last, 0.0);
  for (std::size_t j = 0; j < m_last; ++j)
    dact[tr.argmax[j] * m_last + j] = dpool[j];

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t m = c.conv[l].filters;
    const std::size_t width = c.conv[l].width;
    const std::size_t c_in = l == 0 ? c.embedding_dim : c.conv[l - 1].filters;
    const std::size_t t_out = tr.lens[l + 1];
    const std::size_t span = width * c_in;
    const auto& in = tr.acts[l];
    const auto& out = tr.acts[l + 1];
    auto& gw = g[1 + 2 * l].data;
    auto& gb = g[2 + 2 * l].data;
    std::vector<double> din(tr.lens[l] * c_in, 0.0);
    for (std::size_t t = 0; t < t_out; ++t) {
      for (std::size_t j = 0; j < m; ++j) {
        double d = dact[t * m + j];
        if (d == 0 || out[t * m + j] <= 0) continue;
        gb[j] += d;
        const double* x = &in[t * c_in];
        const double* wj = &v.conv_w[l]->data[j * span];
        double* gwj = &gw[j * span];
        double* dx = &din[t * c_in];
        for (std::size_t q = 0; q < span; ++q) {
          gwj[q] += d * x[q];
          dx[q] += d * wj[q];
        }
      }
    }
    dact = std::move(din);
  }

  auto& ge = g[0].data;
  const std::size_t k = c.embedding_dim;
  for (std::size_t t = 0; t < tr.ids.size(); ++t) {
    double* row = &ge[tr.ids[t] * k];
    for (std::size_t q = 0; q < k; ++q) row[q] += dact[t * k + q];
  }
}

}  // namespace

void DetectorConfig::validate() const {
  if (vocabulary_size < 2 || embedding_dim == 0 || hidden_dim == 0 ||
      max_len == 0 || conv.empty())
    throw std::invalid_argument("detector config: sizes must be positive");
  for (const auto& l : conv) {
    if (l.filters == 0 || l.width == 0)
      throw std::invalid_argument("detector config: empty convolution layer");
  }
  if (min_len() > max_len)
    throw std::invalid_argument("detector config: kernel wider than max_len");
}

std::size_t DetectorConfig::min_len() const {
  std::size_t n = 1;
  for (const auto& l : conv) n += l.width - 1;
  return n;
}

Tensor& DetectorModel::param(std::string_view name) {
  for (auto& t : params)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& DetectorModel::param(std::string_view name) const {
  for (const auto& t : params)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t DetectorModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params) n += t.size();
  return n;
}

DetectorModel init_model(const DetectorConfig& config) {
  config.validate();
  DetectorModel m{config, shaped_params(config)};
  std::mt19937_64 rng(config.seed);
  for (auto& t : m.params) {
    if (t.shape.size() == 1) continue;  // biases start at zero
    double fan_in = 1;
    double fan_out = static_cast<double>(t.shape[0]);
    for (std::size_t i = 1; i < t.shape.size(); ++i)
      fan_in *= static_cast<double>(t.shape[i]);
    if (t.shape.size() == 3) fan_out *= static_cast<double>(t.shape[1]);
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& x : t.data) x = (2 * uniform01(rng) - 1) * limit;
  }
  return m;
}

DetectorModel zero_model(const DetectorConfig& config) {
  config.validate();
  return DetectorModel{config, shaped_params(config)};
}

std::vector<OpcodeId> prepare_input(const DetectorConfig& config,
                                    std::span<const OpcodeId> ids) {
  std::vector<OpcodeId> out(ids.begin(),
                            ids.begin() + static_cast<std::ptrdiff_t>(
                                              std::min(ids.size(), config.max_len)));
  for (auto id : out) {
    if (id >= config.vocabulary_size)
      throw DetectorInputError("opcode id " + std::to_string(id) +
                               " outside vocabulary of " +
                               std::to_string(config.vocabulary_size));
  }
  if (out.size() < config.min_len()) out.resize(config.min_len(), kPaddingOpcodeId);
  return out;
}

Scores forward(const DetectorModel& model, std::span<const OpcodeId> ids) {
  auto tr = run_forward(model, ids);
  return Scores{1.0 - tr.p_malware, tr.p_malware};
}

double logit_margin(const DetectorModel& model, std::span<const OpcodeId> ids) {
  auto tr = run_forward(model, ids);
  return tr.z1 - tr.z0;
}

Gradients loss_and_gradients(const DetectorModel& model,
                             std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Gradients out;
  for (const auto& p : model.params)
    out.grads.push_back(Tensor{p.name, p.shape, std::vector<double>(p.size(), 0.0)});
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    auto tr = run_forward(model, ex.ids);
    out.loss += cross_entropy(tr, ex.label) * scale;
    accumulate_gradients(model, tr, ex.label, scale, out.grads);
  }
  return out;
}

double loss(const DetectorModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0;
  for (const auto& ex : batch) total += cross_entropy(run_forward(model, ex.ids), ex.label);
  return total / static_cast<double>(batch.size());
}

DetectorModel train(DetectorModel model, std::span<const Example> corpus,
                    const TrainOptions& options, TrainReport* report) {
  if (options.epochs == 0 || corpus.empty()) return model;
  if (options.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<double>> m1;
  std::vector<std::vector<double>> m2;
  for (const auto& p : model.params) {
    m1.emplace_back(p.size(), 0.0);
    m2.emplace_back(p.size(), 0.0);
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  std::size_t step = 0;

  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i)
        batch.push_back(corpus[order[i]]);
      auto g = loss_and_gradients(model, batch);
      ++step;
      for (std::size_t p = 0; p < model.params.size(); ++p) {
        auto& w = model.params[p].data;
        const auto& d = g.grads[p].data;
        if (options.optimizer == Optimizer::Sgd) {
          for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * d[i];
          continue;
        }
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m1[p][i] = kBeta1 * m1[p][i] + (1 - kBeta1) * d[i];
          m2[p][i] = kBeta2 * m2[p][i] + (1 - kBeta2) * d[i] * d[i];
          w[i] -= options.learning_rate * (m1[p][i] / c1) / (std::sqrt(m2[p][i] / c2) + kEps);
        }
      }
    }
    if (report && options.track_loss) report->epoch_loss.push_back(loss(model, corpus));
  }
  return model;
}

Label classify(const DetectorModel& model, std::span<const OpcodeId> ids,
               double threshold) {
  return forward(model, ids).p_malware >= threshold ? Label::Malware : Label::Benign;
}

SubstitutionScorer::SubstitutionScorer(const DetectorModel& model,
                                       std::span<const OpcodeId> ids)
    : model_(&model), ids_(prepare_input(model.config, ids)) {
  incremental_ = model.config.conv.size() == 1;
  if (!incremental_) {
    current_ = logit_margin(*model_, ids_);
    return;
  }
  const std::size_t m = model.config.conv[0].filters;
  out_len_ = ids_.size() - model.config.conv[0].width + 1;
  act_.assign(out_len_ * m, 0.0);
  for (std::size_t t = 0; t < out_len_; ++t) conv_row(t, ids_.size(), 0, &act_[t * m]);
  std::vector<double> pooled(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double best = act_[j];
    for (std::size_t t = 1; t < out_len_; ++t) best = std::max(best, act_[t * m + j]);
    pooled[j] = best;
  }
  current_ = head(pooled);
}

void SubstitutionScorer::conv_row(std::size_t t, std::size_t position,
                                  OpcodeId id, double* out) const {
  const auto& c = model_->config;
  const View v = view(*model_);
  const std::size_t k = c.embedding_dim;
  const std::size_t width = c.conv[0].width;
  const std::size_t m = c.conv[0].filters;
  const std::size_t span = width * k;
  for (std::size_t j = 0; j < m; ++j) {
    const double* wj = &v.conv_w[0]->data[j * span];
    double s = v.conv_b[0]->data[j];
    for (std::size_t u = 0; u < width; ++u) {
      std::size_t pos = t + u;
      OpcodeId tok = pos == position ? id : ids_[pos];
      const double* e = &v.embedding->data[tok * k];
      for (std::size_t q = 0; q < k; ++q) s += wj[u * k + q] * e[q];
    }
    out[j] = s > 0 ? s : 0.0;
  }
}

double SubstitutionScorer::head(const std::vector<double>& pooled) const {
  double z0 = 0;
  double z1 = 0;
  head_forward(view(*model_), pooled, nullptr, &z0, &z1);
  return z1 - z0;
}

double SubstitutionScorer::score() const { return sigmoid_diff(current_, 0.0); }

double SubstitutionScorer::score_with(std::size_t position, OpcodeId id) const {
  return sigmoid_diff(margin_with(position, id), 0.0);
}

double SubstitutionScorer::margin_with(std::size_t position, OpcodeId id) const {
  if (position >= ids_.size()) throw std::out_of_range("substitution position");
  if (id >= model_->config.vocabulary_size)
    throw DetectorInputError("opcode id outside vocabulary");
  if (!incremental_) {
    auto copy = ids_;
    copy[position] = id;
    return logit_margin(*model_, copy);
  }
  const std::size_t m = model_->config.conv[0].filters;
  const std::size_t width = model_->config.conv[0].width;
  const std::size_t lo = position + 1 >= width ? position + 1 - width : 0;
  const std::size_t hi = std::min(position, out_len_ - 1);
  std::vector<double> fresh((hi - lo + 1) * m);
  for (std::size_t t = lo; t <= hi; ++t) conv_row(t, position, id, &fresh[(t - lo) * m]);
  std::vector<double> pooled(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double best = 0;  // post-ReLU values are nonnegative
    for (std::size_t t = 0; t < out_len_; ++t) {
      double a = (t >= lo && t <= hi) ? fresh[(t - lo) * m + j] : act_[t * m + j];
      best = std::max(best, a);
    }
    pooled[j] = best;
  }
  return head(pooled);
}

void SubstitutionScorer::set(std::size_t position, OpcodeId id) {
  current_ = margin_with(position, id);
  ids_[position] = id;
  if (!incremental_) return;
  const std::size_t m = model_->config.conv[0].filters;
  const std::size_t width = model_->config.conv[0].width;
  const std::size_t lo = position + 1 >= width ? position + 1 - width : 0;
  const std::size_t hi = std::min(position, out_len_ - 1);
  for (std::size_t t = lo; t <= hi; ++t) conv_row(t, ids_.size(), 0, &act_[t * m]);
}

nlohmann::json to_json(const DetectorConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& l : c.conv) conv.push_back({{"filters", l.filters}, {"width", l.width}});
  return {{"vocabulary_size", c.vocabulary_size},
          {"embedding_dim", c.embedding_dim},
          {"conv", conv},
          {"hidden_dim", c.hidden_dim},
          {"max_len", c.max_len},
          {"seed", c.seed}};
}

DetectorConfig config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.vocabulary_size = j.at("vocabulary_size").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.conv.clear();
  for (const auto& l : j.at("conv"))
    c.conv.push_back({l.at("filters").get<std::size_t>(), l.at("width").get<std::size_t>()});
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

nlohmann::json to_json(const DetectorModel& model) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& t : model.params)
    params.push_back({{"name", t.name}, {"shape", t.shape}, {"data", t.data}});
  return {{"format", "nopvis-detector"},
          {"version", 1},
          {"config", to_json(model.config)},
          {"params", params}};
}

DetectorModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "nopvis-detector")
    throw std::invalid_argument("not a detector checkpoint");
  if (j.value("version", 0) != 1)
    throw std::invalid_argument("unsupported checkpoint version");
  auto model = zero_model(config_from_json(j.at("config")));
  const auto& params = j.at("params");
  if (params.size() != model.params.size())
    throw std::invalid_argument("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = model.params[i];
    if (params[i].at("name").get<std::string>() != t.name ||
        params[i].at("shape").get<std::vector<std::size_t>>() != t.shape)
      throw std::invalid_argument("checkpoint shape mismatch for " + t.name);
    auto expected = t.size();
    t.data = params[i].at("data").get<std::vector<double>>();
    if (t.data.size() != expected)
      throw std::invalid_argument("checkpoint data size mismatch for " + t.name);
  }
  return model;
}

}  // namespace nopvis
