#include "inverse_uq/inverse_model.hpp"

#include "inverse_uq/errors.hpp"
#include "inverse_uq/linalg.hpp"
#include "inverse_uq/util.hpp"

#include <cmath>

namespace inverse_uq::model {

namespace {

constexpr Eigen::Index kInferenceChunk = 64;

ad::Parameter uniform_param(std::string name, Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  return ad::Parameter(std::move(name), uniform_matrix(rows, cols, 1.0 / std::sqrt(fan_in), rng));
}

LstmParams make_lstm(const std::string& name, Eigen::Index input_dim, Eigen::Index hidden, Rng& rng) {
  LstmParams p;
  const double fan_in = static_cast<double>(input_dim + hidden);
  p.weight = uniform_param(name + ".weight", input_dim + hidden, 4 * hidden, fan_in, rng);
  p.bias = uniform_param(name + ".bias", 1, 4 * hidden, fan_in, rng);
  p.input_dim = input_dim;
  p.hidden = hidden;
  return p;
}

LinearParams make_linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  return LinearParams{uniform_param(name + ".weight", in, out, static_cast<double>(in), rng),
                      uniform_param(name + ".bias", 1, out, static_cast<double>(in), rng)};
}

VariationalLinearParams make_variational(const std::string& name, Eigen::Index in, Eigen::Index out,
                                         const ModelConfig& config, Rng& rng) {
  VariationalLinearParams p;
  p.weight_mu = uniform_param(name + ".weight_mu", in, out, static_cast<double>(in), rng);
  p.weight_rho = ad::Parameter(name + ".weight_rho", Matrix::Constant(in, out, config.rho_init));
  p.bias_mu = uniform_param(name + ".bias_mu", 1, out, static_cast<double>(in), rng);
  p.bias_rho = ad::Parameter(name + ".bias_rho", Matrix::Constant(1, out, config.rho_init));
  p.prior_std = config.prior_std;
  return p;
}

void push(std::vector<ad::Parameter*>& out, LstmParams& p) {
  out.push_back(&p.weight);
  out.push_back(&p.bias);
}
void push(std::vector<ad::Parameter*>& out, LinearParams& p) {
  out.push_back(&p.weight);
  out.push_back(&p.bias);
}
void push(std::vector<ad::Parameter*>& out, VariationalLinearParams& p) {
  out.push_back(&p.weight_mu);
  out.push_back(&p.weight_rho);
  out.push_back(&p.bias_mu);
  out.push_back(&p.bias_rho);
}

Matrix softplus_matrix(const Matrix& m) { return m.unaryExpr([](double v) { return ad::softplus(v); }); }

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::bayesian ? "bayesian" : "deterministic"; }

Mode mode_from_string(std::string_view text) {
  if (text == "bayesian") return Mode::bayesian;
  if (text == "deterministic") return Mode::deterministic;
  throw std::invalid_argument("unknown mode '" + std::string(text) + "' (expected deterministic or bayesian)");
}

Matrix LstmParams::gate_matrix(Gate gate) const {
  return weight.value.middleCols(static_cast<Eigen::Index>(gate) * hidden, hidden).transpose();
}

Vector LstmParams::gate_bias(Gate gate) const {
  return bias.value.middleCols(static_cast<Eigen::Index>(gate) * hidden, hidden).transpose();
}

LayerNoise draw_noise(const VariationalLinearParams& layer, Rng& rng) {
  LayerNoise n;
  n.weight = standard_normal(layer.weight_mu.value.rows(), layer.weight_mu.value.cols(), rng);
  n.bias = standard_normal(1, layer.bias_mu.value.cols(), rng);
  return n;
}

LayerNoise zero_noise(const VariationalLinearParams& layer) {
  return LayerNoise{Matrix::Zero(layer.weight_mu.value.rows(), layer.weight_mu.value.cols()),
                    Matrix::Zero(1, layer.bias_mu.value.cols())};
}

BimModel::BimModel(const ModelConfig& cfg, std::uint64_t init_seed) : config(cfg) {
  if (cfg.input_dim < 1 || cfg.static_dim < 1 || cfg.hidden < 1 || cfg.embed < 1 || cfg.decoder_hidden < 1 ||
      cfg.regressor_hidden < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (!(cfg.prior_std > 0.0)) throw std::invalid_argument("prior_std must be positive");
  Rng rng(init_seed);
  seed_lineage.push_back(init_seed);
  encoder_forward = make_lstm("encoder_forward", cfg.input_dim, cfg.hidden, rng);
  encoder_backward = make_lstm("encoder_backward", cfg.input_dim, cfg.hidden, rng);
  if (cfg.variational_projection && cfg.mode == Mode::bayesian) {
    projection_variational = make_variational("projection", 2 * cfg.hidden, cfg.embed, cfg, rng);
  } else {
    projection = make_linear("projection", 2 * cfg.hidden, cfg.embed, rng);
  }
  decoder_init = make_linear("decoder_init", cfg.embed, 2 * cfg.decoder_hidden, rng);
  decoder = make_lstm("decoder", cfg.input_dim, cfg.decoder_hidden, rng);
  decoder_output = make_linear("decoder_output", cfg.decoder_hidden, cfg.input_dim, rng);
  regressor_hidden = make_linear("regressor_hidden", 2 * cfg.hidden, cfg.regressor_hidden, rng);
  if (cfg.mode == Mode::bayesian) {
    regressor_variational = make_variational("regressor_out", cfg.regressor_hidden, cfg.static_dim, cfg, rng);
  } else {
    regressor_out = make_linear("regressor_out", cfg.regressor_hidden, cfg.static_dim, rng);
  }
}

std::vector<ad::Parameter*> BimModel::parameters() {
  std::vector<ad::Parameter*> out;
  push(out, encoder_forward);
  push(out, encoder_backward);
  if (projection_variational) {
    push(out, *projection_variational);
  } else {
    push(out, projection);
  }
  push(out, decoder_init);
  push(out, decoder);
  push(out, decoder_output);
  push(out, regressor_hidden);
  if (regressor_out) push(out, *regressor_out);
  if (regressor_variational) push(out, *regressor_variational);
  return out;
}

std::vector<const ad::Parameter*> BimModel::parameters() const {
  auto mutable_params = const_cast<BimModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<VariationalLinearParams*> BimModel::variational_layers() {
  std::vector<VariationalLinearParams*> out;
  if (projection_variational) out.push_back(&*projection_variational);
  if (regressor_variational) out.push_back(&*regressor_variational);
  return out;
}

std::vector<const VariationalLinearParams*> BimModel::variational_layers() const {
  auto layers = const_cast<BimModel*>(this)->variational_layers();
  return {layers.begin(), layers.end()};
}

ModelNoise draw_noise(const BimModel& model, Rng& rng) {
  ModelNoise n;
  for (const auto* layer : model.variational_layers()) n.layers.push_back(draw_noise(*layer, rng));
  return n;
}

ModelNoise zero_noise(const BimModel& model) {
  ModelNoise n;
  for (const auto* layer : model.variational_layers()) n.layers.push_back(zero_noise(*layer));
  return n;
}

Matrix stack_time_major(std::span<const Matrix> sequences) {
  if (sequences.empty()) throw std::invalid_argument("stack_time_major: no sequences");
  const Eigen::Index length = sequences.front().rows();
  const Eigen::Index width = sequences.front().cols();
  const auto batch = static_cast<Eigen::Index>(sequences.size());
  Matrix out(length * batch, width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Matrix& s = sequences[static_cast<std::size_t>(b)];
    if (s.rows() != length || s.cols() != width) {
      throw DimensionError("stack_time_major: sequences differ in shape");
    }
    for (Eigen::Index t = 0; t < length; ++t) out.row(t * batch + b) = s.row(t);
  }
  return out;
}

std::vector<Matrix> unstack_time_major(const Matrix& stacked, Eigen::Index batch) {
  const Eigen::Index length = stacked.rows() / batch;
  std::vector<Matrix> out(static_cast<std::size_t>(batch), Matrix(length, stacked.cols()));
  for (Eigen::Index t = 0; t < length; ++t)
    for (Eigen::Index b = 0; b < batch; ++b) out[static_cast<std::size_t>(b)].row(t) = stacked.row(t * batch + b);
  return out;
}

// ---- ModelGraph -------------------------------------------------------------

ModelGraph::ModelGraph(ad::Graph& graph, BimModel& model, const ModelNoise* noise)
    : graph_(graph), model_(model), trainable_(&model), noise_(noise) {}

ModelGraph::ModelGraph(ad::Graph& graph, const BimModel& model, const ModelNoise* noise)
    : graph_(graph), model_(model), noise_(noise) {}

ad::Var ModelGraph::bind(const ad::Parameter& p) {
  if (trainable_ != nullptr) return graph_.param(const_cast<ad::Parameter&>(p));
  return graph_.constant(p.value);
}

ModelGraph::BoundLstm ModelGraph::bind(const LstmParams& p) {
  const ad::Var w = bind(p.weight);
  return BoundLstm{ad::slice_rows(w, 0, p.input_dim), ad::slice_rows(w, p.input_dim, p.hidden), bind(p.bias)};
}

ModelGraph::BoundLinear ModelGraph::bind(const LinearParams& p) { return BoundLinear{bind(p.weight), bind(p.bias)}; }

ModelGraph::BoundLinear ModelGraph::bind(const VariationalLinearParams& p, const LayerNoise& noise) {
  auto sample = [&](const ad::Parameter& mu, const ad::Parameter& rho, const Matrix& eps) {
    if (eps.rows() != mu.value.rows() || eps.cols() != mu.value.cols()) {
      throw DimensionError("variational noise shape does not match " + mu.name);
    }
    return ad::add(bind(mu), ad::mul(ad::softplus(bind(rho)), graph_.constant(eps)));
  };
  return BoundLinear{sample(p.weight_mu, p.weight_rho, noise.weight), sample(p.bias_mu, p.bias_rho, noise.bias)};
}

const LayerNoise& ModelGraph::noise_for(std::size_t index) const {
  const ModelNoise* n = noise_;
  if (n == nullptr) throw ContractError("bayesian forward pass requires weight noise (or an rng)");
  if (index >= n->layers.size()) throw ContractError("weight noise missing for a variational layer");
  return n->layers[index];
}

ad::Var ModelGraph::run_direction(const BoundLstm& lstm, const ad::Var& projected, Eigen::Index length,
                                  Eigen::Index batch, bool reverse) {
  const Eigen::Index hidden = lstm.w_hidden.rows();
  ad::Var state = graph_.constant(Matrix::Zero(batch, 2 * hidden));
  for (Eigen::Index step = 0; step < length; ++step) {
    const Eigen::Index t = reverse ? length - 1 - step : step;
    state = ad::lstm_cell(projected, t * batch, state, lstm.w_hidden, model_.config.sigmoid_candidate);
  }
  return ad::slice_cols(state, 0, hidden);
}

ModelGraph::Encoded ModelGraph::encode(const Matrix& stacked, Eigen::Index batch) {
  if (batch < 1 || stacked.rows() == 0 || stacked.rows() % batch != 0) {
    throw std::invalid_argument("encode: sequence length must be at least 1");
  }
  if (stacked.cols() != model_.config.input_dim) {
    throw DimensionError("encode: input width " + std::to_string(stacked.cols()) + " != model input_dim " +
                         std::to_string(model_.config.input_dim));
  }
  const Eigen::Index length = stacked.rows() / batch;
  const ad::Var x = graph_.constant(stacked);

  const BoundLstm fwd = bind(model_.encoder_forward);
  const BoundLstm bwd = bind(model_.encoder_backward);
  const ad::Var proj_f = ad::add_bias(ad::matmul(x, fwd.w_input), fwd.bias);
  const ad::Var proj_b = ad::add_bias(ad::matmul(x, bwd.w_input), bwd.bias);
  const ad::Var parts[] = {run_direction(fwd, proj_f, length, batch, false),
                           run_direction(bwd, proj_b, length, batch, true)};
  const ad::Var h = ad::concat_cols(parts);

  BoundLinear proj;
  if (model_.projection_variational) {
    proj = bind(*model_.projection_variational, noise_for(0));
  } else {
    proj = bind(model_.projection);
  }
  const ad::Var e = ad::relu(ad::add_bias(ad::matmul(h, proj.weight), proj.bias));
  return Encoded{h, e};
}

ad::Var ModelGraph::decode(const ad::Var& e, Eigen::Index length) {
  if (length < 1) throw std::invalid_argument("decode: length must be at least 1");
  const Eigen::Index batch = e.rows();
  const Eigen::Index width = model_.config.input_dim;
  const BoundLinear init = bind(model_.decoder_init);
  const BoundLstm cell = bind(model_.decoder);
  const BoundLinear out = bind(model_.decoder_output);
  const Eigen::Index hidden = model_.config.decoder_hidden;

  ad::Var state = ad::add_bias(ad::matmul(e, init.weight), init.bias);
  ad::Var prev = graph_.constant(Matrix::Zero(batch, width));
  std::vector<ad::Var> outputs;
  outputs.reserve(static_cast<std::size_t>(length));
  for (Eigen::Index t = 0; t < length; ++t) {
    const ad::Var proj = ad::add_bias(ad::matmul(prev, cell.w_input), cell.bias);
    state = ad::lstm_cell(proj, 0, state, cell.w_hidden, model_.config.sigmoid_candidate);
    prev = ad::add_bias(ad::matmul(ad::slice_cols(state, 0, hidden), out.weight), out.bias);
    outputs.push_back(prev);
  }
  return ad::concat_rows(outputs);
}

ad::Var ModelGraph::regress(const ad::Var& h) {
  const BoundLinear hidden = bind(model_.regressor_hidden);
  const ad::Var r = ad::relu(ad::add_bias(ad::matmul(h, hidden.weight), hidden.bias));
  BoundLinear last;
  if (model_.regressor_variational) {
    last = bind(*model_.regressor_variational, noise_for(model_.projection_variational ? 1 : 0));
  } else {
    last = bind(*model_.regressor_out);
  }
  return ad::add_bias(ad::matmul(r, last.weight), last.bias);
}

ad::Var ModelGraph::kl() {
  ad::Var total = graph_.constant(Matrix::Zero(1, 1));
  for (const auto* layer : model_.variational_layers()) {
    const double prior = layer->prior_std;
    for (const auto& [mu, rho] : {std::pair{&layer->weight_mu, &layer->weight_rho},
                                  std::pair{&layer->bias_mu, &layer->bias_rho}}) {
      const ad::Var sigma = ad::softplus(bind(*rho));
      const ad::Var quad = ad::scale(ad::add(ad::sum(ad::square(sigma)), ad::sum(ad::square(bind(*mu)))),
                                     1.0 / (2.0 * prior * prior));
      const double n = static_cast<double>(mu->value.size());
      const ad::Var term = ad::add_scalar(ad::sub(quad, ad::sum(ad::log(sigma))), n * (std::log(prior) - 0.5));
      total = ad::add(total, term);
    }
  }
  return total;
}

// ---- Single-sample operations -------------------------------------------

std::pair<Vector, Vector> lstm_cell_step(const Vector& x, const Vector& h_prev, const Vector& c_prev,
                                         const LstmParams& params, bool sigmoid_candidate) {
  if (x.size() != params.input_dim || h_prev.size() != params.hidden || c_prev.size() != params.hidden) {
    throw DimensionError("lstm_cell_step: expected x of length " + std::to_string(params.input_dim) +
                         " and states of length " + std::to_string(params.hidden));
  }
  ad::Graph g;
  const ad::Var w = g.constant(params.weight.value);
  const ad::Var proj = ad::add_bias(ad::matmul(g.constant(x.transpose()), ad::slice_rows(w, 0, params.input_dim)),
                                    g.constant(params.bias.value));
  Matrix state(1, 2 * params.hidden);
  state << h_prev.transpose(), c_prev.transpose();
  const ad::Var next =
      ad::lstm_cell(proj, 0, g.constant(state), ad::slice_rows(w, params.input_dim, params.hidden), sigmoid_candidate);
  return {next.value().leftCols(params.hidden).transpose(), next.value().rightCols(params.hidden).transpose()};
}

EncoderOutput encode(const data::WindowSample& sample, const BimModel& model) {
  if (sample.inputs.rows() == 0) throw std::invalid_argument("encode: empty window");
  ad::Graph g;
  const ModelNoise zero = zero_noise(model);
  ModelGraph mg(g, model, &zero);
  const auto enc = mg.encode(sample.inputs, 1);
  return EncoderOutput{enc.h.value().row(0).transpose(), enc.e.value().row(0).transpose()};
}

Matrix decode(const Vector& e, Eigen::Index length, const BimModel& model) {
  ad::Graph g;
  ModelGraph mg(g, model, nullptr);
  return mg.decode(g.constant(e.transpose()), length).value();
}

Vector regress_statics(const Vector& h, const BimModel& model, const ModelNoise& noise) {
  ad::Graph g;
  ModelGraph mg(g, model, &noise);
  return mg.regress(g.constant(h.transpose())).value().row(0).transpose();
}

Vector regress_statics(const Vector& h, const BimModel& model, Rng* rng) {
  if (model.bayesian()) {
    if (rng == nullptr) throw ContractError("regress_statics: bayesian mode requires an rng");
    return regress_statics(h, model, draw_noise(model, *rng));
  }
  return regress_statics(h, model, ModelNoise{});
}

Matrix sample_variational_weights(const Matrix& mu, const Matrix& rho, const Matrix& eps) {
  if (mu.rows() != rho.rows() || mu.cols() != rho.cols() || mu.rows() != eps.rows() || mu.cols() != eps.cols()) {
    throw DimensionError("sample_variational_weights: mu, rho and eps must share a shape");
  }
  return mu + softplus_matrix(rho).cwiseProduct(eps);
}

double kl_gaussian(const Matrix& mu, const Matrix& rho, double prior_std) {
  const Matrix sigma = softplus_matrix(rho);
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double s = sigma(i), m = mu(i);
    total += std::log(prior_std / s) + (s * s + m * m) / (2.0 * prior_std * prior_std) - 0.5;
  }
  return total;
}

double kl_variational_prior(const VariationalLinearParams& p) {
  return kl_gaussian(p.weight_mu.value, p.weight_rho.value, p.prior_std) +
         kl_gaussian(p.bias_mu.value, p.bias_rho.value, p.prior_std);
}

PosteriorSampleSet PosteriorSampleSet::from_draws(Matrix draws) {
  PosteriorSampleSet s;
  s.mean = draws.colwise().mean().transpose();
  s.covariance = draws.rows() >= 2 ? linalg::sample_covariance(draws) : Matrix::Zero(draws.cols(), draws.cols());
  s.std = s.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  s.draws = std::move(draws);
  return s;
}

PosteriorSampleSet predict_posterior(const BimModel& model, const data::WindowSample& sample, int draws, Rng& rng) {
  if (!model.bayesian()) throw ContractError("predict_posterior: model is deterministic");
  if (draws < 2) throw std::invalid_argument("predict_posterior: need at least 2 draws");
  const data::WindowSample one[] = {sample};
  const Matrix h = encode_hidden(model, one);
  Matrix out(draws, model.config.static_dim);
  for (int s = 0; s < draws; ++s) out.row(s) = regress_batch(model, h, draw_noise(model, rng)).row(0);
  return PosteriorSampleSet::from_draws(std::move(out));
}

// ---- Batched inference ----------------------------------------------------

Matrix encode_hidden(const BimModel& model, std::span<const data::WindowSample> windows) {
  Matrix out(static_cast<Eigen::Index>(windows.size()), 2 * model.config.hidden);
  const ModelNoise zero = zero_noise(model);
  for (std::size_t begin = 0; begin < windows.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(windows.size(), begin + kInferenceChunk);
    std::vector<Matrix> seqs;
    for (std::size_t i = begin; i < end; ++i) seqs.push_back(windows[i].inputs);
    ad::Graph g;
    ModelGraph mg(g, model, &zero);
    const auto enc = mg.encode(stack_time_major(seqs), static_cast<Eigen::Index>(seqs.size()));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = enc.h.value();
  }
  return out;
}

Matrix regress_batch(const BimModel& model, const Matrix& hidden, const ModelNoise& noise) {
  ad::Graph g;
  ModelGraph mg(g, model, &noise);
  return mg.regress(g.constant(hidden)).value();
}

Matrix predict_mean(const BimModel& model, std::span<const data::WindowSample> windows) {
  return regress_batch(model, encode_hidden(model, windows), zero_noise(model));
}

PosteriorSampleSet predict_averaged_posterior(const BimModel& model, std::span<const data::WindowSample> windows,
                                              int draws, Rng& rng) {
  if (windows.empty()) throw std::invalid_argument("predict_averaged_posterior: no windows");
  const Matrix h = encode_hidden(model, windows);
  if (!model.bayesian()) {
    const Vector mean = regress_batch(model, h, ModelNoise{}).colwise().mean().transpose();
    Matrix d(2, mean.size());
    d.row(0) = mean.transpose();
    d.row(1) = mean.transpose();
    return PosteriorSampleSet::from_draws(std::move(d));
  }
  if (draws < 2) throw std::invalid_argument("predict_averaged_posterior: need at least 2 draws");
  Matrix out(draws, model.config.static_dim);
  for (int s = 0; s < draws; ++s) out.row(s) = regress_batch(model, h, draw_noise(model, rng)).colwise().mean();
  return PosteriorSampleSet::from_draws(std::move(out));
}

// ---- Checkpoints ------------------------------------------------------------

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_dim", c.input_dim},
       {"static_dim", c.static_dim},
       {"hidden", c.hidden},
       {"embed", c.embed},
       {"decoder_hidden", c.decoder_hidden},
       {"regressor_hidden", c.regressor_hidden},
       {"mode", to_string(c.mode)},
       {"prior_std", c.prior_std},
       {"rho_init", c.rho_init},
       {"variational_projection", c.variational_projection},
       {"sigmoid_candidate", c.sigmoid_candidate}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dim = j.at("input_dim").get<Eigen::Index>();
  c.static_dim = j.at("static_dim").get<Eigen::Index>();
  c.hidden = j.at("hidden").get<Eigen::Index>();
  c.embed = j.at("embed").get<Eigen::Index>();
  c.decoder_hidden = j.at("decoder_hidden").get<Eigen::Index>();
  c.regressor_hidden = j.at("regressor_hidden").get<Eigen::Index>();
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.prior_std = j.at("prior_std").get<double>();
  c.rho_init = j.at("rho_init").get<double>();
  c.variational_projection = j.at("variational_projection").get<bool>();
  c.sigmoid_candidate = j.at("sigmoid_candidate").get<bool>();
}

nlohmann::json to_json(const BimModel& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const ad::Parameter* p : model.parameters()) {
    std::vector<double> data(static_cast<std::size_t>(p->value.size()));
    Eigen::Map<Matrix>(data.data(), p->value.rows(), p->value.cols()) = p->value;
    params[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}};
  }
  return {{"format", "inverse_uq.bim"},
          {"version", 1},
          {"config", model.config},
          {"seed_lineage", model.seed_lineage},
          {"parameters", params}};
}

BimModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "inverse_uq.bim") throw IoError("not an inverse_uq.bim checkpoint");
  BimModel model(j.at("config").get<ModelConfig>(), 0);
  model.seed_lineage = j.at("seed_lineage").get<std::vector<std::uint64_t>>();
  const auto& params = j.at("parameters");
  for (ad::Parameter* p : model.parameters()) {
    const auto& entry = params.at(p->name);
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw DimensionError("checkpoint parameter " + p->name + " has an unexpected shape");
    }
    const auto data = entry.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("checkpoint parameter " + p->name + " truncated");
    p->value = Eigen::Map<const Matrix>(data.data(), rows, cols);
    p->zero_grad();
  }
  return model;
}

void save_checkpoint(const BimModel& model, const std::string& path) { util::write_file(path, to_json(model).dump()); }

BimModel load_checkpoint(const std::string& path) {
  return model_from_json(nlohmann::json::parse(util::read_file(path)));
}

}  // namespace inverse_uq::model
