#pragma once

// Bayesian inverse model: a bidirectional LSTM sequence encoder, a ReLU
// projection feeding an LSTM decoder that reconstructs the input sequence,
// and a static-characteristic regressor whose final linear layer can carry a
// Gaussian weight posterior trained with Bayes by Backprop.

#include "inverse_uq/autodiff.hpp"
#include "inverse_uq/dataset.hpp"
#include "inverse_uq/random.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace inverse_uq::model {

using ad::Matrix;
using ad::Vector;

enum class Mode { deterministic, bayesian };
std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view text);

struct ModelConfig {
  Eigen::Index input_dim = 6;  // D_x + 1
  Eigen::Index static_dim = 27;
  Eigen::Index hidden = 32;  // per encoder direction
  Eigen::Index embed = 32;
  Eigen::Index decoder_hidden = 32;
  Eigen::Index regressor_hidden = 32;
  Mode mode = Mode::bayesian;
  double prior_std = 0.1;
  double rho_init = -3.0;
  bool variational_projection = false;
  /// Apply the logistic to the candidate gate as well (literal gate equations).
  bool sigmoid_candidate = false;
};

enum class Gate { input = 0, forget = 1, candidate = 2, output = 3 };

/// Gate weights for all four gates, fused: rows are [input; hidden] and the
/// column blocks are i, f, g, o (each `hidden` wide).
struct LstmParams {
  ad::Parameter weight;  // (D_in + H) x 4H
  ad::Parameter bias;    // 1 x 4H
  Eigen::Index input_dim = 0;
  Eigen::Index hidden = 0;

  /// H x (D_in + H) matrix acting on [x; h] for one gate.
  Matrix gate_matrix(Gate gate) const;
  Vector gate_bias(Gate gate) const;
};

struct LinearParams {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out
};

/// Mean and raw scale of a factorised Gaussian over a linear layer's weights.
/// Effective std is softplus(rho).
struct VariationalLinearParams {
  ad::Parameter weight_mu, weight_rho;  // in x out
  ad::Parameter bias_mu, bias_rho;      // 1 x out
  double prior_std = 0.1;
};

/// Standard-normal draws for one VariationalLinearParams.
struct LayerNoise {
  Matrix weight;
  Matrix bias;
};

LayerNoise draw_noise(const VariationalLinearParams& layer, Rng& rng);
LayerNoise zero_noise(const VariationalLinearParams& layer);

struct BimModel {
  ModelConfig config;
  LstmParams encoder_forward;
  LstmParams encoder_backward;
  LinearParams projection;                                     // 2H -> E
  std::optional<VariationalLinearParams> projection_variational;  // replaces `projection` when enabled
  LinearParams decoder_init;                                   // E -> 2 H_dec  ([h0 | c0])
  LstmParams decoder;                                          // (D_x + 1) -> H_dec
  LinearParams decoder_output;                                 // H_dec -> D_x + 1
  LinearParams regressor_hidden;                               // 2H -> R
  std::optional<LinearParams> regressor_out;                   // deterministic mode
  std::optional<VariationalLinearParams> regressor_variational;  // bayesian mode
  std::vector<std::uint64_t> seed_lineage;

  BimModel() = default;
  BimModel(const ModelConfig& config, std::uint64_t init_seed);

  bool bayesian() const { return config.mode == Mode::bayesian; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::vector<VariationalLinearParams*> variational_layers();
  std::vector<const VariationalLinearParams*> variational_layers() const;
};

/// Noise for every variational layer of a model, in variational_layers() order.
struct ModelNoise {
  std::vector<LayerNoise> layers;
};
ModelNoise draw_noise(const BimModel& model, Rng& rng);
ModelNoise zero_noise(const BimModel& model);

/// Stacks equal-length sequences time-major: row t * batch + b holds step t of
/// sequence b.
Matrix stack_time_major(std::span<const Matrix> sequences);
std::vector<Matrix> unstack_time_major(const Matrix& stacked, Eigen::Index batch);

/// Graph-side view of a BimModel. Binds each parameter once per graph.
class ModelGraph {
 public:
  /// Trainable view: parameters are bound as graph parameters.
  ModelGraph(ad::Graph& graph, BimModel& model, const ModelNoise* noise);
  /// Frozen view: parameters enter the graph as constants.
  ModelGraph(ad::Graph& graph, const BimModel& model, const ModelNoise* noise);

  struct Encoded {
    ad::Var h;  // batch x 2H, [h_forward | h_backward]
    ad::Var e;  // batch x E, post-ReLU
  };

  /// `stacked` is time-major (see stack_time_major).
  Encoded encode(const Matrix& stacked, Eigen::Index batch);
  /// Time-major reconstruction, (length * batch) x (D_x + 1).
  ad::Var decode(const ad::Var& e, Eigen::Index length);
  ad::Var regress(const ad::Var& h);
  /// Sum of KL terms of all variational layers (0 in deterministic mode).
  ad::Var kl();

  ad::Graph& graph() { return graph_; }

 private:
  struct BoundLstm {
    ad::Var w_input, w_hidden, bias;
  };
  struct BoundLinear {
    ad::Var weight, bias;
  };

  ad::Var bind(const ad::Parameter& p);
  BoundLstm bind(const LstmParams& p);
  BoundLinear bind(const LinearParams& p);
  BoundLinear bind(const VariationalLinearParams& p, const LayerNoise& noise);
  const LayerNoise& noise_for(std::size_t index) const;
  ad::Var run_direction(const BoundLstm& lstm, const ad::Var& projected, Eigen::Index length, Eigen::Index batch,
                        bool reverse);

  ad::Graph& graph_;
  const BimModel& model_;
  BimModel* trainable_ = nullptr;
  const ModelNoise* noise_;
  std::optional<ModelNoise> zero_;
};

// ---- Single-sample operations -------------------------------------------

/// One LSTM step on vectors: returns (h_t, c_t).
std::pair<Vector, Vector> lstm_cell_step(const Vector& x, const Vector& h_prev, const Vector& c_prev,
                                         const LstmParams& params, bool sigmoid_candidate = false);

struct EncoderOutput {
  Vector h;
  Vector e;
};

/// Throws std::invalid_argument for an empty window.
EncoderOutput encode(const data::WindowSample& sample, const BimModel& model);
/// Reconstruction of `length` steps, length x (D_x + 1).
Matrix decode(const Vector& e, Eigen::Index length, const BimModel& model);
/// Static estimate from an encoder embedding. Bayesian mode requires `rng`
/// (ContractError otherwise) and draws fresh weights.
Vector regress_statics(const Vector& h, const BimModel& model, Rng* rng);
/// Same, with the final-layer noise supplied explicitly.
Vector regress_statics(const Vector& h, const BimModel& model, const ModelNoise& noise);

/// w = mu + softplus(rho) * eps, elementwise.
Matrix sample_variational_weights(const Matrix& mu, const Matrix& rho, const Matrix& eps);
/// Closed-form KL(q || N(0, prior_std^2)) summed over weights and biases.
double kl_variational_prior(const VariationalLinearParams& params);
double kl_gaussian(const Matrix& mu, const Matrix& rho, double prior_std);

struct PosteriorSampleSet {
  Matrix draws;  // S x D_z
  Vector mean;
  Vector std;         // sample std (divisor S - 1)
  Matrix covariance;  // sample covariance (divisor S - 1)

  static PosteriorSampleSet from_draws(Matrix draws);
};

/// S posterior draws of the static estimate for one window (encoder run once).
PosteriorSampleSet predict_posterior(const BimModel& model, const data::WindowSample& sample, int draws, Rng& rng);

// ---- Batched inference ----------------------------------------------------

/// Encoder embeddings h for many windows, n x 2H.
Matrix encode_hidden(const BimModel& model, std::span<const data::WindowSample> windows);
/// Static estimates with explicit noise, n x D_z.
Matrix regress_batch(const BimModel& model, const Matrix& hidden, const ModelNoise& noise);
/// Static estimates with mean weights (noise zero), n x D_z.
Matrix predict_mean(const BimModel& model, std::span<const data::WindowSample> windows);
/// Posterior of the window-averaged estimate: each draw shares one weight
/// sample across all windows and averages their predictions.
PosteriorSampleSet predict_averaged_posterior(const BimModel& model, std::span<const data::WindowSample> windows,
                                              int draws, Rng& rng);

// ---- Checkpoints ------------------------------------------------------------

nlohmann::json to_json(const BimModel& model);
BimModel model_from_json(const nlohmann::json& j);
void save_checkpoint(const BimModel& model, const std::string& path);
BimModel load_checkpoint(const std::string& path);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace inverse_uq::model
