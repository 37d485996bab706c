#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "jsrl/autodiff.hpp"
#include "jsrl/env.hpp"
#include "jsrl/rng.hpp"

namespace jsrl {

struct ModelConfig {
  int embed_dim = 64;   // d
  int hidden_dim = 64;  // width of every MLP hidden layer
  int layers = 2;       // L
  int heads = 1;        // attention heads; embed_dim must be divisible by heads
  int atoms = 1;        // outputs per action (>1 selects the distributional head)
  bool critic = false;  // state-value head on h_t
  bool dueling = false;
  bool noisy = false;   // noisy linear layers in the action / value heads

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Feature preprocessing

/// Per-column z-score over the rows of `x`; a zero std is replaced by 1.
Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& x);

struct ColumnStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
};
ColumnStats column_stats(const Eigen::MatrixXd& x);
Eigen::MatrixXd normalize(const Eigen::MatrixXd& x, const ColumnStats& stats);

/// Z-scores operation, machine and edge features of one state over its own nodes.
FeatureTensors normalize_features(const FeatureTensors& raw);

/// Encoder input for one state: normalized features, graph topology and the feasible actions.
struct Observation {
  Eigen::MatrixXd op_x;       // |O| x 6
  Eigen::MatrixXd machine_x;  // |M| x 3
  Eigen::MatrixXd edge_x;     // |E| x 1
  std::vector<int> edge_op;
  std::vector<int> edge_machine;
  std::vector<int> pred;  // flat index of the job predecessor, -1 for the Start dummy
  std::vector<int> succ;  // -1 for the End dummy
  std::vector<Action> actions;
  std::vector<int> action_op;  // flat op index per action

  int num_ops() const { return static_cast<int>(op_x.rows()); }
  int num_machines() const { return static_cast<int>(machine_x.rows()); }
};

Observation observe(const ScheduleState& state);

/// Disjoint union of several observations, addressed with global row indices.
struct GraphBatch {
  int num_graphs = 0;
  int num_ops = 0;
  int num_machines = 0;
  Eigen::MatrixXd op_x, machine_x, edge_x;
  std::vector<int> edge_op, edge_machine;
  std::vector<int> pred_row, succ_row;  // rows of [ops; Start; End]
  std::vector<int> op_graph, machine_graph;
  std::vector<int> action_op, action_machine, action_graph;
  std::vector<int> action_offset;  // size num_graphs + 1

  int num_actions() const { return static_cast<int>(action_op.size()); }
};

GraphBatch make_batch(std::span<const Observation* const> observations);
GraphBatch make_batch(const Observation& single);

// ---------------------------------------------------------------------------
// Parameters

struct Linear {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out
};

/// Factorized-Gaussian noisy linear layer.
struct NoisyLinear {
  ad::Parameter mu_w, sigma_w;  // in x out
  ad::Parameter mu_b, sigma_b;  // 1 x out
  Eigen::MatrixXd eps_w;        // current noise sample, zero when noise is off
  Eigen::MatrixXd eps_b;
};

/// Dense layer that is either plain or noisy.
struct DenseLayer {
  bool noisy = false;
  Linear plain;
  NoisyLinear noisy_layer;
};

/// in -> hidden -> hidden -> out with ELU after each hidden layer.
struct Mlp {
  std::vector<Linear> layers;
};

struct GnnLayer {
  ad::Parameter w_op, w_machine, w_edge;        // in x d projections
  ad::Parameter att_op, att_machine, att_edge;  // heads x (d / heads)
  ad::Parameter start, end;                     // dummy node embeddings, 1 x op input width
  Mlp pred_mlp, succ_mlp, machine_mlp, self_mlp, project_mlp;
};

/// Two-layer tanh head: in -> hidden (tanh) -> out.
struct Head {
  DenseLayer hidden;
  DenseLayer out;
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// Draws fresh factorized noise for every noisy layer.
  void resample_noise(Rng& rng);
  /// Sets every noise sample to zero (evaluation mode).
  void zero_noise();
  /// Copies parameter values (not noise) from `other`; configs must match.
  void copy_parameters_from(const Model& other);
  void zero_grad();

  const std::vector<GnnLayer>& gnn() const { return gnn_; }
  const Head& action_head() const { return action_head_; }
  const Head& value_stream() const { return value_stream_; }
  const Head& critic_head() const { return critic_head_; }

 private:
  ModelConfig cfg_;
  std::vector<GnnLayer> gnn_;
  Head action_head_;   // MLP over [mu || nu || h_t]
  Head value_stream_;  // dueling V(s), only when cfg.dueling
  Head critic_head_;   // policy-gradient V(s), only when cfg.critic
};

// ---------------------------------------------------------------------------
// Forward pass

struct Embeddings {
  ad::Var ops;       // sum|O| x d
  ad::Var machines;  // sum|M| x d
  ad::Var graph;     // B x 2d
};

/// One heterogeneous GNN layer: machine update, then operation update.
struct LayerOutput {
  ad::Var ops;
  ad::Var machines;
};
ad::Var embed_machines(ad::Tape& tape, const GnnLayer& layer, int heads, const GraphBatch& batch, ad::Var ops_prev,
                       ad::Var machines_prev, ad::Var edges);
ad::Var embed_operations(ad::Tape& tape, const GnnLayer& layer, const GraphBatch& batch, ad::Var ops_prev, ad::Var machines);
ad::Var pool_graph(const GraphBatch& batch, ad::Var ops, ad::Var machines);

Embeddings encode(ad::Tape& tape, const Model& model, const GraphBatch& batch);

/// [mu_ij || nu_k || h_t] per action, A x 4d.
ad::Var action_inputs(const Embeddings& emb, const GraphBatch& batch);

ad::Var apply_mlp(ad::Tape& tape, const Mlp& mlp, ad::Var x);
ad::Var apply_dense(ad::Tape& tape, const DenseLayer& layer, ad::Var x);
ad::Var apply_head(ad::Tape& tape, const Head& head, ad::Var x);

/// Raw per-action head output (A x atoms): policy logits or q-values / advantages.
ad::Var action_scores(ad::Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb);
/// Log pi(a|s) over each graph's feasible actions, A x 1.
ad::Var policy_log_probs(ad::Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb);
/// Scalar q-values per action (A x 1), dueling-combined when configured.
ad::Var q_values(ad::Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb);
/// Per-action log-probabilities over atoms (A x atoms), dueling-combined when configured.
ad::Var q_log_distribution(ad::Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb);
/// Critic V(s) per graph, B x 1.
ad::Var state_values(ad::Tape& tape, const Model& model, const Embeddings& emb);

// ---------------------------------------------------------------------------
// Action selection and head utilities on plain values

/// Softmax with masked-out entries at probability zero.
std::vector<double> masked_softmax(std::span<const double> logits, std::span<const bool> mask);

enum class SelectMode { Sample, Argmax };

/// Index of the chosen action. Argmax ties go to the lowest index (actions are
/// kept sorted by (job, op, machine)). Throws ContractViolation if all entries are masked.
std::size_t masked_select(std::span<const double> scores, std::span<const bool> mask, SelectMode mode, Rng* rng);

/// Q = V + A - mean(A).
std::vector<double> dueling_combine(double value, std::span<const double> advantages);

enum class NoiseMode { Sampled, Zero };

/// Draws factorized noise for `layer` (Sampled) or clears it (Zero).
void set_noise(NoisyLinear& layer, NoiseMode mode, Rng* rng);
/// y = (mu_w + sigma_w * eps_w)^T x + (mu_b + sigma_b * eps_b) with the layer's current noise sample.
Eigen::VectorXd noisy_linear(const Eigen::VectorXd& x, const NoisyLinear& layer);

NoisyLinear make_noisy_linear(int in, int out, Rng& rng);
Linear make_linear(int in, int out, Rng& rng, const std::string& name);

}  // namespace jsrl
