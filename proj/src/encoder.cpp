#include "jsrl/encoder.hpp"

#include <cmath>
#include <limits>

#include "jsrl/errors.hpp"

namespace jsrl {

using ad::Mat;
using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || layers < 1) throw ParameterError("model: embed_dim, hidden_dim and layers must be >= 1");
  if (heads < 1 || embed_dim % heads != 0) throw ParameterError("model: embed_dim must be divisible by heads");
  if (atoms < 1) throw ParameterError("model: atoms must be >= 1");
}

// ---------------------------------------------------------------------------
// Feature preprocessing

ColumnStats column_stats(const Eigen::MatrixXd& x) {
  ColumnStats s;
  const auto n = static_cast<double>(x.rows());
  s.mean = n > 0 ? Eigen::RowVectorXd(x.colwise().mean()) : Eigen::RowVectorXd::Zero(x.cols());
  s.std.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double var = n > 0 ? (x.col(c).array() - s.mean(c)).square().sum() / n : 0.0;
    const double sd = std::sqrt(var);
    s.std(c) = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd normalize(const Eigen::MatrixXd& x, const ColumnStats& stats) {
  Eigen::MatrixXd out = x.rowwise() - stats.mean;
  out.array().rowwise() /= stats.std.array();
  return out;
}

Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& x) { return normalize(x, column_stats(x)); }

FeatureTensors normalize_features(const FeatureTensors& raw) {
  FeatureTensors out = raw;
  out.op_features = zscore_columns(raw.op_features);
  out.machine_features = zscore_columns(raw.machine_features);
  if (raw.edge_features.size() > 0) {
    Eigen::MatrixXd e = raw.edge_features;
    out.edge_features = zscore_columns(e).col(0);
  }
  return out;
}

Observation observe(const ScheduleState& state) {
  const FeatureTensors ft = normalize_features(state.extract_features());
  Observation obs;
  obs.op_x = ft.op_features;
  obs.machine_x = ft.machine_features;
  obs.edge_x = ft.edge_features;
  obs.edge_op = ft.edge_op;
  obs.edge_machine = ft.edge_machine;
  const int n = state.num_ops();
  obs.pred.resize(static_cast<std::size_t>(n));
  obs.succ.resize(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) {
    const int job = state.job_of(f);
    const int op = state.op_of(f);
    const int len = static_cast<int>(state.instance().job(job).size());
    obs.pred[static_cast<std::size_t>(f)] = op > 0 ? f - 1 : -1;
    obs.succ[static_cast<std::size_t>(f)] = op + 1 < len ? f + 1 : -1;
  }
  obs.actions = state.feasible_actions();
  obs.action_op.reserve(obs.actions.size());
  for (const auto& a : obs.actions) obs.action_op.push_back(state.flat_index(a.job, a.op));
  return obs;
}

GraphBatch make_batch(std::span<const Observation* const> observations) {
  GraphBatch b;
  b.num_graphs = static_cast<int>(observations.size());
  Eigen::Index edges = 0;
  for (const auto* o : observations) {
    b.num_ops += o->num_ops();
    b.num_machines += o->num_machines();
    edges += o->edge_x.rows();
  }
  b.op_x.resize(b.num_ops, kOpFeatures);
  b.machine_x.resize(b.num_machines, kMachineFeatures);
  b.edge_x.resize(edges, 1);
  b.action_offset.push_back(0);
  int op_base = 0, machine_base = 0;
  Eigen::Index edge_base = 0;
  const int start_row = b.num_ops, end_row = b.num_ops + 1;
  for (int g = 0; g < b.num_graphs; ++g) {
    const Observation& o = *observations[static_cast<std::size_t>(g)];
    b.op_x.middleRows(op_base, o.num_ops()) = o.op_x;
    b.machine_x.middleRows(machine_base, o.num_machines()) = o.machine_x;
    b.edge_x.middleRows(edge_base, o.edge_x.rows()) = o.edge_x;
    for (std::size_t e = 0; e < o.edge_op.size(); ++e) {
      b.edge_op.push_back(op_base + o.edge_op[e]);
      b.edge_machine.push_back(machine_base + o.edge_machine[e]);
    }
    for (int f = 0; f < o.num_ops(); ++f) {
      const int p = o.pred[static_cast<std::size_t>(f)];
      const int s = o.succ[static_cast<std::size_t>(f)];
      b.pred_row.push_back(p < 0 ? start_row : op_base + p);
      b.succ_row.push_back(s < 0 ? end_row : op_base + s);
      b.op_graph.push_back(g);
    }
    for (int k = 0; k < o.num_machines(); ++k) b.machine_graph.push_back(g);
    for (std::size_t a = 0; a < o.actions.size(); ++a) {
      b.action_op.push_back(op_base + o.action_op[a]);
      b.action_machine.push_back(machine_base + o.actions[a].machine);
      b.action_graph.push_back(g);
    }
    b.action_offset.push_back(static_cast<int>(b.action_op.size()));
    op_base += o.num_ops();
    machine_base += o.num_machines();
    edge_base += o.edge_x.rows();
  }
  return b;
}

GraphBatch make_batch(const Observation& single) {
  const Observation* p = &single;
  return make_batch(std::span<const Observation* const>(&p, 1));
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

Mlp make_mlp(int in, int hidden, int out, Rng& rng, const std::string& name) {
  Mlp mlp;
  mlp.layers.push_back(make_linear(in, hidden, rng, name + ".0"));
  mlp.layers.push_back(make_linear(hidden, hidden, rng, name + ".1"));
  mlp.layers.push_back(make_linear(hidden, out, rng, name + ".2"));
  return mlp;
}

DenseLayer make_dense(int in, int out, bool noisy, Rng& rng, const std::string& name) {
  DenseLayer d;
  d.noisy = noisy;
  if (noisy) {
    d.noisy_layer = make_noisy_linear(in, out, rng);
    d.noisy_layer.mu_w.name = name + ".mu_w";
    d.noisy_layer.sigma_w.name = name + ".sigma_w";
    d.noisy_layer.mu_b.name = name + ".mu_b";
    d.noisy_layer.sigma_b.name = name + ".sigma_b";
  } else {
    d.plain = make_linear(in, out, rng, name);
  }
  return d;
}

Head make_head(int in, int hidden, int out, bool noisy, Rng& rng, const std::string& name) {
  Head h;
  h.hidden = make_dense(in, hidden, noisy, rng, name + ".hidden");
  h.out = make_dense(hidden, out, noisy, rng, name + ".out");
  return h;
}

template <class P>
void collect(std::vector<P*>& out, auto& linear) {
  out.push_back(&linear.weight);
  out.push_back(&linear.bias);
}

template <class P, class DenseT>
void collect_dense(std::vector<P*>& out, DenseT& d) {
  if (d.noisy) {
    out.push_back(&d.noisy_layer.mu_w);
    out.push_back(&d.noisy_layer.sigma_w);
    out.push_back(&d.noisy_layer.mu_b);
    out.push_back(&d.noisy_layer.sigma_b);
  } else {
    collect<P>(out, d.plain);
  }
}

template <class P, class ModelT, class LayerVec, class HeadT>
void collect_all(std::vector<P*>& out, const ModelConfig& cfg, LayerVec& gnn, HeadT& action, HeadT& value, HeadT& critic) {
  for (auto& layer : gnn) {
    for (auto* p : {&layer.w_op, &layer.w_machine, &layer.w_edge, &layer.att_op, &layer.att_machine, &layer.att_edge,
                    &layer.start, &layer.end})
      out.push_back(p);
    for (auto* mlp : {&layer.pred_mlp, &layer.succ_mlp, &layer.machine_mlp, &layer.self_mlp, &layer.project_mlp})
      for (auto& lin : mlp->layers) collect<P>(out, lin);
  }
  collect_dense<P>(out, action.hidden);
  collect_dense<P>(out, action.out);
  if (cfg.dueling) {
    collect_dense<P>(out, value.hidden);
    collect_dense<P>(out, value.out);
  }
  if (cfg.critic) {
    collect_dense<P>(out, critic.hidden);
    collect_dense<P>(out, critic.out);
  }
}

double scaled_noise(double x) { return (x >= 0.0 ? 1.0 : -1.0) * std::sqrt(std::abs(x)); }

}  // namespace

Linear make_linear(int in, int out, Rng& rng, const std::string& name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = ad::Parameter(name + ".weight", uniform_matrix(in, out, bound, rng));
  l.bias = ad::Parameter(name + ".bias", uniform_matrix(1, out, bound, rng));
  return l;
}

NoisyLinear make_noisy_linear(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  const double sigma0 = 0.5 / std::sqrt(static_cast<double>(in));
  NoisyLinear l;
  l.mu_w = ad::Parameter("mu_w", uniform_matrix(in, out, bound, rng));
  l.sigma_w = ad::Parameter("sigma_w", Mat::Constant(in, out, sigma0));
  l.mu_b = ad::Parameter("mu_b", uniform_matrix(1, out, bound, rng));
  l.sigma_b = ad::Parameter("sigma_b", Mat::Constant(1, out, sigma0));
  l.eps_w = Mat::Zero(in, out);
  l.eps_b = Mat::Zero(1, out);
  return l;
}

void set_noise(NoisyLinear& layer, NoiseMode mode, Rng* rng) {
  const auto in = layer.mu_w.value.rows();
  const auto out = layer.mu_w.value.cols();
  if (mode == NoiseMode::Zero) {
    layer.eps_w.setZero(in, out);
    layer.eps_b.setZero(1, out);
    return;
  }
  if (!rng) throw ContractViolation("set_noise: sampled mode needs an rng");
  Eigen::VectorXd e_in(in), e_out(out);
  for (Eigen::Index i = 0; i < in; ++i) e_in(i) = scaled_noise(rng->normal());
  for (Eigen::Index j = 0; j < out; ++j) e_out(j) = scaled_noise(rng->normal());
  layer.eps_w = e_in * e_out.transpose();
  layer.eps_b = e_out.transpose();
}

Eigen::VectorXd noisy_linear(const Eigen::VectorXd& x, const NoisyLinear& layer) {
  const Mat w = layer.mu_w.value + layer.sigma_w.value.cwiseProduct(layer.eps_w);
  const Mat b = layer.mu_b.value + layer.sigma_b.value.cwiseProduct(layer.eps_b);
  return w.transpose() * x + b.transpose();
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.embed_dim, h = cfg_.hidden_dim, dh = d / cfg_.heads;
  const double att_bound = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg_.layers; ++l) {
    const int op_in = l == 0 ? kOpFeatures : d;
    const int machine_in = l == 0 ? kMachineFeatures : d;
    const std::string p = "gnn." + std::to_string(l) + ".";
    GnnLayer layer;
    layer.w_op = ad::Parameter(p + "w_op", uniform_matrix(op_in, d, 1.0 / std::sqrt(double(op_in)), rng));
    layer.w_machine = ad::Parameter(p + "w_machine", uniform_matrix(machine_in, d, 1.0 / std::sqrt(double(machine_in)), rng));
    layer.w_edge = ad::Parameter(p + "w_edge", uniform_matrix(1, d, 1.0, rng));
    layer.att_op = ad::Parameter(p + "att_op", uniform_matrix(cfg_.heads, dh, att_bound, rng));
    layer.att_machine = ad::Parameter(p + "att_machine", uniform_matrix(cfg_.heads, dh, att_bound, rng));
    layer.att_edge = ad::Parameter(p + "att_edge", uniform_matrix(cfg_.heads, dh, att_bound, rng));
    layer.start = ad::Parameter(p + "start", uniform_matrix(1, op_in, 1.0 / std::sqrt(double(op_in)), rng));
    layer.end = ad::Parameter(p + "end", uniform_matrix(1, op_in, 1.0 / std::sqrt(double(op_in)), rng));
    layer.pred_mlp = make_mlp(op_in, h, d, rng, p + "pred_mlp");
    layer.succ_mlp = make_mlp(op_in, h, d, rng, p + "succ_mlp");
    layer.machine_mlp = make_mlp(d, h, d, rng, p + "machine_mlp");
    layer.self_mlp = make_mlp(op_in, h, d, rng, p + "self_mlp");
    layer.project_mlp = make_mlp(4 * d, h, d, rng, p + "project_mlp");
    gnn_.push_back(std::move(layer));
  }
  action_head_ = make_head(4 * d, h, cfg_.atoms, cfg_.noisy, rng, "action_head");
  if (cfg_.dueling) value_stream_ = make_head(2 * d, h, cfg_.atoms, cfg_.noisy, rng, "value_stream");
  if (cfg_.critic) critic_head_ = make_head(2 * d, h, 1, false, rng, "critic_head");
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out;
  collect_all<ad::Parameter, Model>(out, cfg_, gnn_, action_head_, value_stream_, critic_head_);
  return out;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  std::vector<const ad::Parameter*> out;
  collect_all<const ad::Parameter, const Model>(out, cfg_, gnn_, action_head_, value_stream_, critic_head_);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Model::resample_noise(Rng& rng) {
  if (!cfg_.noisy) return;
  for (Head* h : {&action_head_, &value_stream_}) {
    if (h == &value_stream_ && !cfg_.dueling) continue;
    set_noise(h->hidden.noisy_layer, NoiseMode::Sampled, &rng);
    set_noise(h->out.noisy_layer, NoiseMode::Sampled, &rng);
  }
}

void Model::zero_noise() {
  if (!cfg_.noisy) return;
  for (Head* h : {&action_head_, &value_stream_}) {
    if (h == &value_stream_ && !cfg_.dueling) continue;
    set_noise(h->hidden.noisy_layer, NoiseMode::Zero, nullptr);
    set_noise(h->out.noisy_layer, NoiseMode::Zero, nullptr);
  }
}

void Model::copy_parameters_from(const Model& other) {
  if (!(cfg_ == other.cfg_)) throw ContractViolation("copy_parameters_from: model configs differ");
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Forward pass

Var apply_dense(Tape& tape, const DenseLayer& layer, Var x) {
  if (!layer.noisy) return ad::add_row(ad::matmul(x, tape.param(layer.plain.weight)), tape.param(layer.plain.bias));
  const NoisyLinear& n = layer.noisy_layer;
  Var w = ad::add(tape.param(n.mu_w), ad::mul_const(tape.param(n.sigma_w), n.eps_w));
  Var b = ad::add(tape.param(n.mu_b), ad::mul_const(tape.param(n.sigma_b), n.eps_b));
  return ad::add_row(ad::matmul(x, w), b);
}

Var apply_mlp(Tape& tape, const Mlp& mlp, Var x) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    x = ad::add_row(ad::matmul(x, tape.param(mlp.layers[i].weight)), tape.param(mlp.layers[i].bias));
    if (i + 1 < mlp.layers.size()) x = ad::elu(x);
  }
  return x;
}

Var apply_head(Tape& tape, const Head& head, Var x) {
  return apply_dense(tape, head.out, ad::tanh(apply_dense(tape, head.hidden, x)));
}

Var embed_machines(Tape& tape, const GnnLayer& layer, int heads, const GraphBatch& batch, Var ops_prev, Var machines_prev,
                   Var edges) {
  (void)heads;
  Var proj_op = ad::matmul(ops_prev, tape.param(layer.w_op));
  Var proj_machine = ad::matmul(machines_prev, tape.param(layer.w_machine));
  Var proj_edge = ad::matmul(edges, tape.param(layer.w_edge));

  Var score_op = ad::head_dot(proj_op, tape.param(layer.att_op));
  Var score_machine = ad::head_dot(proj_machine, tape.param(layer.att_machine));
  Var score_edge = ad::head_dot(proj_edge, tape.param(layer.att_edge));

  const bool has_edges = !batch.edge_op.empty();
  std::vector<int> seg;
  seg.reserve(batch.edge_machine.size() + static_cast<std::size_t>(batch.num_machines));
  seg.insert(seg.end(), batch.edge_machine.begin(), batch.edge_machine.end());
  for (int k = 0; k < batch.num_machines; ++k) seg.push_back(k);

  Var self_logit = ad::leaky_relu(ad::scale(score_machine, 2.0), 0.2);
  Var self_msg = proj_machine;
  Var logits = self_logit, messages = self_msg;
  if (has_edges) {
    Var edge_logit = ad::leaky_relu(ad::add(ad::add(ad::gather_rows(score_op, batch.edge_op), ad::gather_rows(score_machine, batch.edge_machine)), score_edge), 0.2);
    Var edge_msg = ad::add(ad::gather_rows(proj_op, batch.edge_op), proj_edge);
    logits = ad::concat_rows({edge_logit, self_logit});
    messages = ad::concat_rows({edge_msg, self_msg});
  } else {
    seg.erase(seg.begin(), seg.begin() + static_cast<std::ptrdiff_t>(batch.edge_machine.size()));
  }
  Var alpha = ad::segment_softmax(logits, seg, batch.num_machines);
  return ad::sigmoid(ad::segment_sum(ad::head_scale(messages, alpha), seg, batch.num_machines));
}

Var embed_operations(Tape& tape, const GnnLayer& layer, const GraphBatch& batch, Var ops_prev, Var machines) {
  Var machine_sum = ad::segment_sum(ad::gather_rows(machines, batch.edge_machine), batch.edge_op, batch.num_ops);
  Var extended = ad::concat_rows({ops_prev, tape.param(layer.start), tape.param(layer.end)});
  Var pred = ad::gather_rows(extended, batch.pred_row);
  Var succ = ad::gather_rows(extended, batch.succ_row);
  Var joined = ad::concat_cols({apply_mlp(tape, layer.pred_mlp, pred), apply_mlp(tape, layer.succ_mlp, succ),
                                apply_mlp(tape, layer.machine_mlp, machine_sum), apply_mlp(tape, layer.self_mlp, ops_prev)});
  return apply_mlp(tape, layer.project_mlp, ad::elu(joined));
}

Var pool_graph(const GraphBatch& batch, Var ops, Var machines) {
  return ad::concat_cols({ad::segment_mean(ops, batch.op_graph, batch.num_graphs),
                          ad::segment_mean(machines, batch.machine_graph, batch.num_graphs)});
}

Embeddings encode(Tape& tape, const Model& model, const GraphBatch& batch) {
  if (batch.num_graphs == 0) throw ContractViolation("encode: empty batch");
  Var ops = tape.constant(batch.op_x);
  Var machines = tape.constant(batch.machine_x);
  Var edges = tape.constant(batch.edge_x);
  for (const auto& layer : model.gnn()) {
    Var next_machines = embed_machines(tape, layer, model.config().heads, batch, ops, machines, edges);
    ops = embed_operations(tape, layer, batch, ops, next_machines);
    machines = next_machines;
  }
  return {ops, machines, pool_graph(batch, ops, machines)};
}

Var action_inputs(const Embeddings& emb, const GraphBatch& batch) {
  if (batch.action_op.empty()) throw ContractViolation("action_inputs: no actions to score");
  return ad::concat_cols({ad::gather_rows(emb.ops, batch.action_op), ad::gather_rows(emb.machines, batch.action_machine),
                          ad::gather_rows(emb.graph, batch.action_graph)});
}

Var action_scores(Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb) {
  return apply_head(tape, model.action_head(), action_inputs(emb, batch));
}

Var policy_log_probs(Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb) {
  if (model.config().atoms != 1) throw ContractViolation("policy_log_probs: model has a distributional head");
  return ad::segment_log_softmax(action_scores(tape, model, batch, emb), batch.action_graph, batch.num_graphs);
}

namespace {

Var dueling(Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb, Var adv) {
  Var value = apply_head(tape, model.value_stream(), emb.graph);
  Var adv_mean = ad::segment_mean(adv, batch.action_graph, batch.num_graphs);
  return ad::sub(ad::add(ad::gather_rows(value, batch.action_graph), adv), ad::gather_rows(adv_mean, batch.action_graph));
}

}  // namespace

Var q_values(Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb) {
  if (model.config().atoms != 1) throw ContractViolation("q_values: model has a distributional head");
  Var scores = action_scores(tape, model, batch, emb);
  return model.config().dueling ? dueling(tape, model, batch, emb, scores) : scores;
}

Var q_log_distribution(Tape& tape, const Model& model, const GraphBatch& batch, const Embeddings& emb) {
  if (model.config().atoms < 2) throw ContractViolation("q_log_distribution: model has a scalar head");
  Var scores = action_scores(tape, model, batch, emb);
  if (model.config().dueling) scores = dueling(tape, model, batch, emb, scores);
  return ad::log_softmax_rows(scores);
}

Var state_values(Tape& tape, const Model& model, const Embeddings& emb) {
  if (!model.config().critic) throw ContractViolation("state_values: model has no critic head");
  return apply_head(tape, model.critic_head(), emb.graph);
}

// ---------------------------------------------------------------------------
// Plain-value utilities

std::vector<double> masked_softmax(std::span<const double> logits, std::span<const bool> mask) {
  if (logits.size() != mask.size()) throw ContractViolation("masked_softmax: length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  if (!std::isfinite(mx)) throw ContractViolation("masked_softmax: every action is masked");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

std::size_t masked_select(std::span<const double> scores, std::span<const bool> mask, SelectMode mode, Rng* rng) {
  if (scores.size() != mask.size()) throw ContractViolation("masked_select: length mismatch");
  if (mode == SelectMode::Sample) {
    if (!rng) throw ContractViolation("masked_select: sampling needs an rng");
    return rng->categorical(masked_softmax(scores, mask));
  }
  std::size_t best = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (mask[i] && (best == scores.size() || scores[i] > scores[best])) best = i;
  if (best == scores.size()) throw ContractViolation("masked_select: every action is masked");
  return best;
}

std::vector<double> dueling_combine(double value, std::span<const double> advantages) {
  if (advantages.empty()) throw ContractViolation("dueling_combine: no actions");
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(advantages.size());
  std::vector<double> q;
  q.reserve(advantages.size());
  for (double a : advantages) q.push_back(value + a - mean);
  return q;
}

}  // namespace jsrl
