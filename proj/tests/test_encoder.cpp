#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fd_check.hpp"
#include "jsrl/checkpoint.hpp"
#include "jsrl/encoder.hpp"
#include "jsrl/errors.hpp"
#include "test_util.hpp"

using namespace jsrl;
using namespace jsrl::testing;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

// Plain-Eigen re-implementation of the encoder for a single graph, used as an
// independent oracle for the tape-based forward pass.
Mat elu(const Mat& x) { return x.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); }); }
Mat lrelu(const Mat& x) { return x.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; }); }
Mat sigm(const Mat& x) { return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }); }

Mat affine(const Mat& x, const Linear& l) { return (x * l.weight.value).rowwise() + l.bias.value.row(0); }

Mat mlp(const Mat& x, const Mlp& m) {
  Mat h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = affine(h, m.layers[i]);
    if (i + 1 < m.layers.size()) h = elu(h);
  }
  return h;
}

struct OracleOut {
  Mat ops, machines, graph;
};

OracleOut oracle_encode(const Model& model, const Observation& o) {
  Mat ops = o.op_x, machines = o.machine_x;
  const int heads = model.config().heads;
  for (const auto& layer : model.gnn()) {
    const Mat po = ops * layer.w_op.value, pm = machines * layer.w_machine.value, pe = o.edge_x * layer.w_edge.value;
    const int d = static_cast<int>(po.cols()), dh = d / heads;
    Mat next(machines.rows(), d);
    for (int k = 0; k < o.num_machines(); ++k) {
      for (int h = 0; h < heads; ++h) {
        auto score = [&](const Mat& x, int row, const ad::Parameter& a) {
          return x.row(row).segment(h * dh, dh).dot(a.value.row(h));
        };
        std::vector<double> logits;
        std::vector<Eigen::RowVectorXd> msgs;
        for (std::size_t e = 0; e < o.edge_op.size(); ++e) {
          if (o.edge_machine[e] != k) continue;
          const int i = o.edge_op[e];
          const double s = score(po, i, layer.att_op) + score(pm, k, layer.att_machine) + score(pe, static_cast<int>(e), layer.att_edge);
          logits.push_back(s > 0 ? s : 0.2 * s);
          msgs.push_back(po.row(i).segment(h * dh, dh) + pe.row(static_cast<Eigen::Index>(e)).segment(h * dh, dh));
        }
        const double self = 2.0 * score(pm, k, layer.att_machine);
        logits.push_back(self > 0 ? self : 0.2 * self);
        msgs.push_back(pm.row(k).segment(h * dh, dh));
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dh);
        for (std::size_t j = 0; j < logits.size(); ++j) acc += logits[j] / z * msgs[j];
        next.row(k).segment(h * dh, dh) = acc;
      }
    }
    next = sigm(next);
    Mat msum = Mat::Zero(ops.rows(), d);
    for (std::size_t e = 0; e < o.edge_op.size(); ++e) msum.row(o.edge_op[e]) += next.row(o.edge_machine[e]);
    Mat pred(ops.rows(), ops.cols()), succ(ops.rows(), ops.cols());
    for (int f = 0; f < o.num_ops(); ++f) {
      pred.row(f) = o.pred[f] < 0 ? Mat(layer.start.value) : Mat(ops.row(o.pred[f]));
      succ.row(f) = o.succ[f] < 0 ? Mat(layer.end.value) : Mat(ops.row(o.succ[f]));
    }
    Mat joined(ops.rows(), 4 * d);
    joined << mlp(pred, layer.pred_mlp), mlp(succ, layer.succ_mlp), mlp(msum, layer.machine_mlp), mlp(ops, layer.self_mlp);
    ops = mlp(elu(joined), layer.project_mlp);
    machines = next;
  }
  Mat graph(1, 2 * ops.cols());
  graph << ops.colwise().mean(), machines.colwise().mean();
  return {ops, machines, graph};
}

Observation mid_episode(std::shared_ptr<const ProblemInstance> inst, int steps, std::uint64_t seed) {
  ScheduleState s = reset(inst);
  Rng rng(seed);
  for (int t = 0; t < steps && !s.is_terminal(); ++t) {
    const auto acts = s.feasible_actions();
    s.apply(acts[rng.uniform_index(acts.size())]);
  }
  return observe(s);
}

ModelConfig small_config(int d = 8, int heads = 1) {
  ModelConfig c;
  c.embed_dim = d;
  c.hidden_dim = d;
  c.layers = 2;
  c.heads = heads;
  return c;
}

std::vector<double> column(const Mat& m) { return std::vector<double>(m.data(), m.data() + m.rows()); }

}  // namespace

TEST_CASE("normalize_features: examples") {
  Mat constant = Mat::Constant(4, 1, 3.0);
  CHECK(zscore_columns(constant).isZero());
  Mat two(2, 1);
  two << 0.0, 2.0;
  const Mat z = zscore_columns(two);
  CHECK(z(0) == -1.0);
  CHECK(z(1) == 1.0);
  Rng rng(5);
  Mat r(100, 6);
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = rng.uniform(-50, 200);
  const Mat n = zscore_columns(r);
  for (int c = 0; c < 6; ++c) {
    const double mean = n.col(c).mean();
    const double sd = std::sqrt((n.col(c).array() - mean).square().mean());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(sd - 1.0) < 1e-9);
  }
}

TEST_CASE("embed_machines: d=1 hand evaluation for one machine and one op") {
  Rng rng(1);
  ModelConfig cfg = small_config(1);
  cfg.hidden_dim = 2;
  cfg.layers = 1;
  Model model(cfg, rng);
  auto& layer = const_cast<GnnLayer&>(model.gnn()[0]);
  layer.w_op.value = Mat::Constant(6, 1, 0.1);
  layer.w_machine.value = Mat::Constant(3, 1, -0.2);
  layer.w_edge.value = Mat::Constant(1, 1, 0.5);
  layer.att_op.value = Mat::Constant(1, 1, 2.0);
  layer.att_machine.value = Mat::Constant(1, 1, 1.0);
  layer.att_edge.value = Mat::Constant(1, 1, -1.0);
  Observation o;
  o.op_x = Mat::Constant(1, 6, 1.0);
  o.machine_x = Mat::Constant(1, 3, 1.0);
  o.edge_x = Mat::Constant(1, 1, 2.0);
  o.edge_op = {0};
  o.edge_machine = {0};
  o.pred = {-1};
  o.succ = {-1};
  const GraphBatch b = make_batch(o);
  Tape t(false);
  const double nu = embed_machines(t, layer, 1, b, t.constant(b.op_x), t.constant(b.machine_x), t.constant(b.edge_x)).scalar();
  // po = 0.6, pm = -0.6, pe = 1.0
  // edge logit = lrelu(2*0.6 + 1*(-0.6) + (-1)*1.0) = lrelu(-0.4) = -0.08
  // self logit = lrelu(2 * -0.6) = -0.24
  const double ae = std::exp(-0.08) / (std::exp(-0.08) + std::exp(-0.24));
  const double expected = 1.0 / (1.0 + std::exp(-(ae * (0.6 + 1.0) + (1.0 - ae) * -0.6)));
  CHECK(nu == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("embed_machines: machine without edges attends only to itself; outputs in (0,1)") {
  Rng rng(2);
  Model model(small_config(4), rng);
  const auto inst = share(parse_jssp("1 2\n0 3 0 2\n"));  // machine 1 has no edges
  const Observation o = observe(reset(inst));
  const GraphBatch b = make_batch(o);
  Tape t(false);
  const auto& layer = model.gnn()[0];
  const Mat nu = embed_machines(t, layer, 1, b, t.constant(b.op_x), t.constant(b.machine_x), t.constant(b.edge_x)).value();
  const Mat self = sigm(o.machine_x.row(1) * layer.w_machine.value);
  CHECK((nu.row(1) - self).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(nu.minCoeff() > 0.0);
  CHECK(nu.maxCoeff() < 1.0);
}

TEST_CASE("embed_machines: identical neighbours get identical attention") {
  Rng rng(3);
  Model model(small_config(4), rng);
  Observation o;
  o.op_x = Mat::Constant(2, 6, 0.5);
  o.machine_x = Mat::Constant(1, 3, 0.3);
  o.edge_x = Mat::Constant(2, 1, 1.0);
  o.edge_op = {0, 1};
  o.edge_machine = {0, 0};
  o.pred = {-1, 0};
  o.succ = {1, -1};
  // With identical neighbours the output equals the one-neighbour output where
  // that neighbour carries twice the weight; check by swapping the edges.
  const GraphBatch b1 = make_batch(o);
  std::swap(o.edge_op[0], o.edge_op[1]);
  const GraphBatch b2 = make_batch(o);
  Tape t(false);
  const auto& layer = model.gnn()[0];
  const Mat x = embed_machines(t, layer, 1, b1, t.constant(b1.op_x), t.constant(b1.machine_x), t.constant(b1.edge_x)).value();
  const Mat y = embed_machines(t, layer, 1, b2, t.constant(b2.op_x), t.constant(b2.machine_x), t.constant(b2.edge_x)).value();
  CHECK((x - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode matches the plain-Eigen oracle, including multi-head attention") {
  for (int heads : {1, 2}) {
    Rng rng(10 + heads);
    Model model(small_config(8, heads), rng);
    for (int steps : {0, 3, 7}) {
      const Observation o = mid_episode(share(generate_fjsp(4, 3, 21, {2, 3})), steps, 5);
      const GraphBatch b = make_batch(o);
      Tape t(false);
      const Embeddings e = encode(t, model, b);
      const OracleOut ref = oracle_encode(model, o);
      CHECK((e.ops.value() - ref.ops).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((e.machines.value() - ref.machines).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((e.graph.value() - ref.graph).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("embed_operations: job ends read the Start/End dummies") {
  const Observation o = observe(reset(share(generate_jssp(2, 3, 4))));
  const GraphBatch b = make_batch(o);
  CHECK(b.pred_row[0] == b.num_ops);
  CHECK(b.succ_row[2] == b.num_ops + 1);
  CHECK(b.pred_row[1] == 0);
  CHECK(b.succ_row[1] == 2);
  CHECK(b.pred_row[3] == b.num_ops);
}

TEST_CASE("pool_graph: mean of one, duplication invariance, recomputation") {
  Tape t(false);
  GraphBatch b;
  b.num_graphs = 1;
  b.op_graph = {0};
  b.machine_graph = {0};
  Mat mu(1, 2), nu(1, 2);
  mu << 1, 2;
  nu << 3, 4;
  Mat h = pool_graph(b, t.constant(mu), t.constant(nu)).value();
  CHECK(h == (Mat(1, 4) << 1, 2, 3, 4).finished());
  Rng rng(3);
  Mat ops(5, 3), machines(2, 3);
  for (Eigen::Index i = 0; i < ops.size(); ++i) ops(i) = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < machines.size(); ++i) machines(i) = rng.uniform(-1, 1);
  b.op_graph.assign(5, 0);
  b.machine_graph.assign(2, 0);
  h = pool_graph(b, t.constant(ops), t.constant(machines)).value();
  Mat ref(1, 6);
  ref << ops.colwise().mean(), machines.colwise().mean();
  CHECK((h - ref).cwiseAbs().maxCoeff() < 1e-12);
  Mat ops2(10, 3), machines2(4, 3);
  ops2 << ops, ops;
  machines2 << machines, machines;
  b.op_graph.assign(10, 0);
  b.machine_graph.assign(4, 0);
  CHECK((pool_graph(b, t.constant(ops2), t.constant(machines2)).value() - h).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("score_actions: head shape, determinism, policy normalization") {
  Rng rng(4);
  ModelConfig cfg = small_config(8);
  Model model(cfg, rng);
  const auto inst = share(generate_fjsp(5, 3, 2, {2, 4}));
  const Observation o = observe(reset(inst));
  const GraphBatch b = make_batch(o);
  Tape t(false);
  const Embeddings e = encode(t, model, b);
  CHECK(action_inputs(e, b).cols() == 32);
  const Mat scores = action_scores(t, model, b, e).value();
  CHECK(scores.rows() == static_cast<Eigen::Index>(o.actions.size()));
  CHECK(scores.cols() == 1);
  const Mat lp = policy_log_probs(t, model, b, e).value();
  CHECK(lp.array().exp().sum() == doctest::Approx(1.0));
  // Duplicate every action: identical rows score identically (up to the GEMM
  // kernel's row blocking, which may differ in the last bit with FMA).
  Observation dup = o;
  dup.actions.insert(dup.actions.end(), o.actions.begin(), o.actions.end());
  dup.action_op.insert(dup.action_op.end(), o.action_op.begin(), o.action_op.end());
  const GraphBatch bd = make_batch(dup);
  const Mat sd = action_scores(t, model, bd, encode(t, model, bd)).value();
  CHECK((sd.topRows(scores.rows()) - sd.bottomRows(scores.rows())).cwiseAbs().maxCoeff() < 1e-12);
  GraphBatch empty = b;
  empty.action_op.clear();
  empty.action_machine.clear();
  empty.action_graph.clear();
  CHECK_THROWS_AS(action_scores(t, model, empty, e), ContractViolation);
}

TEST_CASE("score_actions: d=1 hand evaluation of the tanh head") {
  Rng rng(1);
  ModelConfig cfg = small_config(1);
  cfg.hidden_dim = 1;
  cfg.layers = 1;
  Model model(cfg, rng);
  Head& head = const_cast<Head&>(model.action_head());
  head.hidden.plain.weight.value = (Mat(4, 1) << 0.5, -1.0, 0.25, 2.0).finished();
  head.hidden.plain.bias.value = Mat::Constant(1, 1, 0.1);
  head.out.plain.weight.value = Mat::Constant(1, 1, 3.0);
  head.out.plain.bias.value = Mat::Constant(1, 1, -0.5);
  Tape t(false);
  const Var x = t.constant((Mat(1, 4) << 1.0, 2.0, 3.0, 0.5).finished());
  const double y = apply_head(t, head, x).scalar();
  CHECK(y == doctest::Approx(3.0 * std::tanh(0.5 - 2.0 + 0.75 + 1.0 + 0.1) - 0.5).epsilon(1e-12));
}

TEST_CASE("masked_softmax and masked_select examples") {
  const std::vector<double> zeros{0.0, 0.0};
  const bool mask01[] = {true, false};
  const auto p = masked_softmax(zeros, mask01);
  CHECK(p == std::vector<double>{1.0, 0.0});
  const std::vector<double> q{1.0, 3.5, 2.0};
  const bool all[] = {true, true, true};
  CHECK(masked_select(q, all, SelectMode::Argmax, nullptr) == 1);
  const std::vector<double> tie{2.0, 2.0};
  const bool both[] = {true, true};
  CHECK(masked_select(tie, both, SelectMode::Argmax, nullptr) == 0);
  const bool none[] = {false, false};
  CHECK_THROWS_AS(masked_select(tie, none, SelectMode::Argmax, nullptr), ContractViolation);
  CHECK_THROWS_AS(masked_softmax(tie, none), ContractViolation);
  const bool second[] = {false, true, false};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(masked_select(q, second, SelectMode::Sample, &rng) == 1);
  // Sampling frequencies follow the softmax.
  const std::vector<double> lg{0.0, std::log(3.0)};
  int ones = 0;
  for (int i = 0; i < 20000; ++i) ones += masked_select(lg, both, SelectMode::Sample, &rng) == 1;
  CHECK(std::abs(ones / 20000.0 - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / 20000.0));
}

TEST_CASE("masked softmax: zero on masked entries, one in total") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(7);
    bool m[7];
    bool any = false;
    for (int i = 0; i < 7; ++i) {
      s[static_cast<std::size_t>(i)] = rng.uniform(-20, 20);
      m[i] = rng.uniform() < 0.5;
      any = any || m[i];
    }
    if (!any) m[3] = true;
    const auto p = masked_softmax(s, m);
    double total = 0.0;
    for (int i = 0; i < 7; ++i) {
      if (!m[i]) CHECK(p[static_cast<std::size_t>(i)] == 0.0);
      total += p[static_cast<std::size_t>(i)];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("noisy_linear: sigma zero, zero mode, Monte-Carlo mean") {
  Rng rng(6);
  NoisyLinear l = make_noisy_linear(3, 2, rng);
  CHECK(l.sigma_w.value(0, 0) == doctest::Approx(0.5 / std::sqrt(3.0)));
  Eigen::VectorXd x(3);
  x << 0.5, -1.0, 2.0;
  const Eigen::VectorXd affine_ref = l.mu_w.value.transpose() * x + l.mu_b.value.transpose();
  NoisyLinear zero_sigma = l;
  zero_sigma.sigma_w.value.setZero();
  zero_sigma.sigma_b.value.setZero();
  set_noise(zero_sigma, NoiseMode::Sampled, &rng);
  CHECK(noisy_linear(x, zero_sigma) == affine_ref);
  set_noise(l, NoiseMode::Zero, nullptr);
  CHECK(noisy_linear(x, l) == noisy_linear(x, l));
  CHECK(noisy_linear(x, l) == affine_ref);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = Eigen::VectorXd::Zero(2);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    set_noise(l, NoiseMode::Sampled, &rng);
    const Eigen::VectorXd y = noisy_linear(x, l);
    sum += y;
    sq += y.cwiseProduct(y);
  }
  const Eigen::VectorXd mean = sum / draws;
  for (int j = 0; j < 2; ++j) {
    const double var = sq(j) / draws - mean(j) * mean(j);
    CHECK(std::abs(mean(j) - affine_ref(j)) < 3.0 * std::sqrt(var / draws));
  }
}

TEST_CASE("noisy head layer equals plain affine when sigma is zero (tape path)") {
  Rng rng(7);
  DenseLayer noisy;
  noisy.noisy = true;
  noisy.noisy_layer = make_noisy_linear(4, 3, rng);
  noisy.noisy_layer.sigma_w.value.setZero();
  noisy.noisy_layer.sigma_b.value.setZero();
  set_noise(noisy.noisy_layer, NoiseMode::Sampled, &rng);
  DenseLayer plain;
  plain.plain.weight = ad::Parameter("w", noisy.noisy_layer.mu_w.value);
  plain.plain.bias = ad::Parameter("b", noisy.noisy_layer.mu_b.value);
  Mat x(5, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1, 1);
  Tape t(false);
  CHECK(apply_dense(t, noisy, t.constant(x)).value() == apply_dense(t, plain, t.constant(x)).value());
}

TEST_CASE("dueling_combine examples and invariants") {
  CHECK(dueling_combine(5.0, std::vector<double>{1, 1, 1}) == std::vector<double>{5, 5, 5});
  CHECK(dueling_combine(2.0, std::vector<double>{0, 3}) == std::vector<double>{0.5, 3.5});
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(5), shifted(5);
    for (int i = 0; i < 5; ++i) shifted[static_cast<std::size_t>(i)] = (a[static_cast<std::size_t>(i)] = rng.uniform(-3, 3)) + 2.5;
    const auto q1 = dueling_combine(1.0, a), q2 = dueling_combine(1.0, shifted);
    for (int i = 0; i < 5; ++i) CHECK(q1[static_cast<std::size_t>(i)] == doctest::Approx(q2[static_cast<std::size_t>(i)]));
    CHECK(std::max_element(q1.begin(), q1.end()) - q1.begin() == std::max_element(a.begin(), a.end()) - a.begin());
  }
}

TEST_CASE("model q-values: dueling path matches dueling_combine per graph") {
  Rng rng(8);
  ModelConfig cfg = small_config(8);
  cfg.dueling = true;
  Model model(cfg, rng);
  const Observation o1 = observe(reset(share(generate_fjsp(3, 3, 1, {2, 3}))));
  const Observation o2 = mid_episode(share(generate_fjsp(4, 3, 2, {2, 3})), 2, 1);
  const Observation* both[] = {&o1, &o2};
  const GraphBatch b = make_batch(both);
  Tape t(false);
  const Embeddings e = encode(t, model, b);
  const Mat q = q_values(t, model, b, e).value();
  const Mat adv = action_scores(t, model, b, e).value();
  const Mat v = apply_head(t, model.value_stream(), e.graph).value();
  for (int g = 0; g < 2; ++g) {
    const int lo = b.action_offset[g], hi = b.action_offset[g + 1];
    const auto ref = dueling_combine(v(g, 0), column(adv.middleRows(lo, hi - lo)));
    for (int a = lo; a < hi; ++a) CHECK(q(a, 0) == doctest::Approx(ref[static_cast<std::size_t>(a - lo)]).epsilon(1e-12));
  }
}

TEST_CASE("batched evaluation equals per-graph evaluation") {
  Rng rng(12);
  Model model(small_config(8), rng);
  const Observation o1 = mid_episode(share(generate_fjsp(3, 3, 1, {2, 3})), 1, 2);
  const Observation o2 = mid_episode(share(generate_jssp(4, 2, 2)), 3, 3);
  const Observation* both[] = {&o1, &o2};
  const GraphBatch b = make_batch(both);
  Tape t(false);
  const Mat joint = q_values(t, model, b, encode(t, model, b)).value();
  const GraphBatch b1 = make_batch(o1), b2 = make_batch(o2);
  const Mat s1 = q_values(t, model, b1, encode(t, model, b1)).value();
  const Mat s2 = q_values(t, model, b2, encode(t, model, b2)).value();
  CHECK((joint.topRows(s1.rows()) - s1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((joint.bottomRows(s2.rows()) - s2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("size agnostic and permutation equivariant") {
  Rng rng(13);
  Model model(small_config(8), rng);
  for (const auto& inst : {generate_fjsp(6, 6, 3, {5, 7}), generate_fjsp(10, 5, 3, {4, 6}), generate_jssp(3, 8, 3)}) {
    const GraphBatch b = make_batch(observe(reset(share(inst))));
    Tape t(false);
    CHECK(q_values(t, model, b, encode(t, model, b)).rows() == b.num_actions());
  }
  const ProblemInstance inst = generate_fjsp(4, 3, 17, {2, 3});
  std::vector<Job> reversed(inst.jobs().rbegin(), inst.jobs().rend());
  const ProblemInstance perm(inst.num_machines(), reversed);
  const Observation oa = observe(reset(share(inst))), ob = observe(reset(share(perm)));
  const GraphBatch ba = make_batch(oa), bb = make_batch(ob);
  Tape t(false);
  const Embeddings ea = encode(t, model, ba), eb = encode(t, model, bb);
  CHECK((ea.graph.value() - eb.graph.value()).cwiseAbs().maxCoeff() < 1e-12);
  const Mat qa = q_values(t, model, ba, ea).value(), qb = q_values(t, model, bb, eb).value();
  const int n = inst.num_jobs();
  for (std::size_t i = 0; i < oa.actions.size(); ++i) {
    Action mapped = oa.actions[i];
    mapped.job = n - 1 - mapped.job;
    const auto it = std::find(ob.actions.begin(), ob.actions.end(), mapped);
    REQUIRE(it != ob.actions.end());
    CHECK(qa(static_cast<Eigen::Index>(i), 0) == doctest::Approx(qb(it - ob.actions.begin(), 0)).epsilon(1e-10));
  }
}

TEST_CASE("gradients: every head agrees with finite differences on a d=8 model") {
  const auto inst = share(parse_fjsp("2 2\n2 2 1 3 2 5 1 2 4\n2 1 1 2 2 1 2 2 6\n"));
  const Observation o0 = observe(reset(inst));
  const Observation o1 = mid_episode(inst, 1, 3);
  const Observation* obs[] = {&o0, &o1};
  const GraphBatch b = make_batch(obs);
  struct Variant {
    const char* name;
    ModelConfig cfg;
  };
  std::vector<Variant> variants;
  ModelConfig base = small_config(8);
  variants.push_back({"policy+critic", base});
  variants.back().cfg.critic = true;
  variants.push_back({"dueling noisy q", base});
  variants.back().cfg.dueling = true;
  variants.back().cfg.noisy = true;
  variants.push_back({"distributional dueling", base});
  variants.back().cfg.atoms = 5;
  variants.back().cfg.dueling = true;
  for (auto& v : variants) {
    CAPTURE(v.name);
    Rng rng(77);
    Model model(v.cfg, rng);
    model.resample_noise(rng);
    Mat w(b.num_actions(), v.cfg.atoms);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = std::cos(0.9 * static_cast<double>(i));
    auto loss = [&](Tape& t) {
      const Embeddings e = encode(t, model, b);
      Var out;
      if (v.cfg.atoms > 1) out = ad::sum(ad::mul_const(q_log_distribution(t, model, b, e), w));
      else if (v.cfg.critic)
        out = ad::add(ad::sum(ad::mul_const(policy_log_probs(t, model, b, e), w)), ad::sum(ad::square(state_values(t, model, e))));
      else out = ad::sum(ad::mul_const(q_values(t, model, b, e), w));
      return out;
    };
    const FdResult r = finite_difference_check(model.parameters(), loss);
    CAPTURE(r.worst);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("gradients: parameters off the loss path get zero gradient; all others participate") {
  Rng rng(5);
  ModelConfig cfg = small_config(8);
  cfg.critic = true;
  Model model(cfg, rng);
  const GraphBatch b = make_batch(observe(reset(share(generate_fjsp(3, 3, 4, {2, 3})))));
  model.zero_grad();
  Tape t;
  const Embeddings e = encode(t, model, b);
  t.backward(ad::sum(q_values(t, model, b, e)));
  for (auto* p : model.parameters()) {
    CAPTURE(p->name);
    if (p->name.rfind("critic_head", 0) == 0) CHECK(p->grad.isZero());
  }
  model.zero_grad();
  Tape t2;
  const Embeddings e2 = encode(t2, model, b);
  t2.backward(ad::add(ad::sum(q_values(t2, model, b, e2)), ad::sum(state_values(t2, model, e2))));
  for (auto* p : model.parameters()) {
    CAPTURE(p->name);
    CHECK_FALSE(p->grad.isZero());
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(21);
  ModelConfig cfg = small_config(8, 2);
  cfg.dueling = true;
  cfg.noisy = true;
  cfg.atoms = 3;
  Checkpoint c{Model(cfg, rng), {{"algorithm", "rainbow"}, {"problem", "fjsp"}}, {{"episode", "40"}, {"validation", "81.25"}}};
  const std::string text = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(text);
  CHECK(back.model.config() == cfg);
  CHECK(back.settings == c.settings);
  CHECK(back.metadata == c.metadata);
  const auto a = c.model.parameters();
  const auto bp = back.model.parameters();
  REQUIRE(a.size() == bp.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == bp[i]->name);
    CHECK(a[i]->value == bp[i]->value);
  }
  CHECK(serialize_checkpoint(back) == text);
  CHECK_THROWS_AS(parse_checkpoint("garbage"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), ParseError);
}
