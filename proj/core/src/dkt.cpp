#include "tutorfx/dkt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "tutorfx/error.hpp"
#include "tutorfx/parallel.hpp"
#include "tutorfx/rng.hpp"

namespace tfx {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kChunk = 8;  // fixed gradient-reduction granularity, independent of threads

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

double bce(double p, double y) {
  p = clamp_prob(p);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace

// ---------------------------------------------------------------------------
// config / vocab / layout

void DktConfig::validate() const {
  if (hidden_dim < 1) throw Error(ErrorCode::ConfigError, "dkt.hidden_dim must be >= 1");
  if (embed_dim < 1) throw Error(ErrorCode::ConfigError, "dkt.embed_dim must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "dkt.learning_rate must be > 0");
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "dkt.batch_size must be >= 1");
  if (max_seq_len < 2) throw Error(ErrorCode::ConfigError, "dkt.max_seq_len must be >= 2");
  if (!(grad_clip > 0.0)) throw Error(ErrorCode::ConfigError, "dkt.grad_clip must be > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "dkt.validation_fraction must be in [0, 1)");
  }
}

nlohmann::json DktConfig::to_json() const {
  return {{"hidden_dim", hidden_dim}, {"embed_dim", embed_dim},   {"learning_rate", learning_rate},
          {"epochs", epochs},         {"batch_size", batch_size}, {"max_seq_len", max_seq_len},
          {"grad_clip", grad_clip},   {"validation_fraction", validation_fraction},
          {"seed", seed}};
}

DktConfig DktConfig::from_json(const nlohmann::json& j) {
  DktConfig c;
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

DktVocab DktVocab::from_log(const EventLog& log) {
  std::set<std::string> items, skills;
  for (const auto& ev : log.events()) {
    items.insert(ev.problem_id);
    skills.insert(ev.skill_id);
  }
  DktVocab v;
  v.items.assign(items.begin(), items.end());
  v.skills.assign(skills.begin(), skills.end());
  v.reindex();
  return v;
}

void DktVocab::reindex() {
  item_lut_.clear();
  skill_lut_.clear();
  for (std::size_t i = 0; i < items.size(); ++i) item_lut_[items[i]] = static_cast<int>(i + 1);
  for (std::size_t i = 0; i < skills.size(); ++i) skill_lut_[skills[i]] = static_cast<int>(i + 1);
}

int DktVocab::item_index(const std::string& id) const {
  auto it = item_lut_.find(id);
  return it == item_lut_.end() ? 0 : it->second;
}

int DktVocab::skill_index(const std::string& id) const {
  auto it = skill_lut_.find(id);
  return it == skill_lut_.end() ? 0 : it->second;
}

DktLayout DktLayout::make(std::size_t hidden, std::size_t embed, std::size_t n_items, std::size_t n_skills) {
  DktLayout l;
  l.hidden = hidden;
  l.embed = embed;
  l.tokens = 2 * n_items;
  l.skills = n_skills;
  std::size_t at = 0;
  l.off_E = at; at += embed * l.tokens;
  l.off_W = at; at += 4 * hidden * embed;
  l.off_U = at; at += 4 * hidden * hidden;
  l.off_b = at; at += 4 * hidden;
  l.off_V = at; at += n_skills * hidden;
  l.off_c = at; at += n_skills;
  l.total = at;
  return l;
}

// Tensor views over a flat buffer. Gate rows are ordered i, f, o, g.
struct DktModel::Views {
  using CMap = Eigen::Map<const MatrixXd>;
  using CVec = Eigen::Map<const VectorXd>;
  CMap E, W, U;
  CVec b;
  CMap V;
  CVec c;

  Views(const DktLayout& l, const double* p)
      : E(p + l.off_E, static_cast<Eigen::Index>(l.embed), static_cast<Eigen::Index>(l.tokens)),
        W(p + l.off_W, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.embed)),
        U(p + l.off_U, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.hidden)),
        b(p + l.off_b, static_cast<Eigen::Index>(4 * l.hidden)),
        V(p + l.off_V, static_cast<Eigen::Index>(l.skills), static_cast<Eigen::Index>(l.hidden)),
        c(p + l.off_c, static_cast<Eigen::Index>(l.skills)) {}
};

namespace {

struct GradViews {
  using Map = Eigen::Map<MatrixXd>;
  using Vec = Eigen::Map<VectorXd>;
  Map E, W, U;
  Vec b;
  Map V;
  Vec c;

  GradViews(const DktLayout& l, double* p)
      : E(p + l.off_E, static_cast<Eigen::Index>(l.embed), static_cast<Eigen::Index>(l.tokens)),
        W(p + l.off_W, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.embed)),
        U(p + l.off_U, static_cast<Eigen::Index>(4 * l.hidden), static_cast<Eigen::Index>(l.hidden)),
        b(p + l.off_b, static_cast<Eigen::Index>(4 * l.hidden)),
        V(p + l.off_V, static_cast<Eigen::Index>(l.skills), static_cast<Eigen::Index>(l.hidden)),
        c(p + l.off_c, static_cast<Eigen::Index>(l.skills)) {}
};

}  // namespace

DktModel DktModel::initialize(const DktConfig& cfg, DktVocab vocab) {
  cfg.validate();
  DktModel m;
  m.cfg_ = cfg;
  m.layout_ = DktLayout::make(cfg.hidden_dim, cfg.embed_dim, vocab.n_items(), vocab.n_skills());
  m.vocab_ = std::move(vocab);
  m.vocab_.reindex();
  m.theta_ = VectorXd::Zero(static_cast<Eigen::Index>(m.layout_.total));

  Rng rng(derive_seed(cfg.seed, std::string_view("dkt.init")));
  std::normal_distribution<double> embed_init(0.0, 0.1);
  const double r = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  std::uniform_real_distribution<double> rec_init(-r, r);
  const auto& l = m.layout_;
  double* p = m.theta_.data();
  for (std::size_t k = l.off_E; k < l.off_W; ++k) p[k] = embed_init(rng);
  for (std::size_t k = l.off_W; k < l.off_b; ++k) p[k] = rec_init(rng);
  for (std::size_t h = 0; h < l.hidden; ++h) p[l.off_b + l.hidden + h] = 1.0;  // forget-gate bias
  for (std::size_t k = l.off_V; k < l.off_c; ++k) p[k] = rec_init(rng);
  return m;
}

DktSequence DktModel::encode(std::span<const InteractionEvent> events, std::size_t* unknown_items,
                             std::size_t* unknown_skills) const {
  DktSequence s;
  s.tokens.reserve(events.size());
  s.skills.reserve(events.size());
  s.labels.reserve(events.size());
  for (const auto& ev : events) {
    const int item = vocab_.item_index(ev.problem_id);
    const int skill = vocab_.skill_index(ev.skill_id);
    if (item == 0 && unknown_items) ++*unknown_items;
    if (skill == 0 && unknown_skills) ++*unknown_skills;
    s.tokens.push_back(item * 2 + (ev.correct ? 1 : 0));
    s.skills.push_back(skill);
    s.labels.push_back(ev.correct ? 1.0 : 0.0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// forward

MatrixXd DktModel::hidden_states(const DktSequence& seq) const {
  const Views v(layout_, theta_.data());
  const auto H = static_cast<Eigen::Index>(layout_.hidden);
  const auto T = static_cast<Eigen::Index>(seq.tokens.size());
  MatrixXd out = MatrixXd::Zero(H, T + 1);
  VectorXd h = VectorXd::Zero(H), c = VectorXd::Zero(H), a(4 * H);
  for (Eigen::Index t = 0; t < T; ++t) {
    a.noalias() = v.W * v.E.col(seq.tokens[static_cast<std::size_t>(t)]);
    a.noalias() += v.U * h;
    a += v.b;
    for (Eigen::Index k = 0; k < H; ++k) {
      const double i = sigmoid(a(k)), f = sigmoid(a(H + k)), o = sigmoid(a(2 * H + k)),
                   g = std::tanh(a(3 * H + k));
      c(k) = f * c(k) + i * g;
      h(k) = o * std::tanh(c(k));
    }
    out.col(t + 1) = h;
  }
  return out;
}

double DktModel::predict_skill(const VectorXd& h, int skill) const {
  const Views v(layout_, theta_.data());
  return clamp_prob(sigmoid(v.V.row(skill).dot(h) + v.c(skill)));
}

std::vector<double> DktModel::predict(const DktSequence& seq) const {
  const MatrixXd hs = hidden_states(seq);
  std::vector<double> p(seq.tokens.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    p[t] = predict_skill(hs.col(static_cast<Eigen::Index>(t)), seq.skills[t]);
  }
  return p;
}

double DktModel::loss(std::span<const DktSequence> batch) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& seq : batch) {
    const auto p = predict(seq);
    for (std::size_t t = 0; t < p.size(); ++t) total += bce(p[t], seq.labels[t]);
    n += p.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// backward

// Summed BCE of one sequence; adds the summed gradient to *grad when given.
double DktModel::sequence_grad(const DktSequence& seq, VectorXd* grad) const {
  const Views v(layout_, theta_.data());
  const auto H = static_cast<Eigen::Index>(layout_.hidden);
  const std::size_t T = seq.tokens.size();
  const std::size_t window = cfg_.max_seq_len;
  double total = 0.0;

  VectorXd h_carry = VectorXd::Zero(H), c_carry = VectorXd::Zero(H);
  MatrixXd hprev, cprev, gates, cs;  // per step: state in, gate activations, cell out
  VectorXd a(4 * H);

  for (std::size_t s = 0; s < T; s += window) {
    const std::size_t e = std::min(T, s + window);
    const auto n = static_cast<Eigen::Index>(e - s);
    hprev.resize(H, n);
    cprev.resize(H, n);
    gates.resize(4 * H, n);
    cs.resize(H, n);
    std::vector<double> dlogit(static_cast<std::size_t>(n));

    VectorXd h = h_carry, c = c_carry;
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t t = s + static_cast<std::size_t>(k);
      const int skill = seq.skills[t];
      const double p = clamp_prob(sigmoid(v.V.row(skill).dot(h) + v.c(skill)));
      total += bce(p, seq.labels[t]);
      dlogit[static_cast<std::size_t>(k)] = p - seq.labels[t];

      hprev.col(k) = h;
      cprev.col(k) = c;
      a.noalias() = v.W * v.E.col(seq.tokens[t]);
      a.noalias() += v.U * h;
      a += v.b;
      for (Eigen::Index j = 0; j < H; ++j) {
        const double gi = sigmoid(a(j)), gf = sigmoid(a(H + j)), go = sigmoid(a(2 * H + j)),
                     gg = std::tanh(a(3 * H + j));
        gates(j, k) = gi;
        gates(H + j, k) = gf;
        gates(2 * H + j, k) = go;
        gates(3 * H + j, k) = gg;
        c(j) = gf * c(j) + gi * gg;
        h(j) = go * std::tanh(c(j));
      }
      cs.col(k) = c;
    }
    h_carry = h;
    c_carry = c;
    if (!grad) continue;

    GradViews g(layout_, grad->data());
    VectorXd dh = VectorXd::Zero(H), dc = VectorXd::Zero(H), da(4 * H);
    for (Eigen::Index k = n - 1; k >= 0; --k) {
      const std::size_t t = s + static_cast<std::size_t>(k);
      for (Eigen::Index j = 0; j < H; ++j) {
        const double gi = gates(j, k), gf = gates(H + j, k), go = gates(2 * H + j, k),
                     gg = gates(3 * H + j, k);
        const double tc = std::tanh(cs(j, k));
        const double d_o = dh(j) * tc;
        const double d_c = dc(j) + dh(j) * go * (1.0 - tc * tc);
        da(j) = d_c * gg * gi * (1.0 - gi);
        da(H + j) = d_c * cprev(j, k) * gf * (1.0 - gf);
        da(2 * H + j) = d_o * go * (1.0 - go);
        da(3 * H + j) = d_c * gi * (1.0 - gg * gg);
        dc(j) = d_c * gf;
      }
      const int token = seq.tokens[t];
      g.W.noalias() += da * v.E.col(token).transpose();
      g.U.noalias() += da * hprev.col(k).transpose();
      g.b += da;
      g.E.col(token).noalias() += v.W.transpose() * da;
      dh.noalias() = v.U.transpose() * da;

      // prediction at t reads the state before step t
      const int skill = seq.skills[t];
      const double dl = dlogit[static_cast<std::size_t>(k)];
      g.V.row(skill) += dl * hprev.col(k).transpose();
      g.c(skill) += dl;
      dh += dl * v.V.row(skill).transpose();
    }
  }
  return total;
}

double DktModel::loss_and_gradient(std::span<const DktSequence> batch, VectorXd& grad) const {
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<VectorXd> grads(n_chunks);
  std::vector<double> losses(n_chunks, 0.0);
  parallel_for(n_chunks, [&](std::size_t ci) {
    grads[ci] = VectorXd::Zero(static_cast<Eigen::Index>(layout_.total));
    const std::size_t end = std::min(batch.size(), (ci + 1) * kChunk);
    for (std::size_t i = ci * kChunk; i < end; ++i) losses[ci] += sequence_grad(batch[i], &grads[ci]);
  });
  std::size_t n = 0;
  for (const auto& s : batch) n += s.tokens.size();
  grad = VectorXd::Zero(static_cast<Eigen::Index>(layout_.total));
  double total = 0.0;
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    grad += grads[ci];
    total += losses[ci];
  }
  if (n == 0) return 0.0;
  grad /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// serialization

namespace {

nlohmann::json tensor_json(const double* p, std::size_t rows, std::size_t cols) {
  return {{"rows", rows}, {"cols", cols}, {"data", std::vector<double>(p, p + rows * cols)}};
}

void read_tensor(const nlohmann::json& j, const char* name, std::size_t rows, std::size_t cols, double* out) {
  const auto& t = j.at(name);
  if (t.at("rows").get<std::size_t>() != rows || t.at("cols").get<std::size_t>() != cols) {
    throw Error(ErrorCode::ChecksumMismatch, std::string("dkt tensor ") + name + " has unexpected shape");
  }
  const auto data = t.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw Error(ErrorCode::ChecksumMismatch, std::string("dkt tensor ") + name + " truncated");
  std::copy(data.begin(), data.end(), out);
}

}  // namespace

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"loss", loss}, {"auc", auc}};
  j["val_auc"] = val_auc ? nlohmann::json(*val_auc) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json DktModel::to_json() const {
  const auto& l = layout_;
  const double* p = theta_.data();
  nlohmann::json j;
  j["format"] = "tutorfx-dkt";
  j["version"] = 1;
  j["config"] = cfg_.to_json();
  j["vocab"] = {{"items", vocab_.items}, {"skills", vocab_.skills}};
  j["tensors"] = {{"E", tensor_json(p + l.off_E, l.embed, l.tokens)},
                  {"W", tensor_json(p + l.off_W, 4 * l.hidden, l.embed)},
                  {"U", tensor_json(p + l.off_U, 4 * l.hidden, l.hidden)},
                  {"b", tensor_json(p + l.off_b, 4 * l.hidden, 1)},
                  {"V", tensor_json(p + l.off_V, l.skills, l.hidden)},
                  {"c", tensor_json(p + l.off_c, l.skills, 1)}};
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& r : curve_) curve.push_back(r.to_json());
  j["curve"] = curve;
  return j;
}

DktModel DktModel::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tutorfx-dkt") throw Error(ErrorCode::ChecksumMismatch, "not a dkt checkpoint");
  if (j.value("version", 0) != 1) throw Error(ErrorCode::ChecksumMismatch, "unsupported dkt checkpoint version");
  DktModel m;
  m.cfg_ = DktConfig::from_json(j.at("config"));
  m.vocab_.items = j.at("vocab").at("items").get<std::vector<std::string>>();
  m.vocab_.skills = j.at("vocab").at("skills").get<std::vector<std::string>>();
  m.vocab_.reindex();
  m.layout_ = DktLayout::make(m.cfg_.hidden_dim, m.cfg_.embed_dim, m.vocab_.n_items(), m.vocab_.n_skills());
  const auto& l = m.layout_;
  m.theta_ = VectorXd::Zero(static_cast<Eigen::Index>(l.total));
  double* p = m.theta_.data();
  const auto& t = j.at("tensors");
  read_tensor(t, "E", l.embed, l.tokens, p + l.off_E);
  read_tensor(t, "W", 4 * l.hidden, l.embed, p + l.off_W);
  read_tensor(t, "U", 4 * l.hidden, l.hidden, p + l.off_U);
  read_tensor(t, "b", 4 * l.hidden, 1, p + l.off_b);
  read_tensor(t, "V", l.skills, l.hidden, p + l.off_V);
  read_tensor(t, "c", l.skills, 1, p + l.off_c);
  for (const auto& r : j.at("curve")) {
    EpochRecord rec{r.at("epoch").get<std::size_t>(), r.at("loss").get<double>(), r.at("auc").get<double>(), {}};
    if (r.contains("val_auc") && !r.at("val_auc").is_null()) rec.val_auc = r.at("val_auc").get<double>();
    m.curve_.push_back(rec);
  }
  return m;
}

void DktModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

DktModel DktModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ChecksumMismatch, path.string() + ": " + e.what());
  }
  return from_json(j);
}

bool DktModel::operator==(const DktModel& other) const {
  return to_json() == other.to_json();
}

// ---------------------------------------------------------------------------
// training

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::DegenerateLabels, "AUC needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) pos_rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

double sequences_auc(const DktModel& model, const std::vector<DktSequence>& seqs) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : seqs) {
    const auto p = model.predict(s);
    scores.insert(scores.end(), p.begin(), p.end());
    for (double y : s.labels) labels.push_back(y > 0.5 ? 1 : 0);
  }
  try {
    return roc_auc(scores, labels);
  } catch (const Error&) {
    return 0.5;
  }
}

}  // namespace

DktModel train_dkt(const EventLog& holdout, const DktConfig& cfg) {
  cfg.validate();
  DktModel model = DktModel::initialize(cfg, DktVocab::from_log(holdout));

  std::vector<DktSequence> all;
  for (std::size_t s = 0; s < holdout.students().size(); ++s) {
    auto events = holdout.student_events(s);
    if (events.size() >= 2) all.push_back(model.encode(events));
  }
  if (all.empty()) throw Error(ErrorCode::EmptySelection, "no holdout student has two or more attempts");

  // students, not attempts, go to validation so no sequence is split
  std::vector<DktSequence> seqs, val;
  {
    std::vector<std::size_t> perm(all.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, std::string_view("dkt.validation")));
    std::shuffle(perm.begin(), perm.end(), split_rng);
    auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(all.size())));
    if (n_val < 2 || n_val >= all.size()) n_val = 0;
    std::vector<char> is_val(all.size(), 0);
    for (std::size_t k = 0; k < n_val; ++k) is_val[perm[k]] = 1;
    for (std::size_t k = 0; k < all.size(); ++k) (is_val[k] ? val : seqs).push_back(std::move(all[k]));
  }

  const auto P = static_cast<Eigen::Index>(model.layout().total);
  VectorXd m1 = VectorXd::Zero(P), m2 = VectorXd::Zero(P), grad(P);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t step = 0;
  Rng rng(derive_seed(cfg.seed, std::string_view("dkt.shuffle")));
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  VectorXd best_theta;
  double best_val = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_pred = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<DktSequence> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);
      for (const auto& s : batch) {
        const auto p = model.predict(s);
        scores.insert(scores.end(), p.begin(), p.end());
        for (double y : s.labels) labels.push_back(y > 0.5 ? 1 : 0);
      }
      const double loss = model.loss_and_gradient(batch, grad);
      std::size_t n = 0;
      for (const auto& s : batch) n += s.tokens.size();
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch at " +
                                                  std::to_string(start) + ": loss " + std::to_string(loss));
      }
      loss_sum += loss * static_cast<double>(n);
      n_pred += n;

      const double norm = grad.norm();
      if (norm > cfg.grad_clip) grad *= cfg.grad_clip / norm;
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      model.parameters().array() -=
          cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + adam_eps);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(n_pred);
    try {
      rec.auc = roc_auc(scores, labels);
    } catch (const Error&) {
      rec.auc = 0.5;
    }
    if (!val.empty()) {
      rec.val_auc = sequences_auc(model, val);
      if (*rec.val_auc > best_val) {
        best_val = *rec.val_auc;
        best_theta = model.parameters();
      }
    }
    model.curve().push_back(rec);
  }
  if (best_theta.size() > 0) model.parameters() = best_theta;
  return model;
}

double evaluate_auc(const DktModel& model, const EventLog& eval) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t s = 0; s < eval.students().size(); ++s) {
    const auto seq = model.encode(eval.student_events(s));
    const auto p = model.predict(seq);
    scores.insert(scores.end(), p.begin(), p.end());
    for (double y : seq.labels) labels.push_back(y > 0.5 ? 1 : 0);
  }
  return roc_auc(scores, labels);
}

double grad_check(const DktModel& model, const DktSequence& probe, double eps) {
  const std::span<const DktSequence> batch(&probe, 1);
  VectorXd analytic;
  model.loss_and_gradient(batch, analytic);
  DktModel work = model;
  auto& theta = work.parameters();
  double worst = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double saved = theta(k);
    theta(k) = saved + eps;
    const double up = work.loss(batch);
    theta(k) = saved - eps;
    const double down = work.loss(batch);
    theta(k) = saved;
    const double numeric = (up - down) / (2.0 * eps);
    // floor keeps parameters with near-zero gradient from dominating through roundoff
    const double denom = std::max(std::abs(analytic(k)) + std::abs(numeric), 1e-6);
    worst = std::max(worst, std::abs(analytic(k) - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// features

AnalyticRows extract_features(const DktModel& model, AnalyticRows rows, const EventLog& log,
                              ExtractDiagnostics* diagnostics) {
  // rows grouped by student, in first-appearance order
  std::vector<std::string> students;
  std::map<std::string, std::vector<std::size_t>> by_student;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [it, inserted] = by_student.try_emplace(rows[i].student_id);
    if (inserted) students.push_back(rows[i].student_id);
    it->second.push_back(i);
  }
  std::vector<ExtractDiagnostics> diag(students.size());
  parallel_for(students.size(), [&](std::size_t si) {
    const auto idx = log.find_student(students[si]);
    if (!idx) throw Error(ErrorCode::MissingContext, "row student " + students[si] + " absent from log");
    auto events = log.student_events(*idx);
    const auto seq = model.encode(events, &diag[si].unknown_items, &diag[si].unknown_skills);
    const MatrixXd hs = model.hidden_states(seq);
    std::vector<double> cum_correct(events.size() + 1, 0.0);
    for (std::size_t t = 0; t < events.size(); ++t) cum_correct[t + 1] = cum_correct[t] + seq.labels[t];
    for (std::size_t ri : by_student.at(students[si])) {
      auto& row = rows[ri];
      const auto a = static_cast<std::size_t>(row.anchor_seq);
      if (a >= events.size()) throw Error(ErrorCode::MissingContext, "anchor of " + row.unit_id + " is past the log");
      KnowledgeFeatures f;
      const Eigen::VectorXd h = hs.col(static_cast<Eigen::Index>(a));
      f.h.assign(h.data(), h.data() + h.size());
      f.p_current = model.predict_skill(h, seq.skills[a]);
      const int next_skill = row.y_next_skill ? model.vocab().skill_index(*row.y_next_skill) : seq.skills[a];
      f.p_next = model.predict_skill(h, next_skill);
      f.cum_accuracy = a == 0 ? 0.5 : cum_correct[a] / static_cast<double>(a);
      row.features = std::move(f);
    }
  });
  if (diagnostics) {
    for (const auto& d : diag) {
      diagnostics->unknown_items += d.unknown_items;
      diagnostics->unknown_skills += d.unknown_skills;
    }
  }
  return rows;
}

}  // namespace tfx
