// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/pretrain.hpp"

#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

namespace patchcast {

// ---- masking ----------------------------------------------------------

double dynamic_mask_ratio_from_cv(double cv, double p_base, double beta) {
  return std::clamp(p_base / (1.0 + beta * cv), kMaskRatioMin, kMaskRatioMax);
}

double coefficient_of_variation(const TimeSeriesWindow& raw) {
  double sum = 0.0;
  Index n = 0;
  for (Index t = 0; t < raw.context_len(); ++t)
    for (Index j = 0; j < raw.n_vars(); ++j)
      if (raw.observed(t, j)) {
        sum += raw.values(t, j);
        ++n;
      }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  if (std::abs(mean) < 1e-8) return 0.0;
  double ss = 0.0;
  for (Index t = 0; t < raw.context_len(); ++t)
    for (Index j = 0; j < raw.n_vars(); ++j)
      if (raw.observed(t, j)) ss += (raw.values(t, j) - mean) * (raw.values(t, j) - mean);
  return std::sqrt(ss / static_cast<double>(n)) / std::abs(mean);
}

double dynamic_mask_ratio(const TimeSeriesWindow& raw, double p_base, double beta) {
  return dynamic_mask_ratio_from_cv(coefficient_of_variation(raw), p_base, beta);
}

MaskPlan sample_mask(Index n_tokens, double ratio, std::mt19937_64& rng) {
  if (n_tokens < 1) throw std::invalid_argument("sample_mask: need at least one token");
  MaskPlan plan;
  plan.ratio = ratio;
  const Index count =
      std::min(n_tokens, std::max<Index>(1, static_cast<Index>(std::llround(ratio * static_cast<double>(n_tokens)))));
  std::vector<Index> all(static_cast<std::size_t>(n_tokens));
  std::iota(all.begin(), all.end(), Index{0});
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, n_tokens - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  plan.indices.assign(all.begin(), all.begin() + count);
  std::sort(plan.indices.begin(), plan.indices.end());
  return plan;
}

Matrix apply_mask(const Matrix& tokens, const MaskPlan& plan, const RowVector& mask_token) {
  if (mask_token.cols() != tokens.cols()) throw ShapeError("apply_mask: mask token width does not match tokens");
  Matrix out = tokens;
  for (Index i : plan.indices) {
    if (i < 0 || i >= tokens.rows())
      throw std::out_of_range("apply_mask: index " + std::to_string(i) + " outside [0, " +
                              std::to_string(tokens.rows()) + ")");
    out.row(i) = mask_token;
  }
  return out;
}

double reconstruction_loss(const Matrix& decoded, const Matrix& original, std::span<const Index> masked) {
  if (masked.empty()) throw std::invalid_argument("reconstruction_loss: empty mask set");
  ad::Tape tape(false);
  return ad::masked_row_mse(tape.constant(decoded), tape.constant(original), masked).item();
}

// ---- augmentation -----------------------------------------------------

namespace {

TimeSeriesWindow make_view(const TimeSeriesWindow& w, std::mt19937_64& rng, const AugmentConfig& c) {
  const Index L = w.context_len();
  TimeSeriesWindow v = w;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double frac = c.min_crop >= 1.0 ? 1.0 : c.min_crop + (1.0 - c.min_crop) * unit(rng);
  const Index crop = std::clamp<Index>(static_cast<Index>(std::llround(frac * static_cast<double>(L))), 2, L);
  std::uniform_int_distribution<Index> start_dist(0, L - crop);
  const Index start = crop == L ? 0 : start_dist(rng);
  if (crop != L) {
    for (Index i = 0; i < L; ++i) {
      const double src = static_cast<double>(i * (crop - 1)) / static_cast<double>(L - 1);
      const auto lo = static_cast<Index>(std::floor(src));
      const Index hi = std::min(lo + 1, crop - 1);
      const double t = src - static_cast<double>(lo);
      v.values.row(i) = (1.0 - t) * w.values.row(start + lo) + t * w.values.row(start + hi);
      v.observed.row(i) = w.observed.row(start + static_cast<Index>(std::llround(src)));
    }
  }

  const double s = c.scale_hi > c.scale_lo ? c.scale_lo + (c.scale_hi - c.scale_lo) * unit(rng) : c.scale_lo;
  if (s != 1.0) v.values *= s;
  if (c.jitter_std > 0.0) {
    std::normal_distribution<double> noise(0.0, c.jitter_std);
    for (Index i = 0; i < v.values.size(); ++i) v.values.data()[i] += noise(rng);
  }
  return v;
}

}  // namespace

std::pair<TimeSeriesWindow, TimeSeriesWindow> augment(const TimeSeriesWindow& w, std::uint64_t seed,
                                                      const AugmentConfig& config) {
  if (w.context_len() < 2) throw ShapeError("augment: need at least two timesteps");
  std::mt19937_64 rng(seed);
  TimeSeriesWindow a = make_view(w, rng, config);
  TimeSeriesWindow b = make_view(w, rng, config);
  return {std::move(a), std::move(b)};
}

// ---- contrastive ------------------------------------------------------

ad::Var contrastive_loss(ad::Var z, std::span<const Index> positive, double tau) {
  if (z.rows() < 4 || z.rows() % 2 != 0)
    throw std::invalid_argument("contrastive_loss: need 2B rows with B >= 2, got " + std::to_string(z.rows()));
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  ad::Var zn = ad::l2_normalize_rows(z);
  ad::Var logits = ad::scale(ad::matmul_nt(zn, zn), 1.0 / tau);
  return ad::info_nce(logits, positive);
}

double contrastive_loss(const Matrix& z, std::span<const Index> positive, double tau) {
  ad::Tape tape(false);
  return contrastive_loss(tape.constant(z), positive, tau).item();
}

std::vector<Index> two_view_pairing(Index batch) {
  std::vector<Index> p(static_cast<std::size_t>(2 * batch));
  for (Index i = 0; i < batch; ++i) {
    p[static_cast<std::size_t>(i)] = i + batch;
    p[static_cast<std::size_t>(i + batch)] = i;
  }
  return p;
}

// ---- teachers ---------------------------------------------------------

const char* to_string(TeacherKind k) {
  return k == TeacherKind::seasonal_naive ? "seasonal_naive" : "linear_ar";
}

Matrix TeacherModel::forecast(const Matrix& context, Index horizon) const {
  const Index L = context.rows();
  Matrix out(horizon, context.cols());
  if (kind == TeacherKind::seasonal_naive) {
    for (Index h = 0; h < horizon; ++h) {
      if (period > L) {
        out.row(h) = context.row(L - 1);
      } else {
        out.row(h) = context.row(L - period + (h % period));
      }
    }
    return out;
  }
  const auto p = static_cast<Index>(ar_coeffs.size());
  for (Index j = 0; j < context.cols(); ++j) {
    std::vector<double> hist;  // oldest first
    for (Index t = std::max<Index>(0, L - p); t < L; ++t) hist.push_back(context(t, j));
    while (static_cast<Index>(hist.size()) < p) hist.insert(hist.begin(), hist.front());
    for (Index h = 0; h < horizon; ++h) {
      double x = intercept;
      for (Index i = 0; i < p; ++i) x += ar_coeffs[static_cast<std::size_t>(i)] * hist[hist.size() - 1 - static_cast<std::size_t>(i)];
      out(h, j) = x;
      hist.push_back(x);
    }
  }
  return out;
}

TeacherModel fit_teacher(TeacherKind kind, std::span<const Series> corpus, const TeacherFitConfig& config) {
  if (corpus.empty()) throw DataError(DataErrc::invalid_argument, "fit_teacher: empty corpus");
  TeacherModel m;
  m.kind = kind;
  m.domain = corpus.front().domain;

  if (kind == TeacherKind::seasonal_naive) {
    if (config.min_lag < 1 || config.max_lag < config.min_lag)
      throw DataError(DataErrc::invalid_argument, "fit_teacher: invalid lag range");
    std::vector<double> acf(static_cast<std::size_t>(config.max_lag + 1), 0.0);
    std::size_t used = 0;
    for (const auto& s : corpus)
      for (Index j = 0; j < s.n_vars(); ++j) {
        if (s.length() <= config.max_lag) continue;
        const Vector x = s.values.col(j);
        const double mean = x.mean();
        const Vector c = x.array() - mean;
        const double denom = c.squaredNorm();
        if (!(denom > 0.0)) continue;
        for (Index k = 1; k <= config.max_lag; ++k)
          acf[static_cast<std::size_t>(k)] += c.head(x.size() - k).dot(c.tail(x.size() - k)) / denom;
        ++used;
      }
    if (used == 0)
      throw DataError(DataErrc::invalid_argument,
                      "fit_teacher: corpus is shorter than max lag " + std::to_string(config.max_lag));
    // Smooth series correlate strongly at short lags; search past the first
    // nonpositive autocorrelation when there is one.
    Index start = config.min_lag;
    for (Index k = 1; k <= config.max_lag; ++k)
      if (acf[static_cast<std::size_t>(k)] <= 0.0) {
        start = std::max(start, k);
        break;
      }
    Index best = start;
    for (Index k = start; k <= config.max_lag; ++k)
      if (acf[static_cast<std::size_t>(k)] > acf[static_cast<std::size_t>(best)]) best = k;
    m.period = best;
    return m;
  }

  const Index p = config.ar_order;
  if (p < 1) throw DataError(DataErrc::invalid_argument, "fit_teacher: AR order must be positive");
  Matrix gram = Matrix::Zero(p + 1, p + 1);
  Vector rhs = Vector::Zero(p + 1);
  Vector row(p + 1);
  std::size_t n_rows = 0;
  for (const auto& s : corpus)
    for (Index j = 0; j < s.n_vars(); ++j)
      for (Index t = p; t < s.length(); ++t) {
        row(0) = 1.0;
        for (Index i = 1; i <= p; ++i) row(i) = s.values(t - i, j);
        gram.noalias() += row * row.transpose();
        rhs += row * s.values(t, j);
        ++n_rows;
      }
  if (n_rows == 0)
    throw DataError(DataErrc::invalid_argument, "fit_teacher: corpus is shorter than AR order " + std::to_string(p));
  for (Index i = 1; i <= p; ++i) gram(i, i) += config.ridge * static_cast<double>(n_rows);
  const Vector beta = gram.ldlt().solve(rhs);
  m.intercept = beta(0);
  m.ar_coeffs.assign(beta.data() + 1, beta.data() + beta.size());
  return m;
}

std::vector<const TeacherModel*> TeacherSet::for_domain(const std::string& domain) const {
  std::vector<const TeacherModel*> out;
  for (const auto& t : teachers)
    if (t.domain == domain) out.push_back(&t);
  return out;
}

TeacherSet fit_teachers(std::span<const Series> corpus, const TeacherFitConfig& config) {
  std::map<std::string, std::vector<Series>> by_domain;
  for (const auto& s : corpus) by_domain[s.domain].push_back(s);
  TeacherSet set;
  for (const auto& [domain, series] : by_domain) {
    for (TeacherKind kind : {TeacherKind::seasonal_naive, TeacherKind::linear_ar}) {
      TeacherModel t = fit_teacher(kind, series, config);
      t.weight = 0.5;
      set.teachers.push_back(std::move(t));
    }
  }
  return set;
}

namespace {

void check_weights(std::span<const Matrix> teachers, std::span<const double> weights) {
  if (teachers.size() != weights.size() || teachers.empty())
    throw std::invalid_argument("distill_loss: need one weight per teacher");
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("distill_loss: teacher weights sum to " + format_double(sum) + ", expected 1");
}

}  // namespace

ad::Var distill_loss(ad::Var student, std::span<const Matrix> teachers, std::span<const double> weights) {
  check_weights(teachers, weights);
  ad::Tape& tape = *student.tape();
  ad::Var total;
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    if (teachers[k].rows() != student.rows() || teachers[k].cols() != student.cols())
      throw ShapeError("distill_loss: teacher " + std::to_string(k) + " horizon/variables do not match the student");
    ad::Var term = ad::scale(ad::mse(student, tape.constant(teachers[k])), 0.5 * weights[k]);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

double distill_loss(const Matrix& student, std::span<const Matrix> teachers, std::span<const double> weights) {
  ad::Tape tape(false);
  return distill_loss(tape.constant(student), teachers, weights).item();
}

// ---- training ---------------------------------------------------------

void PretrainConfig::write(Config& c) const {
  c.set("pretrain.lambda_con", lambda_con);
  c.set("pretrain.lambda_distill", lambda_distill);
  c.set("pretrain.tau", tau);
  c.set("pretrain.batch_size", static_cast<std::int64_t>(batch_size));
  c.set("pretrain.steps", static_cast<std::int64_t>(steps));
  c.set("pretrain.seed", seed);
  c.set("pretrain.peak_lr", peak_lr);
  c.set("pretrain.warmup_frac", warmup_frac);
  c.set("pretrain.grad_clip", grad_clip);
  c.set("pretrain.weight_decay", adamw.weight_decay);
  c.set("pretrain.jitter_std", augment.jitter_std);
  c.set("pretrain.scale_lo", augment.scale_lo);
  c.set("pretrain.scale_hi", augment.scale_hi);
  c.set("pretrain.min_crop", augment.min_crop);
  c.set("pretrain.p_base", p_base);
  c.set("pretrain.mask_beta", mask_beta);
}

PretrainConfig PretrainConfig::read(const Config& c) {
  PretrainConfig p;
  p.lambda_con = c.get_double("pretrain.lambda_con", p.lambda_con);
  p.lambda_distill = c.get_double("pretrain.lambda_distill", p.lambda_distill);
  p.tau = c.get_double("pretrain.tau", p.tau);
  p.batch_size = c.get_int("pretrain.batch_size", p.batch_size);
  p.steps = c.get_int("pretrain.steps", p.steps);
  p.seed = c.get_uint("pretrain.seed", p.seed);
  p.peak_lr = c.get_double("pretrain.peak_lr", p.peak_lr);
  p.warmup_frac = c.get_double("pretrain.warmup_frac", p.warmup_frac);
  p.grad_clip = c.get_double("pretrain.grad_clip", p.grad_clip);
  p.adamw.weight_decay = c.get_double("pretrain.weight_decay", p.adamw.weight_decay);
  p.augment.jitter_std = c.get_double("pretrain.jitter_std", p.augment.jitter_std);
  p.augment.scale_lo = c.get_double("pretrain.scale_lo", p.augment.scale_lo);
  p.augment.scale_hi = c.get_double("pretrain.scale_hi", p.augment.scale_hi);
  p.augment.min_crop = c.get_double("pretrain.min_crop", p.augment.min_crop);
  p.p_base = c.get_double("pretrain.p_base", p.p_base);
  p.mask_beta = c.get_double("pretrain.mask_beta", p.mask_beta);
  if (!(p.tau > 0.0) || p.lambda_con < 0.0 || p.lambda_distill < 0.0 || p.batch_size < 1 || p.steps < 0)
    throw DataError(DataErrc::invalid_argument, "pretrain config: need tau > 0, lambdas >= 0, batch >= 1, steps >= 0");
  return p;
}

LossReport pretrain_losses(const PatchModel& model, std::span<const TimeSeriesWindow> batch,
                           const PretrainConfig& config, const TeacherSet& teachers, std::uint64_t step_seed,
                           Gradients* grads) {
  const auto B = static_cast<Index>(batch.size());
  if (B < 1) throw std::invalid_argument("pretrain: empty batch");
  if (config.lambda_con > 0.0 && B < 2) throw std::invalid_argument("pretrain: contrastive term needs batch >= 2");

  const ModelConfig& mc = model.config();
  ad::Tape tape(grads != nullptr);
  std::vector<ad::Var> rec_terms, distill_terms, view1, view2;
  double ratio_sum = 0.0;

  for (Index b = 0; b < B; ++b) {
    const TimeSeriesWindow& raw = batch[static_cast<std::size_t>(b)];
    std::mt19937_64 rng(mix_seed(step_seed, static_cast<std::uint64_t>(b)));
    const double ratio = dynamic_mask_ratio(raw, config.p_base, config.mask_beta);
    ratio_sum += ratio;
    const TimeSeriesWindow norm = normalize_window(raw);

    const MaskPlan plan = sample_mask(mc.n_tokens(), ratio, rng);
    ad::Var encoded = model.encode(tape, model.tokens(tape, norm.values, plan.indices));
    const PatchGrid grid = patchify(norm.values, mc.scales.front());
    rec_terms.push_back(ad::masked_row_mse(model.decode(tape, encoded), tape.constant(grid.patches), plan.indices));

    if (B >= 2) {
      const auto [a, v] = augment(norm, rng(), config.augment);
      view1.push_back(model.project(tape, model.encode(tape, model.tokens(tape, a.values))));
      view2.push_back(model.project(tape, model.encode(tape, model.tokens(tape, v.values))));
    }

    const auto domain_teachers = teachers.for_domain(raw.domain);
    if (!domain_teachers.empty()) {
      std::vector<Matrix> targets;
      std::vector<double> weights;
      for (const TeacherModel* t : domain_teachers) {
        targets.push_back(normalize(t->forecast(raw.values, mc.horizon), *norm.norm_state));
        weights.push_back(t->weight);
      }
      ad::Var student = model.point_head(tape, model.encode(tape, model.tokens(tape, norm.values)));
      distill_terms.push_back(distill_loss(student, targets, weights));
    }
  }

  auto mean_of = [&](std::vector<ad::Var>& terms) -> ad::Var {
    ad::Var sum = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(sum, terms[i]);
    return ad::scale(sum, 1.0 / static_cast<double>(terms.size()));
  };

  ad::Var total = mean_of(rec_terms);
  LossReport report;
  report.rec = total.item();
  report.mask_ratio_mean = ratio_sum / static_cast<double>(B);

  if (!view1.empty()) {
    std::vector<ad::Var> rows = view1;
    rows.insert(rows.end(), view2.begin(), view2.end());
    const auto pairing = two_view_pairing(B);
    ad::Var con = contrastive_loss(ad::concat_rows(rows), pairing, config.tau);
    report.con = con.item();
    if (config.lambda_con > 0.0) total = ad::add(total, ad::scale(con, config.lambda_con));
  }
  if (!distill_terms.empty()) {
    ad::Var distill = mean_of(distill_terms);
    report.distill = distill.item();
    if (config.lambda_distill > 0.0) total = ad::add(total, ad::scale(distill, config.lambda_distill));
  }
  report.total = total.item();

  if (grads) {
    *grads = zero_gradients(model.params());
    if (!std::isfinite(report.total)) return report;
    tape.backward(total);
    tape.accumulate(*grads);
    report.grad_norm = global_norm(*grads);
  }
  return report;
}

Pretrainer::Pretrainer(PatchModel& model, PretrainConfig config, TeacherSet teachers)
    : model_(model), config_(std::move(config)), teachers_(std::move(teachers)), optimizer_(model.params(), config_.adamw) {}

LossReport Pretrainer::step(std::span<const TimeSeriesWindow> batch) {
  Gradients grads;
  LossReport r = pretrain_losses(model_, batch, config_, teachers_, mix_seed(config_.seed, static_cast<std::uint64_t>(step_)), &grads);
  r.step = step_;
  if (!std::isfinite(r.total))
    throw NumericError("pretrain: non-finite loss at step " + std::to_string(step_) + " (rec=" + format_double(r.rec) +
                       ", con=" + format_double(r.con) + ", distill=" + format_double(r.distill) + ")");
  r.grad_norm = clip_global_norm(grads, config_.grad_clip);
  r.lr = warmup_cosine_lr(step_, config_.steps, config_.peak_lr, config_.warmup_frac);
  optimizer_.step(model_.params(), grads, r.lr);
  model_.params().round_to_f32(true);
  ++step_;
  return r;
}

void write_loss_log_header(std::ostream& out) {
  out << "step,l_rec,l_con,l_distill,l_total,grad_norm,mask_ratio_mean,lr\n";
}

void write_loss_log_row(std::ostream& out, const LossReport& r) {
  out << r.step << ',' << format_double(r.rec) << ',' << format_double(r.con) << ',' << format_double(r.distill) << ','
      << format_double(r.total) << ',' << format_double(r.grad_norm) << ',' << format_double(r.mask_ratio_mean) << ','
      << format_double(r.lr) << '\n';
}

std::vector<LossReport> pretrain(PatchModel& model, std::span<const TimeSeriesWindow> corpus,
                                 const PretrainConfig& config, const TeacherSet& teachers, std::ostream* log) {
  std::vector<LossReport> reports;
  if (log) write_loss_log_header(*log);
  if (config.steps == 0) return reports;
  if (corpus.empty()) throw DataError(DataErrc::invalid_argument, "pretrain: empty corpus");
  Pretrainer trainer(model, config, teachers);
  std::mt19937_64 rng(mix_seed(config.seed, 0x5eed));
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<TimeSeriesWindow> batch(static_cast<std::size_t>(config.batch_size));
  for (long s = 0; s < config.steps; ++s) {
    for (auto& w : batch) w = corpus[pick(rng)];
    reports.push_back(trainer.step(batch));
    if (log) write_loss_log_row(*log, reports.back());
  }
  return reports;
}

}  // namespace patchcast
