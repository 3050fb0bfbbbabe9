#include "piqa/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "piqa/error.hpp"

namespace piqa::metrics {

double FourParamLogistic::operator()(double x) const noexcept {
  if (fallback) return intercept + slope * x;
  return beta2 + (beta1 - beta2) / (1.0 + std::exp(-(x - beta3) / std::abs(beta4)));
}

std::vector<double> FourParamLogistic::apply(std::span<const double> x) const {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [this](double v) { return (*this)(v); });
  return out;
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(Errc::LengthMismatch,
                "lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.size() < 2) throw Error(Errc::DegenerateInput, "need at least two samples");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error(Errc::NonFiniteInput, "non-finite sample");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

double stddev_of(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() > 1 ? v.size() - 1 : 1));
}

}  // namespace

double exact_sum(std::span<const double> values) {
  // Shewchuk partials with round-half-even on the final step, as in Python's math.fsum.
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(Errc::DegenerateInput, "constant vector has no correlation");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double srcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  const auto rp = average_ranks(pred);
  const auto rg = average_ranks(gt);
  return pearson(rp, rg);
}

namespace {

std::int64_t tied_pairs(std::span<const double> sorted_values) {
  std::int64_t ties = 0;
  std::size_t i = 0;
  while (i < sorted_values.size()) {
    std::size_t j = i + 1;
    while (j < sorted_values.size() && sorted_values[j] == sorted_values[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    ties += t * (t - 1) / 2;
    i = j;
  }
  return ties;
}

// Sorts v ascending and returns the number of strictly inverted pairs.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double krcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred[a] < pred[b] || (pred[a] == pred[b] && gt[a] < gt[b]);
  });

  std::vector<double> xs(n);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = pred[order[i]];
    ys[i] = gt[order[i]];
  }
  const std::int64_t total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t ties_x = tied_pairs(xs);
  std::int64_t ties_xy = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
      const auto t = static_cast<std::int64_t>(j - i);
      ties_xy += t * (t - 1) / 2;
      i = j;
    }
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = merge_count(ys, buf, 0, n);
  const std::int64_t ties_y = tied_pairs(ys);

  const std::int64_t nx = total - ties_x;
  const std::int64_t ny = total - ties_y;
  if (nx == 0 || ny == 0) throw Error(Errc::DegenerateInput, "constant vector has no rank correlation");
  const std::int64_t concordant_minus_discordant = total - ties_x - ties_y + ties_xy - 2 * swaps;
  return std::clamp(static_cast<double>(concordant_minus_discordant) /
                        std::sqrt(static_cast<double>(nx) * static_cast<double>(ny)),
                    -1.0, 1.0);
}

namespace {

struct AffineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double sse = 0.0;
};

AffineFit affine_fit(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error(Errc::DegenerateInput, "constant predictions cannot be mapped");
  AffineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = f.intercept + f.slope * x[i] - y[i];
    f.sse += r * r;
  }
  return f;
}

// Parameters (b1, b2, b3, log s) on standardised data.
using Params = Eigen::Vector4d;

double logistic_value(const Params& p, double x) {
  const double s = std::exp(p(3));
  return p(1) + (p(0) - p(1)) / (1.0 + std::exp(-(x - p(2)) / s));
}

double sse_of(const Params& p, std::span<const double> x, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = logistic_value(p, x[i]) - y[i];
    sse += r * r;
  }
  return sse;
}

Params levenberg_marquardt(Params p, std::span<const double> x, std::span<const double> y) {
  constexpr int kMaxIterations = 400;
  double lambda = 1e-3;
  double sse = sse_of(p, x, y);
  for (int iter = 0; iter < kMaxIterations && std::isfinite(sse); ++iter) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    const double s = std::exp(p(3));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = (x[i] - p(2)) / s;
      const double sig = 1.0 / (1.0 + std::exp(-u));
      const double slope = (p(0) - p(1)) * sig * (1.0 - sig);
      Eigen::Vector4d j(sig, 1.0 - sig, -slope / s, -slope * u);
      const double r = p(1) + (p(0) - p(1)) * sig - y[i];
      jtj.noalias() += j * j.transpose();
      jtr.noalias() += j * r;
    }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix4d a = jtj;
      for (int k = 0; k < 4; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Eigen::Vector4d step = a.ldlt().solve(-jtr);
      const Params trial = p + step;
      const double trial_sse = sse_of(trial, x, y);
      if (std::isfinite(trial_sse) && trial_sse < sse) {
        const double gain = sse - trial_sse;
        p = trial;
        sse = trial_sse;
        lambda = std::max(lambda * 0.1, 1e-12);
        improved = true;
        if (gain <= 1e-15 * (sse + 1e-300) || step.norm() < 1e-14) return p;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return p;
}

}  // namespace

FourParamLogistic fit_logistic(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  const AffineFit linear = affine_fit(pred, gt);
  auto as_fallback = [&](std::string note) {
    FourParamLogistic f;
    f.fallback = true;
    f.slope = linear.slope;
    f.intercept = linear.intercept;
    f.note = std::move(note);
    return f;
  };
  if (pred.size() < kMinLogisticSamples) return as_fallback("fewer than 5 samples");

  // Standardise both axes for conditioning.
  const double mx = mean_of(pred);
  const double sx = stddev_of(pred);
  const double my = mean_of(gt);
  const double sy = stddev_of(gt);
  if (sy == 0.0) throw Error(Errc::DegenerateInput, "constant ground truth cannot be mapped");
  std::vector<double> x(pred.size());
  std::vector<double> y(gt.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = (pred[i] - mx) / sx;
    y[i] = (gt[i] - my) / sy;
  }

  const double b1 = (*std::max_element(y.begin(), y.end()));
  const double b2 = (*std::min_element(y.begin(), y.end()));
  const double b3 = (median_of(pred) - mx) / sx;
  const double b4 = stddev_of(pred) / 4.0 / sx;  // 0.25 in standardised units

  Params best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (double scale : {1.0, 4.0, 0.25, 16.0}) {
    const Params fitted = levenberg_marquardt(Params(b1, b2, b3, std::log(b4 * scale)), x, y);
    const double sse = sse_of(fitted, x, y);
    if (std::isfinite(sse) && sse < best_sse) {
      best = fitted;
      best_sse = sse;
    }
  }
  if (!std::isfinite(best_sse)) return as_fallback("logistic fit diverged");

  // Re-solve the two linear parameters exactly for the fitted centre and width.
  {
    const double s = std::exp(best(3));
    std::vector<double> sig(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sig[i] = 1.0 / (1.0 + std::exp(-(x[i] - best(2)) / s));
    double ms = mean_of(sig);
    double sss = 0.0;
    double ssy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sss += (sig[i] - ms) * (sig[i] - ms);
      ssy += (sig[i] - ms) * y[i];
    }
    if (sss > 0.0) {
      const double c = ssy / sss;  // b1 - b2
      const double a = mean_of(y) - c * ms;  // b2
      const Params polished(a + c, a, best(2), best(3));
      const double sse = sse_of(polished, x, y);
      if (sse <= best_sse) {
        best = polished;
        best_sse = sse;
      }
    }
  }

  FourParamLogistic f;
  f.beta1 = my + sy * best(0);
  f.beta2 = my + sy * best(1);
  f.beta3 = mx + sx * best(2);
  f.beta4 = sx * std::exp(best(3));
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = f(pred[i]) - gt[i];
    sse += r * r;
  }
  if (!std::isfinite(sse) || !std::isfinite(f.beta1) || !std::isfinite(f.beta2) || !std::isfinite(f.beta4) ||
      f.beta4 == 0.0)
    return as_fallback("logistic fit diverged");
  if (sse > linear.sse) return as_fallback("logistic fit worse than affine map");
  return f;
}

MappedPrediction map_predictions(std::span<const double> pred, std::span<const double> gt) {
  MappedPrediction m;
  m.fit = fit_logistic(pred, gt);
  m.mapped = m.fit.apply(pred);
  return m;
}

double plcc(std::span<const double> pred, std::span<const double> gt) {
  const auto m = map_predictions(pred, gt);
  return pearson(m.mapped, gt);
}

double mae(std::span<const double> pred, std::span<const double> gt) {
  const auto m = map_predictions(pred, gt);
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) total += std::abs(m.mapped[i] - gt[i]);
  return total / static_cast<double>(gt.size());
}

MetricReport evaluate_grouped(std::span<const ScoredRecord> records, std::size_t min_scene_size) {
  // Canonical (prediction, gt) order per scene so record order cannot move a bit.
  std::map<std::string, std::vector<std::pair<double, double>>> grouped;
  for (const auto& r : records) grouped[r.scene_id].emplace_back(r.prediction, r.ground_truth);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> scenes;
  for (auto& [scene, items] : grouped) {
    std::sort(items.begin(), items.end());
    auto& [pred, gt] = scenes[scene];
    for (const auto& [p, g] : items) {
      pred.push_back(p);
      gt.push_back(g);
    }
  }

  MetricReport report;
  report.min_scene_size = min_scene_size;
  const std::size_t floor_size = std::max<std::size_t>(2, min_scene_size);
  for (const auto& [scene, data] : scenes) {
    const auto& [pred, gt] = data;
    SceneMetrics m;
    m.scene_id = scene;
    m.n = pred.size();
    if (m.n < floor_size) {
      m.status = SceneStatus::TooSmall;
      m.note = "fewer than " + std::to_string(floor_size) + " records";
    } else {
      try {
        m.srcc = srcc(pred, gt);
        m.krcc = krcc(pred, gt);
        const auto mapped = map_predictions(pred, gt);
        m.fit = mapped.fit;
        m.plcc = pearson(mapped.mapped, gt);
        double total = 0.0;
        for (std::size_t i = 0; i < gt.size(); ++i) total += std::abs(mapped.mapped[i] - gt[i]);
        m.mae = total / static_cast<double>(gt.size());
      } catch (const Error& e) {
        if (e.code() != Errc::DegenerateInput) throw;
        m = SceneMetrics{scene, pred.size(), SceneStatus::Degenerate, 0, 0, 0, 0, {}, e.what()};
      }
    }
    report.per_scene.push_back(std::move(m));
  }

  std::vector<double> srcc_v, plcc_v, krcc_v, mae_v;
  for (const auto& m : report.per_scene) {
    if (m.status != SceneStatus::Included) {
      ++report.scenes_excluded;
      continue;
    }
    ++report.scenes_used;
    srcc_v.push_back(m.srcc);
    plcc_v.push_back(m.plcc);
    krcc_v.push_back(m.krcc);
    mae_v.push_back(m.mae);
  }
  if (report.scenes_used == 0) throw Error(Errc::NoQualifyingScene, "no scene qualifies for evaluation");
  const double n = static_cast<double>(report.scenes_used);
  report.averaged.srcc = exact_sum(srcc_v) / n;
  report.averaged.plcc = exact_sum(plcc_v) / n;
  report.averaged.krcc = exact_sum(krcc_v) / n;
  report.averaged.mae = exact_sum(mae_v) / n;
  return report;
}

namespace {

const char* status_name(SceneStatus s) {
  switch (s) {
    case SceneStatus::Included: return "included";
    case SceneStatus::TooSmall: return "too_small";
    case SceneStatus::Degenerate: return "degenerate";
  }
  return "included";
}

SceneStatus parse_status(const std::string& s) {
  if (s == "included") return SceneStatus::Included;
  if (s == "too_small") return SceneStatus::TooSmall;
  if (s == "degenerate") return SceneStatus::Degenerate;
  throw Error(Errc::ConfigError, "unknown scene status '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& m : report.per_scene) {
    nlohmann::json fit{{"beta1", m.fit.beta1}, {"beta2", m.fit.beta2}, {"beta3", m.fit.beta3},
                       {"beta4", m.fit.beta4}, {"fallback", m.fit.fallback}, {"slope", m.fit.slope},
                       {"intercept", m.fit.intercept}, {"note", m.fit.note}};
    scenes.push_back({{"scene_id", m.scene_id},
                      {"n", m.n},
                      {"status", status_name(m.status)},
                      {"srcc", m.srcc},
                      {"plcc", m.plcc},
                      {"krcc", m.krcc},
                      {"mae", m.mae},
                      {"fit", fit},
                      {"note", m.note}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"attribute", report.attribute},
          {"min_scene_size", report.min_scene_size},
          {"scenes_used", report.scenes_used},
          {"scenes_excluded", report.scenes_excluded},
          {"averaged",
           {{"srcc", report.averaged.srcc},
            {"plcc", report.averaged.plcc},
            {"krcc", report.averaged.krcc},
            {"mae", report.averaged.mae}}},
          {"per_scene", scenes}};
}

MetricReport report_from_json(const nlohmann::json& doc) {
  if (doc.at("schema_version").get<int>() != kReportSchemaVersion)
    throw Error(Errc::VersionMismatch, "unsupported report schema version");
  MetricReport r;
  r.attribute = doc.at("attribute").get<std::string>();
  r.min_scene_size = doc.at("min_scene_size").get<std::size_t>();
  r.scenes_used = doc.at("scenes_used").get<std::size_t>();
  r.scenes_excluded = doc.at("scenes_excluded").get<std::size_t>();
  const auto& avg = doc.at("averaged");
  r.averaged = {avg.at("srcc").get<double>(), avg.at("plcc").get<double>(), avg.at("krcc").get<double>(),
                avg.at("mae").get<double>()};
  for (const auto& s : doc.at("per_scene")) {
    SceneMetrics m;
    m.scene_id = s.at("scene_id").get<std::string>();
    m.n = s.at("n").get<std::size_t>();
    m.status = parse_status(s.at("status").get<std::string>());
    m.srcc = s.at("srcc").get<double>();
    m.plcc = s.at("plcc").get<double>();
    m.krcc = s.at("krcc").get<double>();
    m.mae = s.at("mae").get<double>();
    m.note = s.at("note").get<std::string>();
    const auto& fit = s.at("fit");
    m.fit.beta1 = fit.at("beta1").get<double>();
    m.fit.beta2 = fit.at("beta2").get<double>();
    m.fit.beta3 = fit.at("beta3").get<double>();
    m.fit.beta4 = fit.at("beta4").get<double>();
    m.fit.fallback = fit.at("fallback").get<bool>();
    m.fit.slope = fit.at("slope").get<double>();
    m.fit.intercept = fit.at("intercept").get<double>();
    m.fit.note = fit.at("note").get<std::string>();
    r.per_scene.push_back(std::move(m));
  }
  return r;
}

std::vector<std::string> validate_report_json(const nlohmann::json& doc) {
  std::vector<std::string> problems;
  auto need = [&](const nlohmann::json& obj, const char* key, auto check, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(where + key + " missing");
      return;
    }
    if (!check(obj.at(key))) problems.push_back(where + key + " has the wrong type or range");
  };
  auto is_int = [](const nlohmann::json& v) { return v.is_number_integer(); };
  auto is_str = [](const nlohmann::json& v) { return v.is_string(); };
  auto is_corr = [](const nlohmann::json& v) {
    return v.is_number() && v.get<double>() >= -1.0 && v.get<double>() <= 1.0;
  };
  auto is_nonneg = [](const nlohmann::json& v) { return v.is_number() && v.get<double>() >= 0.0; };

  need(doc, "schema_version", [](const nlohmann::json& v) { return v == kReportSchemaVersion; }, "");
  need(doc, "attribute", is_str, "");
  need(doc, "min_scene_size", is_int, "");
  need(doc, "scenes_used", is_int, "");
  need(doc, "scenes_excluded", is_int, "");
  need(doc, "averaged", [](const nlohmann::json& v) { return v.is_object(); }, "");
  if (doc.contains("averaged")) {
    const auto& a = doc.at("averaged");
    need(a, "srcc", is_corr, "averaged.");
    need(a, "plcc", is_corr, "averaged.");
    need(a, "krcc", is_corr, "averaged.");
    need(a, "mae", is_nonneg, "averaged.");
  }
  if (!doc.contains("per_scene") || !doc.at("per_scene").is_array()) {
    problems.emplace_back("per_scene missing");
    return problems;
  }
  for (std::size_t i = 0; i < doc.at("per_scene").size(); ++i) {
    const auto& s = doc.at("per_scene")[i];
    const std::string where = "per_scene[" + std::to_string(i) + "].";
    need(s, "scene_id", is_str, where);
    need(s, "n", is_int, where);
    need(s, "status", [](const nlohmann::json& v) {
      return v.is_string() && (v == "included" || v == "too_small" || v == "degenerate");
    }, where);
    need(s, "srcc", is_corr, where);
    need(s, "plcc", is_corr, where);
    need(s, "krcc", is_corr, where);
    need(s, "mae", is_nonneg, where);
    need(s, "fit", [](const nlohmann::json& v) { return v.is_object(); }, where);
  }
  return problems;
}

}  // namespace piqa::metrics
