#include "hiersoc/metrics.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace hiersoc {

void ErrorReport::validate() const {
  auto check = [this](const std::vector<double>& v) {
    if (v.size() != horizons_ms.size()) throw ShapeError("error report: column count mismatch");
    for (double x : v)
      if (!(x >= 0.0) || !std::isfinite(x)) throw NumericError("error report: invalid value");
  };
  for (std::size_t i = 1; i < horizons_ms.size(); ++i)
    if (!(horizons_ms[i] > horizons_ms[i - 1]))
      throw ConfigError("error report: horizons must be ascending");
  check(global_mm);
  check(local_mm);
  check(root_mm);
}

namespace {

void check_pair(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame) {
  if (pred.persons() != gt.persons() || pred.joints() != gt.joints())
    throw ShapeError("metric: clip shapes do not match");
  if (at_frame < 0 || at_frame >= pred.frames() || at_frame >= gt.frames())
    throw ShapeError("metric: frame index out of range");
}

}  // namespace

double mpjpe(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame) {
  check_pair(pred, gt, at_frame);
  double sum = 0.0;
  for (int p = 0; p < pred.persons(); ++p) {
    const auto a = pred.frame(p, at_frame);
    const auto b = gt.frame(p, at_frame);
    for (int j = 0; j < pred.joints(); ++j) sum += (a.row(j) - b.row(j)).norm();
  }
  return sum / (static_cast<double>(pred.persons()) * pred.joints());
}

double local_error(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame) {
  check_pair(pred, gt, at_frame);
  double sum = 0.0;
  for (int p = 0; p < pred.persons(); ++p) {
    const Pose a = root_align(pred.frame(p, at_frame), pred.skeleton());
    const Pose b = root_align(gt.frame(p, at_frame), gt.skeleton());
    for (int j = 0; j < pred.joints(); ++j) sum += (a.row(j) - b.row(j)).norm();
  }
  return sum / (static_cast<double>(pred.persons()) * pred.joints());
}

double root_error(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame) {
  check_pair(pred, gt, at_frame);
  const int r_pred = pred.skeleton().root_index;
  const int r_gt = gt.skeleton().root_index;
  double sum = 0.0;
  for (int p = 0; p < pred.persons(); ++p)
    sum += (pred.frame(p, at_frame).row(r_pred) - gt.frame(p, at_frame).row(r_gt)).norm();
  return sum / pred.persons();
}

int horizon_frame(double ms, double fps) {
  return static_cast<int>(std::floor(ms * fps / 1000.0 + 0.5));
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* cap = std::getenv("HIERSOC_THREADS")) {
    const int c = std::atoi(cap);
    if (c >= 1 && c < n) n = c;
  }
  return n;
}

ErrorReport evaluate(const PredictorFn& predictor, const std::vector<MultiPersonClip>& clips,
                     const MdpConfig& mdp, const std::vector<double>& horizons_ms, int stride,
                     int threads) {
  mdp.validate();
  if (clips.empty()) throw DataError("evaluate: no clips");
  const int T = mdp.history_frames;
  const int Tp = mdp.future_frames;
  const double fps = clips.front().skeleton().fps;
  const int eff_stride = stride > 0 ? stride : Tp;

  std::vector<int> frames;
  frames.reserve(horizons_ms.size());
  for (double ms : horizons_ms) {
    const int h = horizon_frame(ms, fps);
    if (h < 1 || h > Tp) throw ConfigError("evaluate: horizon beyond the predicted range");
    frames.push_back(h);
  }

  struct Window {
    const MultiPersonClip* clip;
    int start;
  };
  std::vector<Window> windows;
  for (const MultiPersonClip& c : clips) {
    if (c.skeleton().fps != fps) throw DataError("evaluate: clips disagree on fps");
    for (int s = 0; s + T + Tp <= c.frames(); s += eff_stride) windows.push_back({&c, s});
  }
  if (windows.empty()) throw DataError("evaluate: no window long enough for T + T'");

  const std::size_t H = frames.size();
  std::vector<std::vector<double>> g(windows.size()), l(windows.size()), r(windows.size());
  auto run = [&](std::size_t i) {
    const Window& w = windows[i];
    MultiPersonClip history = w.clip->slice_frames(w.start, T);
    MultiPersonClip gt = w.clip->slice_frames(w.start + T, Tp);
    MultiPersonClip pred = predictor(history);
    if (pred.frames() < Tp) throw ShapeError("evaluate: predictor returned too few frames");
    g[i].resize(H);
    l[i].resize(H);
    r[i].resize(H);
    for (std::size_t k = 0; k < H; ++k) {
      const int f = frames[k] - 1;
      g[i][k] = mpjpe(pred, gt, f);
      l[i][k] = local_error(pred, gt, f);
      r[i][k] = root_error(pred, gt, f);
    }
  };

  const int workers = resolve_threads(threads);
  if (workers <= 1 || windows.size() <= 1) {
    for (std::size_t i = 0; i < windows.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= windows.size()) return;
          try {
            run(i);
          } catch (...) {
            std::lock_guard<std::mutex> lk(error_mu);
            if (!error) error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  ErrorReport report;
  report.horizons_ms.assign(horizons_ms.begin(), horizons_ms.end());
  report.global_mm.assign(H, 0.0);
  report.local_mm.assign(H, 0.0);
  report.root_mm.assign(H, 0.0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t k = 0; k < H; ++k) {
      report.global_mm[k] += g[i][k];
      report.local_mm[k] += l[i][k];
      report.root_mm[k] += r[i][k];
    }
  }
  for (std::size_t k = 0; k < H; ++k) {
    report.global_mm[k] /= static_cast<double>(windows.size());
    report.local_mm[k] /= static_cast<double>(windows.size());
    report.root_mm[k] /= static_cast<double>(windows.size());
  }
  report.validate();
  return report;
}

}  // namespace hiersoc
