#pragma once

#include <functional>
#include <vector>

#include "hiersoc/motion.hpp"

namespace hiersoc {

struct ErrorReport {
  std::vector<double> horizons_ms = {400.0, 600.0, 800.0, 1000.0};
  std::vector<double> global_mm;
  std::vector<double> local_mm;
  std::vector<double> root_mm;

  void validate() const;
};

// Mean over persons and joints of the Euclidean joint distance at one frame, mm.
double mpjpe(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame);

// mpjpe after root-aligning each pose.
double local_error(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame);

// Mean over persons of the root joint Euclidean distance, mm.
double root_error(const MultiPersonClip& pred, const MultiPersonClip& gt, int at_frame);

// Maps history (T frames) to a predicted future (T' frames).
using PredictorFn = std::function<MultiPersonClip(const MultiPersonClip& history)>;

// Horizon in frames: round-half-up of ms * fps / 1000.
int horizon_frame(double ms, double fps);

// Averages each metric over all (clip, window) pairs at each horizon frame.
// Windows start at multiples of `stride` (0 -> T'). `threads` 0 resolves from
// hardware and the HIERSOC_THREADS cap.
ErrorReport evaluate(const PredictorFn& predictor, const std::vector<MultiPersonClip>& clips,
                     const MdpConfig& mdp, const std::vector<double>& horizons_ms,
                     int stride = 0, int threads = 0);

// Worker count: min(hardware, HIERSOC_THREADS) with a floor of 1.
int resolve_threads(int requested = 0);

}  // namespace hiersoc
