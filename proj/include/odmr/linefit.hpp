#pragma once

#include <vector>

namespace odmr::linefit {

// One damped sinusoid recovered from a uniformly sampled real record.
struct DampedLine {
  double freq_mhz = 0.0;      // pole frequency in the fold domain [0, fs/2]
  double amplitude = 0.0;     // residue magnitude at t = 0
  double decay_per_us = 0.0;  // pole damping rate (slightly negative is noise)
};

// Matrix-pencil (LPSVD-style) estimation of damped sinusoids in a real,
// uniformly sampled record.  `order` counts complex poles; a real record
// carries conjugate pairs, so order should be roughly twice the number of
// lines of interest plus generous headroom for interference.  One entry is
// returned per conjugate pair, sorted by descending amplitude.
//
// `pencil_cols` is the pencil parameter L (Hankel columns - 1); 0 picks
// 3*order, a good accuracy/cost compromise.  Requires
// samples.size() >= 2*(order + 1).
std::vector<DampedLine> fit_damped_lines(const std::vector<double>& samples,
                                         double dt_us, int order,
                                         int pencil_cols = 0);

// Alias of an absolute frequency in the fold domain [0, fs/2] of a real
// record sampled at fs_mhz.
double folded_frequency_mhz(double freq_mhz, double fs_mhz);

// Inverse of folding: the absolute frequency nearest `near_mhz` whose alias
// at sample rate fs_mhz equals folded_mhz.
double unfold_frequency_mhz(double folded_mhz, double fs_mhz, double near_mhz);

}  // namespace odmr::linefit
