#pragma once

#include <span>
#include <vector>

#include "mlbviz/autodiff.hpp"
#include "mlbviz/model.hpp"
#include "mlbviz/synth.hpp"

namespace mlbviz {

// Saliency localization on correctly answered attribute questions.
struct SaliencyReport {
  std::size_t attribute_samples = 0;
  std::size_t attribute_correct = 0;

  // Per glimpse: mean α mass inside the relevance mask, and the fraction of
  // samples whose mass exceeds the uniform baseline |mask|/S².
  std::vector<double> glimpse_mean_mass;
  std::vector<double> glimpse_beats_baseline;
  double mean_baseline = 0.0;
  // Largest entry of glimpse_beats_baseline.
  double best_glimpse_fraction = 0.0;

  // Fraction of samples whose mean token z over nouns exceeds the mean over
  // function words, and the average of that gap.
  double noun_over_function = 0.0;
  double mean_noun_gap = 0.0;

  // Fraction of pixel-heatmap mass inside the mask, and the area baseline.
  double heatmap_mask_mass = 0.0;
  double heatmap_area_baseline = 0.0;
};

struct SampleSaliency {
  bool correct = false;
  std::vector<double> mask_mass;  // per glimpse
  double baseline = 0.0;
  double noun_gap = 0.0;          // mean z(nouns) - mean z(function words)
  double heatmap_mask_mass = 0.0;
  double area_fraction = 0.0;
};

// Measures one attribute question. Returns nothing useful for count questions.
SampleSaliency measure_sample(const ModelParams& params, const synth::Sample& sample, GradMode mode,
                              bool with_heatmap);

SaliencyReport saliency_metrics(const ModelParams& params, std::span<const synth::Sample> data,
                                GradMode mode = GradMode::Guided, bool with_heatmap = true);

}  // namespace mlbviz
