#include "mlbviz/analysis.hpp"

#include <algorithm>

#include "mlbviz/explainer.hpp"

namespace mlbviz {

SampleSaliency measure_sample(const ModelParams& params, const synth::Sample& sample, GradMode mode,
                              bool with_heatmap) {
  SampleSaliency out;
  ForwardOptions options;
  options.image_gradient = with_heatmap;
  const ForwardTrace trace = forward(params, sample.image(), sample.tokens, options);
  out.correct = trace.answer == sample.answer;

  const Tensor& alpha = trace.tape.value(trace.alpha);
  const std::size_t cells = alpha.dim(1);
  std::size_t mask_cells = 0;
  for (auto m : sample.mask) mask_cells += m ? 1 : 0;
  out.baseline = static_cast<double>(mask_cells) / static_cast<double>(cells);
  for (std::size_t g = 0; g < alpha.dim(0); ++g) {
    double mass = 0.0;
    for (std::size_t s = 0; s < cells; ++s) {
      if (sample.mask[s]) mass += alpha.at(g, s);
    }
    out.mask_mass.push_back(mass);
  }

  const TokenSaliency tokens = token_scores(textual_explanation(trace, mode));
  double noun_sum = 0.0, function_sum = 0.0;
  std::size_t nouns = 0, functions = 0;
  for (std::size_t i = 0; i < sample.tokens.size(); ++i) {
    if (synth::is_content_word(sample.tokens[i])) {
      noun_sum += tokens.z[i];
      ++nouns;
    } else {
      function_sum += tokens.z[i];
      ++functions;
    }
  }
  if (nouns && functions) out.noun_gap = noun_sum / static_cast<double>(nouns) - function_sum / static_cast<double>(functions);

  if (with_heatmap) {
    const Tensor heat = visual_saliency(trace, mode).heatmap;
    double inside = 0.0, total = 0.0;
    std::size_t inside_pixels = 0;
    for (std::size_t y = 0; y < heat.dim(0); ++y) {
      for (std::size_t x = 0; x < heat.dim(1); ++x) {
        const bool in_mask = sample.mask[(y / synth::kCellSide) * synth::kLattice + x / synth::kCellSide] != 0;
        total += heat.at(y, x);
        if (in_mask) {
          inside += heat.at(y, x);
          ++inside_pixels;
        }
      }
    }
    out.heatmap_mask_mass = total > 0.0 ? inside / total : 0.0;
    out.area_fraction = static_cast<double>(inside_pixels) / static_cast<double>(heat.size());
  }
  return out;
}

SaliencyReport saliency_metrics(const ModelParams& params, std::span<const synth::Sample> data, GradMode mode,
                                bool with_heatmap) {
  SaliencyReport r;
  const std::size_t glimpses = params.hyper().glimpses;
  r.glimpse_mean_mass.assign(glimpses, 0.0);
  r.glimpse_beats_baseline.assign(glimpses, 0.0);
  std::size_t noun_wins = 0;
  for (const auto& s : data) {
    if (s.kind == synth::QuestionKind::Count) continue;
    ++r.attribute_samples;
    const SampleSaliency m = measure_sample(params, s, mode, with_heatmap);
    if (!m.correct) continue;
    ++r.attribute_correct;
    r.mean_baseline += m.baseline;
    for (std::size_t g = 0; g < glimpses; ++g) {
      r.glimpse_mean_mass[g] += m.mask_mass[g];
      if (m.mask_mass[g] > m.baseline) r.glimpse_beats_baseline[g] += 1.0;
    }
    if (m.noun_gap > 0.0) ++noun_wins;
    r.mean_noun_gap += m.noun_gap;
    r.heatmap_mask_mass += m.heatmap_mask_mass;
    r.heatmap_area_baseline += m.area_fraction;
  }
  if (r.attribute_correct) {
    const double n = static_cast<double>(r.attribute_correct);
    r.mean_baseline /= n;
    for (auto& v : r.glimpse_mean_mass) v /= n;
    for (auto& v : r.glimpse_beats_baseline) v /= n;
    r.best_glimpse_fraction = *std::max_element(r.glimpse_beats_baseline.begin(), r.glimpse_beats_baseline.end());
    r.noun_over_function = static_cast<double>(noun_wins) / n;
    r.mean_noun_gap /= n;
    r.heatmap_mask_mass /= n;
    r.heatmap_area_baseline /= n;
  }
  return r;
}

}  // namespace mlbviz
