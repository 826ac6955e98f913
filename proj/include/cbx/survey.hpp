#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbx/core_types.hpp"

namespace cbx {

// Donor-survey covariates: age, binarized demographics, coded attitude and
// media-use scales; outcomes on the -10..10 feeling scale.
ContextSchema survey_schema();

// aipac, blm, zuckerberg, clinton, green, nra, peta, planned.
ArmSet survey_arms();

// Parameters of the synthetic corpus. Expected outcome for arm w is
//   base_w + ideology_w * s + abortion_w * a + young_w * 1{age < 30}
// with s = (political_leaning - 4) / 3 and a = (views_abortion - 3) / 2,
// plus Gaussian noise, rounded and clipped to the outcome scale.
struct CorpusParams {
  std::vector<double> base{2.0, 1.2, 0.6, -1.0, 4.7, 1.0, 4.0, 3.0};
  std::vector<double> ideology{0.5, -2.5, 0.0, -3.0, -1.0, 4.5, -0.5, -3.5};
  std::vector<double> abortion{0.0, 0.0, 0.0, 0.0, 0.0, 1.5, 0.0, -1.5};
  std::vector<double> young{0.0, 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  double noise_sd = 5.5;
};

// Expected (pre-rounding) outcome under the corpus parameters.
double corpus_mean(const CorpusParams& params, std::span<const double> x, ArmIndex arm);

// Contexts from a one-factor ideology model, uniformly assigned arms.
// Rows form batches of `batch_size`.
ObservationLog generate_corpus(std::size_t rows, std::uint64_t seed, const CorpusParams& params = {},
                               int batch_size = 150);

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t dropped_attention = 0;
};

// Parses a survey export: one column per covariate (coded value or the
// answer text), an arm column ("arm" or "charity", alias), "outcome", and
// optionally t, batch, e_1..e_K and attention_check (alias the participant
// recalled; mismatching rows are dropped). Missing propensities mean
// uniform assignment. Unknown columns are rejected.
ObservationLog ingest_survey_csv(const std::string& text, IngestReport* report = nullptr);

}  // namespace cbx
