#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuroaudit/model.hpp"

namespace neuroaudit::toy {

// Hand-wired two-layer model with a small word-level BPE vocabulary.
//
//  * Layer 0 MLP holds one "mediator" neuron per fill year 2000..2039. It
//    fires strongly on its own year token, weakly on every other year token
//    and not at all elsewhere, and writes a one-hot year code into the
//    residual stream.
//  * Layer 1 attention copies that code from the year position to later
//    positions; the unembedding maps code j to the token for year j + 1.
//  * A handful of layer-0 neurons are planted for observational audits
//    (days of the week, weekend days, Thursday, colors, days-or-colors,
//    the year 2000). They do not write to the residual stream.
//  * The remaining layer-0 neurons and all of layer 1's MLP are random
//    readers with zero output weights.
//
// So "The year after Y is" -> " Y+1" for every fill, and patching the
// mediators at the year token with a source run's values moves the answer to
// the source's successor year.
struct PlantedNeurons {
  std::vector<int> mediators;  // mediators[j] answers fill year 2000 + j
  int days = -1;
  int weekend = -1;
  int thursday = -1;
  int colors = -1;
  int days_or_colors = -1;
  int year_2000 = -1;
};

struct Bundle {
  ModelConfig config;
  TensorArchive archive;
  std::string vocab_json;
  std::string merges_txt;
  PlantedNeurons planted;
};

constexpr int kFirstYear = 2000;
constexpr int kFillYears = 40;

Bundle build();

// Writes the full fixture bundle (model files, task registry, explanation
// corpora, test sets, scan corpus, annotator replay file and an audit
// config) into `dir`.
void write_bundle(const std::filesystem::path& dir);

Model make_model(const Bundle& bundle);

}  // namespace neuroaudit::toy
