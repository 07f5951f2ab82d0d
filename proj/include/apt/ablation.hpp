#pragma once

#include <string>
#include <vector>

#include "apt/run_config.hpp"

namespace apt {

struct AblationCell {
    std::string name;
    IntegrationPlan plan;
};

// Enumerates the plans behind the mechanism-ablation, strategy-comparison,
// and layer-placement studies. Every cell of each study maps to exactly one
// plan here. The mixing weights are experiment-level hyperparameters and
// apply to every cell.
std::vector<AblationCell> ablation_suite(const std::string& suite, double eta = 0.5,
                                         double beta = 0.5);

struct CellOutcome {
    std::string name;
    double bleu = 0.0;
    double delta_vs_baseline = 0.0;
    bool failed = false;
    std::string error;
};

struct SuiteInputs {
    ParallelCorpus train, valid;
    ModelConfig model;
    TrainerConfig trainer;
    Teachers teachers;
    std::uint64_t seed = 1;
    int threads = 1;
    // per-cell metric sink factory (may be null)
    std::function<MetricSink(const std::string& cell)> sink_for;
};

// Trains every cell under the shared seed and budget and reports final
// validation BLEU. Per-cell failures are recorded and the suite continues.
// The first cell is always the baseline; deltas are taken against it.
std::vector<CellOutcome> run_suite(const std::vector<AblationCell>& cells,
                                   const SuiteInputs& inputs);

std::string suite_summary_csv(const std::vector<CellOutcome>& outcomes);

} // namespace apt
