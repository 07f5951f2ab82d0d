#include "apt/ablation.hpp"

#include <sstream>
#include <thread>

namespace apt {

namespace {

IntegrationPlan baseline_plan() { return IntegrationPlan{}; }

IntegrationPlan fusion_encoder_plan() {
    IntegrationPlan p;
    p.mode = PlanMode::apt;
    p.fusion_side = PlanSide::encoder;
    p.encoder_teacher = "masked";
    return p;
}

IntegrationPlan kd_decoder_plan() {
    IntegrationPlan p;
    p.mode = PlanMode::apt;
    p.distill_side = PlanSide::decoder;
    p.decoder_teacher = "causal";
    return p;
}

IntegrationPlan full_apt_plan() { return IntegrationPlan::recommended(); }

void set_ablations(IntegrationPlan& p, bool no_gate, bool no_attn, bool no_word, bool no_sent) {
    p.ablations.no_gating = no_gate;
    p.ablations.no_layer_attention = no_attn;
    p.ablations.no_word_distill = no_word;
    p.ablations.no_sent_distill = no_sent;
}

} // namespace

std::vector<AblationCell> ablation_suite(const std::string& suite, double eta, double beta) {
    std::vector<AblationCell> cells;
    cells.push_back({"baseline", baseline_plan()});
    auto weighted = [eta, beta](std::vector<AblationCell> cs) {
        for (auto& c : cs) {
            c.plan.eta = eta;
            c.plan.beta = beta;
        }
        return cs;
    };

    if (suite == "table3") {
        // mechanism ablations: fusion alone, then the full framework, each
        // with gating / layer-attention knocked out; then each distillation
        // objective knocked out with and without fusion
        auto add = [&](std::string name, IntegrationPlan p) { cells.push_back({name, p}); };
        IntegrationPlan fusion = fusion_encoder_plan();
        add("fusion_only", fusion);
        IntegrationPlan f1 = fusion;
        set_ablations(f1, true, false, false, false);
        add("fusion_only_no_gating", f1);
        IntegrationPlan f2 = fusion;
        set_ablations(f2, false, true, false, false);
        add("fusion_only_no_layer_attention", f2);
        IntegrationPlan f3 = fusion;
        set_ablations(f3, true, true, false, false);
        add("fusion_only_no_gating_no_layer_attention", f3);

        IntegrationPlan full = full_apt_plan();
        add("apt_full", full);
        IntegrationPlan a1 = full;
        set_ablations(a1, true, false, false, false);
        add("apt_no_gating", a1);
        IntegrationPlan a2 = full;
        set_ablations(a2, false, true, false, false);
        add("apt_no_layer_attention", a2);
        IntegrationPlan a3 = full;
        set_ablations(a3, true, true, false, false);
        add("apt_no_gating_no_layer_attention", a3);

        IntegrationPlan kd = kd_decoder_plan();
        add("kd_only", kd);
        IntegrationPlan k1 = kd;
        set_ablations(k1, false, false, true, false);
        add("kd_only_no_word_distill", k1);
        IntegrationPlan k2 = kd;
        set_ablations(k2, false, false, false, true);
        add("kd_only_no_sent_distill", k2);
        IntegrationPlan a4 = full;
        set_ablations(a4, false, false, true, false);
        add("apt_no_word_distill", a4);
        IntegrationPlan a5 = full;
        set_ablations(a5, false, false, false, true);
        add("apt_no_sent_distill", a5);
        return weighted(std::move(cells));
    }

    if (suite == "table5") {
        // strategy matrix: each side with fusion, distillation, or both
        IntegrationPlan enc_kd;
        enc_kd.mode = PlanMode::apt;
        enc_kd.distill_side = PlanSide::encoder;
        enc_kd.encoder_teacher = "masked";

        IntegrationPlan enc_both = fusion_encoder_plan();
        enc_both.distill_side = PlanSide::encoder;

        IntegrationPlan dec_fusion;
        dec_fusion.mode = PlanMode::apt;
        dec_fusion.fusion_side = PlanSide::decoder;
        dec_fusion.decoder_teacher = "causal";

        IntegrationPlan dec_both = dec_fusion;
        dec_both.distill_side = PlanSide::decoder;

        cells.push_back({"encoder_fusion", fusion_encoder_plan()});
        cells.push_back({"encoder_kd", enc_kd});
        cells.push_back({"encoder_fusion_kd", enc_both});
        cells.push_back({"decoder_fusion", dec_fusion});
        cells.push_back({"decoder_kd", kd_decoder_plan()});
        cells.push_back({"decoder_fusion_kd", dec_both});
        return weighted(std::move(cells));
    }

    if (suite == "table6") {
        // layer placement: fusion on the encoder and distillation on the
        // decoder, each attached at embedding / middle / output / all
        for (const char* sel : {"embedding", "middle", "output", "all"}) {
            IntegrationPlan p = fusion_encoder_plan();
            p.fusion_layers = LayerSet::from_json(sel);
            cells.push_back({std::string("fusion_") + sel, p});
        }
        for (const char* sel : {"embedding", "middle", "output", "all"}) {
            IntegrationPlan p = kd_decoder_plan();
            p.distill_layers = LayerSet::from_json(sel);
            cells.push_back({std::string("kd_") + sel, p});
        }
        return weighted(std::move(cells));
    }

    throw ConfigError("unknown ablation suite: " + suite + " (want table3|table5|table6)");
}

std::vector<CellOutcome> run_suite(const std::vector<AblationCell>& cells,
                                   const SuiteInputs& inputs) {
    std::vector<CellOutcome> outcomes(cells.size());

    auto run_cell = [&](std::size_t i) {
        CellOutcome& out = outcomes[i];
        out.name = cells[i].name;
        try {
            Rng rng(inputs.seed);
            StudentModel student =
                build_student(cells[i].plan, inputs.model, inputs.teachers, rng,
                              inputs.trainer.finetune_init);
            TrainingStep step(cells[i].plan, inputs.model, student, inputs.teachers,
                              inputs.trainer.exact_cap);
            MetricSink sink = inputs.sink_for ? inputs.sink_for(cells[i].name) : MetricSink{};
            TrainResult result =
                train(step, inputs.train, inputs.valid, inputs.trainer, inputs.seed, sink);
            if (result.aborted) {
                out.failed = true;
                out.error = "aborted: " + result.abort_reason;
                return;
            }
            out.bleu = result.best_bleu;
        } catch (const AptError& e) {
            out.failed = true;
            out.error = e.one_line();
        } catch (const std::exception& e) {
            out.failed = true;
            out.error = e.what();
        }
    };

    const int threads = std::max(1, inputs.threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        std::size_t next = 0;
        while (next < cells.size()) {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads && next < cells.size(); ++t, ++next)
                pool.emplace_back(run_cell, next);
            for (auto& th : pool) th.join();
        }
    }

    const double base = outcomes.empty() || outcomes[0].failed ? 0.0 : outcomes[0].bleu;
    for (auto& out : outcomes) out.delta_vs_baseline = out.failed ? 0.0 : out.bleu - base;
    return outcomes;
}

std::string suite_summary_csv(const std::vector<CellOutcome>& outcomes) {
    std::ostringstream os;
    os << "cell_name,bleu,delta_vs_baseline\n";
    os.setf(std::ios::fixed);
    os.precision(4);
    for (const auto& out : outcomes) {
        if (out.failed)
            os << out.name << ",failed,0.0000\n";
        else
            os << out.name << "," << out.bleu << "," << out.delta_vs_baseline << "\n";
    }
    return os.str();
}

} // namespace apt
