// sae-absorb: command-line front end. Exit codes: 0 pass, 1 assertion
// failure, 2 usage error.

#include "absorb/analysis.hpp"
#include "absorb/io.hpp"
#include "absorb/scenarios.hpp"
#include "absorb/svg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace absorb;
namespace fs = std::filesystem;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

// Experiment selection plus flag overrides. Applied as defaults < config file
// < flags.
struct ExperimentFlags {
    std::string scenario;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> eval_samples;
    std::optional<std::size_t> width;
    std::optional<std::size_t> k;
    std::optional<double> l1;
    std::optional<double> lr;
    std::optional<std::size_t> samples;
    std::optional<std::size_t> batch_size;
    std::optional<std::string> renorm;
    std::optional<double> delta;

    void add(CLI::App * app) {
        app->add_option("--scenario", scenario, "shipped scenario name");
        app->add_option("--config", config, "experiment_config JSON file");
        app->add_option("--seed", seed, "global seed");
        app->add_option("--eval-samples", eval_samples, "rows in the evaluation batch");
        app->add_option("--width", width, "SAE width H");
        app->add_option("--k", k, "BatchTopK k");
        app->add_option("--l1", l1, "L1 coefficient");
        app->add_option("--lr", lr, "learning rate");
        app->add_option("--samples", samples, "total training samples");
        app->add_option("--batch-size", batch_size, "training batch size");
        app->add_option("--renorm", renorm, "decoder norm policy")->check(CLI::IsMember({"none", "unit"}));
        app->add_option("--delta", delta, "absorption strength for constructed SAEs");
    }

    ExperimentConfig resolve() const {
        if (scenario.empty() == config.empty()) {
            throw UsageError("give exactly one of --scenario or --config");
        }
        ExperimentConfig c = config.empty() ? make_scenario(scenario, seed.value_or(0)) : load_experiment(config);
        if (seed && !config.empty()) {
            c.apply_seed(*seed);
        }
        if (eval_samples) c.eval_samples = *eval_samples;
        if (width) c.shape.width = *width;
        if (k) c.shape.nonlinearity = Nonlinearity::batch_topk(*k);
        if (l1) c.train.l1_coeff = *l1;
        if (lr) c.train.learning_rate = *lr;
        if (samples) c.train.total_samples = *samples;
        if (batch_size) c.train.batch_size = *batch_size;
        if (renorm) c.train.decoder_norm = *renorm == "none" ? DecoderNorm::none : DecoderNorm::unit_renorm_each_step;
        if (delta) c.delta = *delta;
        return c;
    }
};

SaeModel load_model(const std::string & path) { return from_document<SaeModel>(read_json(path), "sae_model"); }
ProbeModel load_probe(const std::string & path) { return from_document<ProbeModel>(read_json(path), "probe_model"); }

ActivationBatch load_labeled(const std::string & dir) {
    ActivationBatch b = load_batch(dir);
    if (!b.labels) {
        throw UsageError("batch in " + dir + " has no labels");
    }
    return b;
}

// Latent codes for a batch: the SAE's when given, raw activations otherwise.
Matrix inputs_for(const ActivationBatch & batch, const std::string & model_path) {
    return model_path.empty() ? batch.activations : encode(load_model(model_path), batch.activations);
}

std::vector<SplitResult> splits_for(const Matrix & latents, const ActivationBatch & batch, double tau,
                                    const KSparseSettings & probing) {
    KSparseSettings p = probing;
    p.k_max = std::min(p.k_max, latents.cols());
    return detect_splitting(latents, *batch.labels, batch.split, {tau, p});
}

int cmd_generate(const ExperimentFlags & flags, std::optional<std::size_t> n, const fs::path & out) {
    ExperimentConfig c = flags.resolve();
    c.validate();
    const FeatureDictionary dict = build_dictionary(c);
    const std::size_t rows = n.value_or(c.eval_samples);
    ActivationBatch batch;
    if (c.task) {
        batch = make_labeled_task(dict, c.spec, *c.task, rows, c.eval_seed);
    } else {
        batch = sample_batch(dict, c.spec, rows, c.eval_seed);
        batch.labels = labels_from_feature(batch, c.label_feature);
    }
    write_json(out / "config.json", document("experiment_config", c));
    write_json(out / "dictionary.json", document("feature_dictionary", dict));
    write_json(out / "spec.json", document("firing_spec", c.spec));
    if (c.task) {
        write_json(out / "task.json", document("class_task", *c.task));
    }
    save_batch(out / "batch", batch);
    std::printf("wrote %zu rows to %s\n", rows, (out / "batch").c_str());
    return kPass;
}

int cmd_train_sae(const ExperimentFlags & flags, const fs::path & out) {
    ExperimentConfig c = flags.resolve();
    c.validate();
    if (c.sae_source != SaeSource::trained) {
        throw UsageError("scenario '" + c.scenario + "' constructs its SAE; nothing to train");
    }
    const FeatureDictionary dict = build_dictionary(c);
    const TrainTrace trace =
        c.task ? train_on_task(dict, c.spec, *c.task, c.shape, c.train) : train(dict, c.spec, c.shape, c.train);
    write_json(out / "config.json", document("experiment_config", c));
    write_json(out / "dictionary.json", document("feature_dictionary", dict));
    write_json(out / "model.json", document("sae_model", trace.model));
    write_text_atomic(out / "trace.csv", trace_csv(trace));
    const auto & last = trace.checkpoints.back().report;
    std::printf("steps %zu  mse %.6g  l0 %.4g  ev %.6f\n", trace.steps, last.recon_mse, last.l0_mean,
                last.explained_variance);
    return kPass;
}

int cmd_train_probe(const std::string & batch_dir, const std::string & model, const std::string & kind, double l1,
                    const fs::path & out) {
    const ActivationBatch batch = load_labeled(batch_dir);
    const Matrix x = inputs_for(batch, model);
    ProbeConfig cfg;
    cfg.kind = kind == "multinomial" ? ProbeKind::multinomial : ProbeKind::one_vs_rest;
    cfg.l1_coeff = l1;
    const ProbeModel probe = train_probe(x, *batch.labels, batch.split, cfg);
    const EvalReport ev = evaluate(probe, x, *batch.labels, batch.split);
    write_json(out / "probe.json", document("probe_model", probe));
    write_json(out / "probe_eval.json", wrap("probe_eval", json(ev)));
    std::printf("mean F1 %.4f  precision %.4f  recall %.4f on %zu test rows\n", ev.mean_f1, ev.mean_precision,
                ev.mean_recall, ev.test_rows);
    return kPass;
}

int cmd_probe_curve(const std::string & batch_dir, const std::string & model, const KSparseSettings & settings,
                    const fs::path & out) {
    const ActivationBatch batch = load_labeled(batch_dir);
    const Matrix x = inputs_for(batch, model);
    KSparseSettings s = settings;
    s.k_max = std::min(s.k_max, x.cols());
    const auto curve = k_sparse_curve(x, *batch.labels, batch.split, s);
    write_text_atomic(out / "kcurve.csv", k_curve_csv(curve));
    std::vector<LineSeries> lines(curve.empty() ? 0 : curve.front().f1.size());
    for (std::size_t c = 0; c < lines.size(); ++c) {
        lines[c].name = "class " + std::to_string(c);
        for (const auto & p : curve) {
            lines[c].x.push_back(static_cast<double>(p.k));
            lines[c].y.push_back(p.f1[c]);
        }
    }
    write_text_atomic(out / "kcurve.svg", line_chart_svg(lines, "k-sparse probing", "k", "F1"));
    for (const auto & p : curve) {
        std::printf("k=%zu mean F1 %.4f\n", p.k, p.mean_f1);
    }
    return kPass;
}

int cmd_detect_splitting(const std::string & batch_dir, const std::string & model, double tau,
                         const KSparseSettings & probing, const fs::path & out) {
    const ActivationBatch batch = load_labeled(batch_dir);
    const auto splits = splits_for(encode(load_model(model), batch.activations), batch, tau, probing);
    write_json(out / "splits.json", wrap("split_results", json(splits)));
    for (const auto & s : splits) {
        std::printf("class %zu: split_k %zu\n", s.cls, s.split_k);
    }
    return kPass;
}

int cmd_detect_absorption(const std::string & batch_dir, const std::string & model_path, const std::string & probe_path,
                          const std::string & readout_path, AbsorptionConfig cfg, const fs::path & out) {
    const ActivationBatch batch = load_labeled(batch_dir);
    const SaeModel sae = load_model(model_path);
    ProbeConfig pc;
    const ProbeModel probe = probe_path.empty() ? train_probe(batch.activations, *batch.labels, batch.split, pc)
                                                : load_probe(probe_path);
    pc.kind = ProbeKind::multinomial;
    const ProbeModel readout = readout_path.empty()
                                   ? train_probe(batch.activations, *batch.labels, batch.split, pc)
                                   : load_probe(readout_path);
    cfg.probing.k_max = std::min(cfg.probing.k_max, sae.width());
    const auto splits = splits_for(encode(sae, batch.activations), batch, cfg.tau_split, cfg.probing);
    const AbsorptionReport rep = absorption_rate_main(sae, readout, probe, batch, cfg, splits);
    write_json(out / "absorption.json", document("absorption_report", rep));
    write_text_atomic(out / "absorption.csv", absorption_csv(rep));
    if (cfg.alt) {
        const AbsorptionReport alt = absorption_rate_alt(sae, probe, batch, cfg, splits);
        write_json(out / "absorption_alt.json", document("absorption_report", alt));
        write_text_atomic(out / "absorption_alt.csv", absorption_csv(alt));
    }
    for (const auto & c : rep.classes) {
        if (c.rate) {
            std::printf("class %zu: rate %.4f (%zu of %zu false negatives sampled)\n", c.cls, *c.rate, c.sampled,
                        c.audited_pool);
        } else {
            std::printf("class %zu: rate undefined (no true positives)\n", c.cls);
        }
    }
    return kPass;
}

int cmd_edit(const std::string & batch_dir, const std::string & model_path, const std::string & readout_path,
             std::size_t from, std::size_t to, std::size_t rows, const fs::path & out) {
    const ActivationBatch batch = load_labeled(batch_dir);
    const SaeModel sae = load_model(model_path);
    ProbeConfig pc;
    pc.kind = ProbeKind::multinomial;
    const ProbeModel readout = readout_path.empty()
                                   ? train_probe(batch.activations, *batch.labels, batch.split, pc)
                                   : load_probe(readout_path);
    const Matrix latents = encode(sae, batch.activations);
    const auto splits = splits_for(latents, batch, 0.03, {});
    std::vector<std::size_t> class_latent;
    for (const auto & s : splits) {
        class_latent.push_back(s.latents.at(0));
    }
    if (from >= class_latent.size() || to >= class_latent.size()) {
        throw UsageError("--from/--to outside the class range");
    }
    const auto means = class_mean_activations(latents, *batch.labels, batch.split, class_latent);
    std::string csv = "sample_id,drop_from,gain_to\n";
    std::size_t done = 0, both = 0;
    for (std::size_t r : batch.rows_in(Split::test)) {
        if (done == rows) {
            break;
        }
        if ((*batch.labels)[r] != static_cast<int>(from)) {
            continue;
        }
        const EditResult e = edit_class(sae, readout, batch.activations.row(r), from, to, class_latent, means);
        csv += std::to_string(r) + "," + csv_number(e.drop_from) + "," + csv_number(e.gain_to) + "\n";
        both += e.drop_from > 0 && e.gain_to > 0;
        ++done;
    }
    write_text_atomic(out / "edit.csv", csv);
    std::printf("%zu of %zu edited rows moved probability from class %zu to %zu\n", both, done, from, to);
    return kPass;
}

int print_result(const ScenarioResult & res) {
    for (const auto & a : res.assertions) {
        std::printf("%s %s: %.6g %s %.6g\n", a.pass ? "PASS" : "FAIL", a.name.c_str(), a.value, a.op.c_str(),
                    a.threshold);
    }
    std::printf("%s: %s\n", res.scenario.c_str(), res.pass() ? "pass" : "FAIL");
    return res.pass() ? kPass : kFail;
}

std::vector<double> parse_values(const std::string & text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find(',', start), text.size());
        const std::string cell = text.substr(start, end - start);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) {
                throw std::invalid_argument(cell);
            }
        } catch (const std::exception &) {
            throw UsageError("bad sweep value '" + cell + "'");
        }
        start = end + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Feature absorption laboratory for sparse autoencoders"};
    app.require_subcommand(1);

    ExperimentFlags gen_flags, train_flags, sweep_flags;
    std::optional<std::size_t> gen_n;
    std::string out = "out";

    auto * gen = app.add_subcommand("generate", "sample a dictionary and an activation batch");
    gen_flags.add(gen);
    gen->add_option("--n", gen_n, "rows (default: the config's eval_samples)");
    gen->add_option("--out", out, "output directory");

    auto * tsae = app.add_subcommand("train-sae", "train an SAE on freshly sampled activations");
    train_flags.add(tsae);
    tsae->add_option("--out", out, "output directory");

    std::string batch_dir, model, probe_path, readout_path, kind = "one_vs_rest", abs_config;
    double probe_l1 = 0.0;
    auto * tprobe = app.add_subcommand("train-probe", "fit a logistic-regression probe on a batch");
    tprobe->add_option("--batch", batch_dir, "batch directory")->required();
    tprobe->add_option("--model", model, "probe SAE latents instead of activations");
    tprobe->add_option("--kind", kind, "probe kind")->check(CLI::IsMember({"one_vs_rest", "multinomial"}));
    tprobe->add_option("--l1", probe_l1, "L1 penalty");
    tprobe->add_option("--out", out, "output directory");

    KSparseSettings ks;
    std::string selection = "positive";
    auto * curve = app.add_subcommand("probe-curve", "k-sparse probing F1 for k = 1..k_max");
    curve->add_option("--batch", batch_dir, "batch directory")->required();
    curve->add_option("--model", model, "SAE model JSON (omit to probe raw activations)");
    curve->add_option("--k-max", ks.k_max, "largest k");
    curve->add_option("--l1", ks.l1_coeff, "L1 penalty of the selection probe");
    curve->add_option("--selection", selection, "ranking of probe weights")
        ->check(CLI::IsMember({"positive", "magnitude"}));
    curve->add_option("--out", out, "output directory");

    double tau_split = 0.03;
    auto * split = app.add_subcommand("detect-splitting", "split_k per class from F1 jumps");
    split->add_option("--batch", batch_dir, "batch directory")->required();
    split->add_option("--model", model, "SAE model JSON")->required();
    split->add_option("--tau", tau_split, "minimum F1 gain");
    split->add_option("--out", out, "output directory");

    AbsorptionConfig acfg;
    bool with_alt = false;
    std::string variant = "mean";
    auto * absn = app.add_subcommand("detect-absorption", "ablation-based absorption rate per class");
    absn->add_option("--batch", batch_dir, "batch directory")->required();
    absn->add_option("--model", model, "SAE model JSON")->required();
    absn->add_option("--probe", probe_path, "one-vs-rest probe JSON (default: fit on the batch)");
    absn->add_option("--readout", readout_path, "multinomial readout JSON (default: fit on the batch)");
    absn->add_option("--config", abs_config, "absorption_config JSON");
    auto * o_split = absn->add_option("--tau-split", acfg.tau_split, "splitting threshold");
    auto * o_cos = absn->add_option("--tau-cos", acfg.tau_cos, "probe cosine threshold");
    auto * o_lead = absn->add_option("--lead", acfg.ablation_lead, "required lead over the runner-up");
    auto * o_cap = absn->add_option("--cap", acfg.fn_sample_cap, "false negatives audited per class");
    auto * o_var = absn->add_option("--variant", variant, "metric variant")->check(CLI::IsMember({"mean", "max"}));
    auto * o_alt = absn->add_flag("--alt", with_alt, "also run the projection variant");
    auto * o_seed = absn->add_option("--seed", acfg.seed, "sampling seed");
    absn->add_option("--out", out, "output directory");

    std::size_t from = 0, to = 1, rows = 100;
    auto * edit = app.add_subcommand("edit", "swap one class latent for another and measure the readout");
    edit->add_option("--batch", batch_dir, "batch directory")->required();
    edit->add_option("--model", model, "SAE model JSON")->required();
    edit->add_option("--readout", readout_path, "multinomial readout JSON (default: fit on the batch)");
    edit->add_option("--from", from, "source class");
    edit->add_option("--to", to, "target class");
    edit->add_option("--rows", rows, "test rows of the source class to edit");
    edit->add_option("--out", out, "output directory");

    TheoryCheckConfig tcfg;
    auto * theory = app.add_subcommand("verify-theory", "check the delta-absorption loss identities");
    theory->add_option("--samples", tcfg.samples, "Monte Carlo samples per point");
    theory->add_option("--seed", tcfg.seed, "Monte Carlo seed");
    theory->add_option("--out", out, "output directory");

    std::string run_name, run_config;
    std::uint64_t run_seed = 0;
    auto * run = app.add_subcommand("run", "run a scenario and check its assertions");
    run->add_option("name", run_name, "scenario name");
    run->add_option("--config", run_config, "experiment_config JSON instead of a name");
    auto * o_run_seed = run->add_option("--seed", run_seed, "global seed");
    run->add_option("--out", out, "output directory");
    auto * list = app.add_subcommand("list", "print shipped scenario names");

    std::string axis, values;
    auto * sweep = app.add_subcommand("sweep", "one pipeline run per grid value");
    sweep_flags.add(sweep);
    sweep->add_option("--axis", axis, "l1_coeff, width, k or delta")->required();
    sweep->add_option("--values", values, "comma-separated grid")->required();
    sweep->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kUsage;
    }

    try {
        if (*gen) {
            return cmd_generate(gen_flags, gen_n, out);
        }
        if (*tsae) {
            return cmd_train_sae(train_flags, out);
        }
        if (*tprobe) {
            return cmd_train_probe(batch_dir, model, kind, probe_l1, out);
        }
        if (*curve) {
            ks.selection = selection == "magnitude" ? KSelection::magnitude : KSelection::positive;
            return cmd_probe_curve(batch_dir, model, ks, out);
        }
        if (*split) {
            return cmd_detect_splitting(batch_dir, model, tau_split, {}, out);
        }
        if (*absn) {
            AbsorptionConfig base = abs_config.empty()
                                        ? AbsorptionConfig{}
                                        : from_document<AbsorptionConfig>(read_json(abs_config), "absorption_config");
            // Flags given on the command line override the file.
            if (o_split->count()) base.tau_split = acfg.tau_split;
            if (o_cos->count()) base.tau_cos = acfg.tau_cos;
            if (o_lead->count()) base.ablation_lead = acfg.ablation_lead;
            if (o_cap->count()) base.fn_sample_cap = acfg.fn_sample_cap;
            if (o_var->count()) base.variant = variant == "max" ? MetricVariant::max : MetricVariant::mean;
            if (o_alt->count() && with_alt && !base.alt) base.alt = AltMetricConfig{};
            if (o_seed->count()) base.seed = acfg.seed;
            return cmd_detect_absorption(batch_dir, model, probe_path, readout_path, base, out);
        }
        if (*edit) {
            return cmd_edit(batch_dir, model, readout_path, from, to, rows, out);
        }
        if (*theory) {
            const TheoryReport rep = verify_theory(tcfg);
            write_json(fs::path(out) / "theory.json", document("theory_report", rep));
            std::printf("reconstruction max error %.3g: %s\n", rep.reconstruction.max_error_norm, rep.reconstruction.pass ? "pass" : "FAIL");
            for (const auto & r : rep.sparsity) {
                std::printf("p11=%.2f p10=%.2f delta=%.2f closed %.6f empirical %.6f se %.2g: %s\n", r.p11, r.p10,
                            r.delta, r.closed_form, r.empirical, r.std_error, r.pass ? "pass" : "FAIL");
            }
            for (const auto & r : rep.monotonicity) {
                std::printf("p11=%.2f p10=%.2f decreasing %d slope error %.3g: %s\n", r.p11, r.p10,
                            r.strictly_decreasing, r.worst_slope_error, r.pass ? "pass" : "FAIL");
            }
            return rep.pass() ? kPass : kFail;
        }
        if (*run) {
            if (run_name.empty() == run_config.empty()) {
                throw UsageError("give a scenario name or --config");
            }
            ExperimentConfig cfg = run_config.empty() ? make_scenario(run_name, run_seed) : load_experiment(run_config);
            if (!run_config.empty() && o_run_seed->count()) {
                cfg.apply_seed(run_seed);
            }
            return print_result(run_scenario(cfg, out));
        }
        if (*list) {
            for (const auto & n : scenario_names()) {
                std::printf("%s\n", n.c_str());
            }
            return kPass;
        }
        if (*sweep) {
            SweepSpec spec{sweep_flags.resolve(), parse_axis(axis), parse_values(values)};
            const auto points = run_sweep(spec, out);
            std::size_t failed = 0;
            for (const auto & p : points) {
                failed += p.error.has_value();
            }
            std::fputs(sweep_csv(spec.axis, points).c_str(), stdout);
            return failed ? kFail : kPass;
        }
    } catch (const UsageError & e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const FormatError & e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kUsage;
    } catch (const std::invalid_argument & e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return kUsage;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFail;
    }
    return kUsage;
}
