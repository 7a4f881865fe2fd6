#include "absorb/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <system_error>

namespace absorb {

namespace fs = std::filesystem;

namespace {

template <class E>
struct EnumNames {
    E value;
    const char * name;
};

template <class E, std::size_t N>
std::string enum_to(E v, const EnumNames<E> (&names)[N]) {
    for (const auto & n : names) {
        if (n.value == v) {
            return n.name;
        }
    }
    throw FormatError("unnamed enum value");
}

template <class E, std::size_t N>
E enum_from(const json & j, const EnumNames<E> (&names)[N]) {
    const auto s = j.get<std::string>();
    for (const auto & n : names) {
        if (s == n.name) {
            return n.value;
        }
    }
    throw FormatError("unknown enum value '" + s + "'");
}

constexpr EnumNames<ProbeKind> kProbeKinds[] = {{ProbeKind::one_vs_rest, "one_vs_rest"},
                                                {ProbeKind::multinomial, "multinomial"}};
constexpr EnumNames<KSelection> kSelections[] = {{KSelection::magnitude, "magnitude"},
                                                 {KSelection::positive, "positive"}};
constexpr EnumNames<MetricVariant> kVariants[] = {{MetricVariant::mean, "mean"}, {MetricVariant::max, "max"}};
constexpr EnumNames<DecoderNorm> kNorms[] = {{DecoderNorm::none, "none"},
                                             {DecoderNorm::unit_renorm_each_step, "unit_renorm_each_step"}};
constexpr EnumNames<Split> kSplits[] = {{Split::train, "train"}, {Split::test, "test"}};

// Missing keys keep the default, so configs may be partial.
template <class T>
void opt(const json & j, const char * key, T & out) {
    if (auto it = j.find(key); it != j.end()) {
        it->get_to(out);
    }
}

std::string read_text(const fs::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string & line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_number(const std::string & s) {
    char * end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw FormatError("bad CSV number '" + s + "'");
    }
    return v;
}

std::vector<std::string> csv_lines(const std::string & text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

}  // namespace

void to_json(json & j, const Matrix & m) { j = m.to_rows(); }

void from_json(const json & j, Matrix & m) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    for (const auto & r : rows) {
        if (!rows.empty() && r.size() != rows.front().size()) {
            throw FormatError("ragged matrix");
        }
    }
    m = Matrix::from_rows(rows);
}

void to_json(json & j, const FeatureDictionary & d) {
    j = {{"dim", d.dim}, {"count", d.count}, {"seed", d.seed}, {"directions", d.directions}};
}

void from_json(const json & j, FeatureDictionary & d) {
    j.at("dim").get_to(d.dim);
    j.at("count").get_to(d.count);
    j.at("seed").get_to(d.seed);
    j.at("directions").get_to(d.directions);
    if (d.directions.rows() != d.count || (d.count > 0 && d.directions.cols() != d.dim)) {
        throw FormatError("feature_dictionary: directions do not match dim x count");
    }
}

void to_json(json & j, const HierarchyEdge & e) {
    j = {{"parent", e.parent},
         {"child", e.child},
         {"cond_prob_given_parent", e.cond_prob_given_parent},
         {"prob_without_parent", e.prob_without_parent}};
}

void from_json(const json & j, HierarchyEdge & e) {
    j.at("parent").get_to(e.parent);
    j.at("child").get_to(e.child);
    j.at("cond_prob_given_parent").get_to(e.cond_prob_given_parent);
    opt(j, "prob_without_parent", e.prob_without_parent);
}

void to_json(json & j, const FiringSpec & s) {
    j = {{"base_prob", s.base_prob},
         {"hierarchy", s.hierarchy},
         {"magnitude_mean", s.magnitude_mean},
         {"magnitude_std", s.magnitude_std}};
}

void from_json(const json & j, FiringSpec & s) {
    j.at("base_prob").get_to(s.base_prob);
    opt(j, "hierarchy", s.hierarchy);
    s.magnitude_mean.assign(s.base_prob.size(), 1.0);
    s.magnitude_std.assign(s.base_prob.size(), 0.0);
    opt(j, "magnitude_mean", s.magnitude_mean);
    opt(j, "magnitude_std", s.magnitude_std);
}

void to_json(json & j, const SubFeature & s) { j = {{"feature", s.feature}, {"prob", s.prob}}; }

void from_json(const json & j, SubFeature & s) {
    j.at("feature").get_to(s.feature);
    j.at("prob").get_to(s.prob);
}

void to_json(json & j, const ClassTask & t) {
    j = {{"classes", t.classes}, {"class_weights", t.class_weights}, {"sub_features", t.sub_features}};
}

void from_json(const json & j, ClassTask & t) {
    j.at("classes").get_to(t.classes);
    opt(j, "class_weights", t.class_weights);
    opt(j, "sub_features", t.sub_features);
}

void to_json(json & j, const Nonlinearity & n) {
    j = {{"kind", n.tag()}};
    if (n.kind == Nonlinearity::Kind::batch_topk) {
        j["k"] = n.k;
    }
}

void from_json(const json & j, Nonlinearity & n) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "relu") {
        n = Nonlinearity::relu();
    } else if (kind == "batch_topk") {
        n = Nonlinearity::batch_topk(j.at("k").get<std::size_t>());
    } else {
        throw FormatError("unknown nonlinearity '" + kind + "'");
    }
}

void to_json(json & j, const SaeModel & m) {
    j = {{"w_enc", m.w_enc},
         {"b_enc", m.b_enc},
         {"w_dec", m.w_dec},
         {"b_dec", m.b_dec},
         {"nonlinearity", m.nonlinearity},
         {"provenance", m.provenance}};
}

void from_json(const json & j, SaeModel & m) {
    j.at("w_enc").get_to(m.w_enc);
    j.at("b_enc").get_to(m.b_enc);
    j.at("w_dec").get_to(m.w_dec);
    j.at("b_dec").get_to(m.b_dec);
    j.at("nonlinearity").get_to(m.nonlinearity);
    opt(j, "provenance", m.provenance);
    try {
        m.validate();
    } catch (const std::invalid_argument & e) {
        throw FormatError(std::string("sae_model: ") + e.what());
    }
}

void to_json(json & j, const LossReport & r) {
    j = {{"recon_mse", r.recon_mse},
         {"sparsity_l1", r.sparsity_l1},
         {"l1_coeff", r.l1_coeff},
         {"total", r.total},
         {"l0_mean", r.l0_mean},
         {"explained_variance", r.explained_variance}};
}

void from_json(const json & j, LossReport & r) {
    j.at("recon_mse").get_to(r.recon_mse);
    j.at("sparsity_l1").get_to(r.sparsity_l1);
    j.at("l1_coeff").get_to(r.l1_coeff);
    j.at("total").get_to(r.total);
    j.at("l0_mean").get_to(r.l0_mean);
    j.at("explained_variance").get_to(r.explained_variance);
}

void to_json(json & j, const SaeShape & s) { j = {{"width", s.width}, {"nonlinearity", s.nonlinearity}}; }

void from_json(const json & j, SaeShape & s) {
    opt(j, "width", s.width);
    opt(j, "nonlinearity", s.nonlinearity);
}

void to_json(json & j, const TrainConfig & c) {
    j = {{"l1_coeff", c.l1_coeff},
         {"learning_rate", c.learning_rate},
         {"total_samples", c.total_samples},
         {"batch_size", c.batch_size},
         {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
         {"decoder_norm", enum_to(c.decoder_norm, kNorms)},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json & j, TrainConfig & c) {
    opt(j, "l1_coeff", c.l1_coeff);
    opt(j, "learning_rate", c.learning_rate);
    opt(j, "total_samples", c.total_samples);
    opt(j, "batch_size", c.batch_size);
    if (auto it = j.find("adam"); it != j.end()) {
        opt(*it, "beta1", c.adam.beta1);
        opt(*it, "beta2", c.adam.beta2);
        opt(*it, "eps", c.adam.eps);
    }
    if (auto it = j.find("decoder_norm"); it != j.end()) {
        c.decoder_norm = enum_from(*it, kNorms);
    }
    opt(j, "seed", c.seed);
    opt(j, "checkpoint_every", c.checkpoint_every);
}

void to_json(json & j, const ProbeConfig & c) {
    j = {{"kind", enum_to(c.kind, kProbeKinds)},
         {"l1_coeff", c.l1_coeff},
         {"max_iter", c.max_iter},
         {"tolerance", c.tolerance}};
}

void from_json(const json & j, ProbeConfig & c) {
    if (auto it = j.find("kind"); it != j.end()) {
        c.kind = enum_from(*it, kProbeKinds);
    }
    opt(j, "l1_coeff", c.l1_coeff);
    opt(j, "max_iter", c.max_iter);
    opt(j, "tolerance", c.tolerance);
}

void to_json(json & j, const ProbeModel & p) {
    j = {{"kind", enum_to(p.kind, kProbeKinds)},
         {"weights", p.weights},
         {"bias", p.bias},
         {"l1_coeff", p.l1_coeff},
         {"iterations", p.iterations}};
    j["feature_mask"] = p.feature_mask ? json(*p.feature_mask) : json(nullptr);
}

void from_json(const json & j, ProbeModel & p) {
    p.kind = enum_from(j.at("kind"), kProbeKinds);
    j.at("weights").get_to(p.weights);
    j.at("bias").get_to(p.bias);
    opt(j, "l1_coeff", p.l1_coeff);
    opt(j, "iterations", p.iterations);
    p.feature_mask.reset();
    if (auto it = j.find("feature_mask"); it != j.end() && !it->is_null()) {
        p.feature_mask = it->get<std::vector<std::vector<std::size_t>>>();
    }
    try {
        p.validate();
    } catch (const std::invalid_argument & e) {
        throw FormatError(std::string("probe_model: ") + e.what());
    }
}

void to_json(json & j, const ClassEval & e) {
    j = {{"tp", e.tp},
         {"fp", e.fp},
         {"fn", e.fn},
         {"tn", e.tn},
         {"precision", e.precision},
         {"recall", e.recall},
         {"f1", e.f1}};
}

void to_json(json & j, const EvalReport & r) {
    j = {{"per_class", r.per_class},
         {"mean_f1", r.mean_f1},
         {"mean_precision", r.mean_precision},
         {"mean_recall", r.mean_recall},
         {"test_rows", r.test_rows}};
}

void to_json(json & j, const KSparseSettings & s) {
    j = {{"k_max", s.k_max},
         {"l1_coeff", s.l1_coeff},
         {"selection", enum_to(s.selection, kSelections)},
         {"fit", s.fit}};
}

void from_json(const json & j, KSparseSettings & s) {
    opt(j, "k_max", s.k_max);
    opt(j, "l1_coeff", s.l1_coeff);
    if (auto it = j.find("selection"); it != j.end()) {
        s.selection = enum_from(*it, kSelections);
    }
    opt(j, "fit", s.fit);
}

void to_json(json & j, const AltMetricConfig & c) {
    j = {{"tau_c", c.tau_c}, {"tau_m", c.tau_m}, {"n_absorbers", c.n_absorbers}, {"n_main", c.n_main}};
}

void from_json(const json & j, AltMetricConfig & c) {
    opt(j, "tau_c", c.tau_c);
    opt(j, "tau_m", c.tau_m);
    opt(j, "n_absorbers", c.n_absorbers);
    opt(j, "n_main", c.n_main);
}

void to_json(json & j, const AbsorptionConfig & c) {
    j = {{"tau_split", c.tau_split},
         {"tau_cos", c.tau_cos},
         {"ablation_lead", c.ablation_lead},
         {"fn_sample_cap", c.fn_sample_cap},
         {"variant", enum_to(c.variant, kVariants)},
         {"probing", c.probing},
         {"seed", c.seed}};
    j["alt"] = c.alt ? json(*c.alt) : json(nullptr);
}

void from_json(const json & j, AbsorptionConfig & c) {
    opt(j, "tau_split", c.tau_split);
    opt(j, "tau_cos", c.tau_cos);
    opt(j, "ablation_lead", c.ablation_lead);
    opt(j, "fn_sample_cap", c.fn_sample_cap);
    if (auto it = j.find("variant"); it != j.end()) {
        c.variant = enum_from(*it, kVariants);
    }
    opt(j, "probing", c.probing);
    opt(j, "seed", c.seed);
    if (auto it = j.find("alt"); it != j.end()) {
        if (it->is_null()) {
            c.alt.reset();
        } else {
            c.alt = it->get<AltMetricConfig>();
        }
    }
}

void to_json(json & j, const SampleVerdict & v) {
    j = {{"sample", v.sample},
         {"top_latent", v.top_latent},
         {"top_effect", v.top_effect},
         {"runner_up_effect", v.runner_up_effect},
         {"cosine", v.cosine},
         {"projection_fraction", v.projection_fraction},
         {"main_fraction", v.main_fraction},
         {"absorption", v.absorption}};
}

void from_json(const json & j, SampleVerdict & v) {
    j.at("sample").get_to(v.sample);
    j.at("top_latent").get_to(v.top_latent);
    j.at("top_effect").get_to(v.top_effect);
    j.at("runner_up_effect").get_to(v.runner_up_effect);
    j.at("cosine").get_to(v.cosine);
    j.at("projection_fraction").get_to(v.projection_fraction);
    j.at("main_fraction").get_to(v.main_fraction);
    j.at("absorption").get_to(v.absorption);
}

void to_json(json & j, const ClassAbsorption & c) {
    j = {{"class", c.cls},
         {"split_k", c.split_k},
         {"split_latents", c.split_latents},
         {"true_positives", c.true_positives},
         {"audited_pool", c.audited_pool},
         {"sampled", c.sampled},
         {"absorption_count", c.absorption_count},
         {"absorption_estimate", c.absorption_estimate},
         {"skipped_nonpositive", c.skipped_nonpositive},
         {"verdicts", c.verdicts}};
    j["rate"] = c.rate ? json(*c.rate) : json(nullptr);
}

void from_json(const json & j, ClassAbsorption & c) {
    j.at("class").get_to(c.cls);
    j.at("split_k").get_to(c.split_k);
    j.at("split_latents").get_to(c.split_latents);
    j.at("true_positives").get_to(c.true_positives);
    j.at("audited_pool").get_to(c.audited_pool);
    j.at("sampled").get_to(c.sampled);
    j.at("absorption_count").get_to(c.absorption_count);
    j.at("absorption_estimate").get_to(c.absorption_estimate);
    opt(j, "skipped_nonpositive", c.skipped_nonpositive);
    opt(j, "verdicts", c.verdicts);
    c.rate.reset();
    if (auto it = j.find("rate"); it != j.end() && !it->is_null()) {
        c.rate = it->get<double>();
    }
}

void to_json(json & j, const AbsorptionReport & r) {
    j = {{"metric", r.metric}, {"config", r.config}, {"classes", r.classes}};
    const auto mean = r.mean_rate();
    j["mean_rate"] = mean ? json(*mean) : json(nullptr);
}

void from_json(const json & j, AbsorptionReport & r) {
    j.at("metric").get_to(r.metric);
    j.at("config").get_to(r.config);
    j.at("classes").get_to(r.classes);
}

void to_json(json & j, const SplitResult & s) {
    j = {{"class", s.cls}, {"split_k", s.split_k}, {"latents", s.latents}, {"f1_by_k", s.f1_by_k}};
}

void from_json(const json & j, SplitResult & s) {
    j.at("class").get_to(s.cls);
    j.at("split_k").get_to(s.split_k);
    j.at("latents").get_to(s.latents);
    j.at("f1_by_k").get_to(s.f1_by_k);
}

void to_json(json & j, const TheoryReport & r) {
    json sparsity = json::array();
    for (const auto & row : r.sparsity) {
        sparsity.push_back({{"p11", row.p11},
                         {"p10", row.p10},
                         {"delta", row.delta},
                         {"closed_form", row.closed_form},
                         {"empirical", row.empirical},
                         {"std_error", row.std_error},
                         {"pass", row.pass}});
    }
    json monotonicity_rows = json::array();
    for (const auto & row : r.monotonicity) {
        monotonicity_rows.push_back({{"p11", row.p11},
                             {"p10", row.p10},
                             {"strictly_decreasing", row.strictly_decreasing},
                             {"worst_slope_error", row.worst_slope_error},
                             {"pass", row.pass}});
    }
    j = {{"reconstruction",
          {{"grid_points", r.reconstruction.grid_points},
           {"max_error_norm", r.reconstruction.max_error_norm},
           {"tolerance", r.reconstruction.tolerance},
           {"pass", r.reconstruction.pass}}},
         {"sparsity_loss", sparsity},
         {"monotonicity", monotonicity_rows},
         {"samples", r.samples},
         {"seed", r.seed},
         {"pass", r.pass()}};
}

json wrap(std::string_view kind, json body) {
    json doc = {{"format", std::string(kind)}, {"version", kFormatVersion}};
    doc["body"] = std::move(body);
    return doc;
}

json unwrap(const json & doc, std::string_view kind) {
    if (!doc.is_object() || !doc.contains("format") || !doc.contains("version") || !doc.contains("body")) {
        throw FormatError("missing format header, expected '" + std::string(kind) + "'");
    }
    const auto & format = doc.at("format");
    if (!format.is_string() || format.get<std::string>() != kind) {
        throw FormatError("expected format '" + std::string(kind) + "', got " + format.dump());
    }
    const auto & version = doc.at("version");
    if (!version.is_number_integer() || version.get<int>() != kFormatVersion) {
        throw FormatError("unsupported " + std::string(kind) + " version " + version.dump());
    }
    return doc.at("body");
}

std::string dump_json(const json & j) { return j.dump(2) + "\n"; }

json read_json(const fs::path & path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error & e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_text_atomic(const fs::path & path, const std::string & content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot write " + path.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw FormatError("short write to " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw FormatError("cannot replace " + path.string());
    }
}

void write_json(const fs::path & path, const json & j) { write_text_atomic(path, dump_json(j)); }

std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string matrix_csv(const Matrix & m, const std::vector<std::string> & columns) {
    std::string out;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        out += c ? "," : "";
        out += columns.empty() ? "c" + std::to_string(c) : columns.at(c);
    }
    out += "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out += c ? "," : "";
            out += csv_number(m(r, c));
        }
        out += "\n";
    }
    return out;
}

Matrix parse_matrix_csv(const std::string & text) {
    const auto lines = csv_lines(text);
    if (lines.empty()) {
        throw FormatError("CSV without header");
    }
    const std::size_t cols = split_csv_line(lines.front()).size();
    Matrix m(lines.size() - 1, cols);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split_csv_line(lines[r]);
        if (cells.size() != cols) {
            throw FormatError("CSV row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                              " cells, expected " + std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(r - 1, c) = parse_number(cells[c]);
        }
    }
    return m;
}

void save_batch(const fs::path & dir, const ActivationBatch & batch) {
    const std::size_t n = batch.size();
    if (batch.firings.rows() != n || batch.split.size() != n || (batch.labels && batch.labels->size() != n)) {
        throw FormatError("activation_batch: inconsistent row counts");
    }
    std::vector<std::string> dims, feats;
    for (std::size_t i = 0; i < batch.activations.cols(); ++i) {
        dims.push_back("a" + std::to_string(i));
    }
    for (std::size_t i = 0; i < batch.firings.cols(); ++i) {
        feats.push_back("f" + std::to_string(i));
    }
    write_text_atomic(dir / "activations.csv", matrix_csv(batch.activations, dims));
    write_text_atomic(dir / "firings.csv", matrix_csv(batch.firings, feats));
    std::string meta = "row,label,split\n";
    for (std::size_t r = 0; r < n; ++r) {
        meta += std::to_string(r) + "," + (batch.labels ? std::to_string((*batch.labels)[r]) : "") + "," +
                enum_to(batch.split[r], kSplits) + "\n";
    }
    write_text_atomic(dir / "meta.csv", meta);
    json body = {{"rows", n},
                 {"dim", batch.activations.cols()},
                 {"features", batch.firings.cols()},
                 {"labeled", batch.labels.has_value()},
                 {"files", {{"activations", "activations.csv"}, {"firings", "firings.csv"}, {"meta", "meta.csv"}}}};
    write_json(dir / "batch.json", wrap("activation_batch", body));
}

ActivationBatch load_batch(const fs::path & dir) {
    const json body = unwrap(read_json(dir / "batch.json"), "activation_batch");
    ActivationBatch batch;
    const auto n = body.at("rows").get<std::size_t>();
    const auto files = body.at("files");
    batch.activations = parse_matrix_csv(read_text(dir / files.at("activations").get<std::string>()));
    batch.firings = parse_matrix_csv(read_text(dir / files.at("firings").get<std::string>()));
    if (batch.activations.rows() != n || batch.firings.rows() != n ||
        batch.activations.cols() != body.at("dim").get<std::size_t>() ||
        batch.firings.cols() != body.at("features").get<std::size_t>()) {
        throw FormatError("activation_batch: CSV shape disagrees with batch.json");
    }
    const bool labeled = body.at("labeled").get<bool>();
    const auto lines = csv_lines(read_text(dir / files.at("meta").get<std::string>()));
    if (lines.size() != n + 1) {
        throw FormatError("activation_batch: meta.csv row count");
    }
    std::vector<int> labels;
    for (std::size_t r = 0; r < n; ++r) {
        const auto cells = split_csv_line(lines[r + 1]);
        if (cells.size() != 3) {
            throw FormatError("activation_batch: meta.csv row " + std::to_string(r));
        }
        if (labeled) {
            labels.push_back(static_cast<int>(parse_number(cells[1])));
        }
        batch.split.push_back(enum_from(json(cells[2]), kSplits));
    }
    if (labeled) {
        batch.labels = std::move(labels);
    }
    return batch;
}

std::string trace_csv(const TrainTrace & trace) {
    std::string out = "step,samples_seen,recon_mse,l1,l0,ev\n";
    for (const auto & c : trace.checkpoints) {
        out += std::to_string(c.step) + "," + std::to_string(c.samples_seen) + "," + csv_number(c.report.recon_mse) +
               "," + csv_number(c.report.sparsity_l1) + "," + csv_number(c.report.l0_mean) + "," +
               csv_number(c.report.explained_variance) + "\n";
    }
    return out;
}

std::string k_curve_csv(const std::vector<KSparsePoint> & curve) {
    std::string out = "class,k,f1\n";
    for (const auto & p : curve) {
        for (std::size_t c = 0; c < p.f1.size(); ++c) {
            out += std::to_string(c) + "," + std::to_string(p.k) + "," + csv_number(p.f1[c]) + "\n";
        }
    }
    return out;
}

std::string absorption_csv(const AbsorptionReport & report) {
    std::string out = "class,sample_id,top_latent,effect,runner_up_effect,cosine,projection_fraction,verdict\n";
    for (const auto & c : report.classes) {
        for (const auto & v : c.verdicts) {
            out += std::to_string(c.cls) + "," + std::to_string(v.sample) + "," + std::to_string(v.top_latent) + "," +
                   csv_number(v.top_effect) + "," + csv_number(v.runner_up_effect) + "," + csv_number(v.cosine) + "," +
                   csv_number(v.projection_fraction) + "," + (v.absorption ? "absorption" : "no_absorption") + "\n";
        }
    }
    return out;
}

}  // namespace absorb
