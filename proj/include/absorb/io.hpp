#pragma once

// JSON and CSV persistence. Every JSON document carries {"format": kind,
// "version": N}; loaders reject other kinds and versions.

#include "absorb/analysis.hpp"
#include "absorb/probes.hpp"
#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"
#include "absorb/theory.hpp"
#include "absorb/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace absorb {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// Wrong kind or version, malformed file, unreadable or unwritable path.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void to_json(json & j, const Matrix & m);
void from_json(const json & j, Matrix & m);
void to_json(json & j, const FeatureDictionary & d);
void from_json(const json & j, FeatureDictionary & d);
void to_json(json & j, const HierarchyEdge & e);
void from_json(const json & j, HierarchyEdge & e);
void to_json(json & j, const FiringSpec & s);
void from_json(const json & j, FiringSpec & s);
void to_json(json & j, const SubFeature & s);
void from_json(const json & j, SubFeature & s);
void to_json(json & j, const ClassTask & t);
void from_json(const json & j, ClassTask & t);
void to_json(json & j, const Nonlinearity & n);
void from_json(const json & j, Nonlinearity & n);
void to_json(json & j, const SaeModel & m);
void from_json(const json & j, SaeModel & m);
void to_json(json & j, const LossReport & r);
void from_json(const json & j, LossReport & r);
void to_json(json & j, const SaeShape & s);
void from_json(const json & j, SaeShape & s);
void to_json(json & j, const TrainConfig & c);
void from_json(const json & j, TrainConfig & c);
void to_json(json & j, const ProbeConfig & c);
void from_json(const json & j, ProbeConfig & c);
void to_json(json & j, const ProbeModel & p);
void from_json(const json & j, ProbeModel & p);
void to_json(json & j, const ClassEval & e);
void to_json(json & j, const EvalReport & r);
void to_json(json & j, const KSparseSettings & s);
void from_json(const json & j, KSparseSettings & s);
void to_json(json & j, const AltMetricConfig & c);
void from_json(const json & j, AltMetricConfig & c);
void to_json(json & j, const AbsorptionConfig & c);
void from_json(const json & j, AbsorptionConfig & c);
void to_json(json & j, const SampleVerdict & v);
void from_json(const json & j, SampleVerdict & v);
void to_json(json & j, const ClassAbsorption & c);
void from_json(const json & j, ClassAbsorption & c);
void to_json(json & j, const AbsorptionReport & r);
void from_json(const json & j, AbsorptionReport & r);
void to_json(json & j, const SplitResult & s);
void from_json(const json & j, SplitResult & s);
void to_json(json & j, const TheoryReport & r);

json wrap(std::string_view kind, json body);
// Returns the body; throws FormatError on a kind or version mismatch.
json unwrap(const json & doc, std::string_view kind);

template <class T>
json document(std::string_view kind, const T & value) {
    return wrap(kind, json(value));
}

template <class T>
T from_document(const json & doc, std::string_view kind) {
    try {
        return unwrap(doc, kind).get<T>();
    } catch (const json::exception & e) {
        throw FormatError(std::string(kind) + ": " + e.what());
    }
}

// Pretty-printed with a trailing newline.
std::string dump_json(const json & j);
json read_json(const std::filesystem::path & path);
// Writes to a sibling temp file, then renames.
void write_text_atomic(const std::filesystem::path & path, const std::string & content);
void write_json(const std::filesystem::path & path, const json & j);

// Lossless rendering, %.17g.
std::string csv_number(double v);

// One matrix row per CSV line, header from `columns` (or c0, c1, ...).
std::string matrix_csv(const Matrix & m, const std::vector<std::string> & columns = {});
Matrix parse_matrix_csv(const std::string & text);

// batch.json header plus activations.csv, firings.csv and meta.csv in `dir`.
void save_batch(const std::filesystem::path & dir, const ActivationBatch & batch);
ActivationBatch load_batch(const std::filesystem::path & dir);

std::string trace_csv(const TrainTrace & trace);
std::string k_curve_csv(const std::vector<KSparsePoint> & curve);
std::string absorption_csv(const AbsorptionReport & report);

}  // namespace absorb
