#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlfm/em_fit.hpp"
#include "mlfm/smw_inverse.hpp"
#include "mlfm/mlr_matrix.hpp"
#include "mlfm/synth_eval.hpp"

namespace mlfm {

/// Parsed hierarchy file: the contiguous partition, the rank allocation, and
/// the feature labels in raw (pre-permutation) order.
struct Hierarchy {
    HierarchicalPartition partition;
    RankAllocation ranks;
    std::vector<std::string> features;  // raw order; size n
};

/// Hierarchy JSON: `n`, `ranks` (length L, or L-1 with the trailing 1
/// implied), and either `levels` (arrays of contiguous group sizes) or
/// `assignments` (per-level group labels per feature in raw order, which
/// triggers contiguization). `features` optionally names the raw features;
/// defaults to f0..f{n-1}. All indices in files are 0-based.
Hierarchy read_hierarchy(const std::string& path);
Hierarchy hierarchy_from_json(const nlohmann::json& j);

/// Serialized model: schema version, partition (with permutation), ranks,
/// compressed factors, diagonal, optional covariate loadings, free-form
/// metadata. Round-trips byte-identically.
struct ModelFile {
    int schema_version = 1;
    HierarchicalPartition partition;
    RankAllocation ranks;
    CompressedForm compressed;
    std::optional<Matrix> b;  // n x p covariate loadings
    std::vector<std::string> features;  // raw order; may be empty
    nlohmann::json metadata = nlohmann::json::object();
};

void write_model(const std::string& path, const ModelFile& file);
ModelFile read_model(const std::string& path);
nlohmann::json model_to_json(const ModelFile& file);
ModelFile model_from_json(const nlohmann::json& j);

/// Rehydrate the covariance model from a model file.
PsdMlr model_from_file(const ModelFile& file);
ModelFile file_from_model(const PsdMlr& m, std::vector<std::string> features = {},
                          nlohmann::json metadata = nlohmann::json::object());

struct LoadedDataset {
    Dataset data;         // permuted to contiguous feature order
    Hierarchy hierarchy;
};

/// Ingest a CSV (header of feature labels, one sample per row) against a
/// hierarchy file; columns are matched by label and permuted to contiguous
/// order, so column order in the CSV does not matter.
LoadedDataset read_dataset(const std::string& data_path, const std::string& hierarchy_path);

/// Plain numeric CSV with a header; values use round-trippable %.17g.
void write_matrix_csv(const std::string& path, const Matrix& m,
                      const std::vector<std::string>& header);
Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* header = nullptr);

/// Synth config JSON: `levels`, `ranks`, `snr`, `n_samples`, `seed`.
SynthConfig read_synth_config(const std::string& path);

/// An inverse serializes through the same compressed layout as the model it
/// came from, with `factor_sign: -1` (its factors enter negatively), the
/// reciprocal diagonal in `d`, and the log determinant of the original Sigma.
nlohmann::json inverse_to_json(const InverseMlr& inv);

nlohmann::json compare_report_to_json(const CompareReport& report);

}  // namespace mlfm
