#include "mlfm/model_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mlfm {

using nlohmann::json;

namespace {

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid JSON in '" + path + "': " + e.what());
    }
    return j;
}

void save_json(const std::string& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("short write to '" + path + "'");
}

std::vector<std::string> default_labels(int n) {
    std::vector<std::string> out(n);
    for (int i = 0; i < n; ++i) out[i] = "f" + std::to_string(i);
    return out;
}

RankAllocation ranks_from_json(const json& j, int n_levels) {
    if (!j.is_array()) throw IoError("'ranks' must be an array");
    std::vector<int> ranks = j.get<std::vector<int>>();
    if (static_cast<int>(ranks.size()) == n_levels - 1) ranks.push_back(1);  // implied diagonal
    if (static_cast<int>(ranks.size()) != n_levels)
        throw IoError("'ranks' has " + std::to_string(ranks.size()) + " entries, expected " +
                      std::to_string(n_levels) + " (or one fewer with the trailing 1 implied)");
    return RankAllocation(std::move(ranks));
}

Matrix matrix_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw IoError(std::string(what) + " must be an array of arrays");
    const int rows = static_cast<int>(j.size());
    int cols = -1;
    Matrix m;
    for (int i = 0; i < rows; ++i) {
        const auto row = j[i].get<std::vector<double>>();
        if (cols < 0) {
            cols = static_cast<int>(row.size());
            m.resize(rows, cols);
        } else if (static_cast<int>(row.size()) != cols) {
            throw IoError(std::string(what) + ": ragged rows");
        }
        for (int c = 0; c < cols; ++c) m(i, c) = row[c];
    }
    if (rows == 0) m.resize(0, 0);
    return m;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

double parse_cell(const std::string& cell, int row, int col) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw IoError("non-numeric cell '" + cell + "' at data row " + std::to_string(row) +
                      ", column " + std::to_string(col));
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    out.push_back(cur);
    return out;
}

}  // namespace

Hierarchy hierarchy_from_json(const json& j) {
    if (!j.contains("n")) throw IoError("hierarchy: missing 'n'");
    const int n = j.at("n").get<int>();

    std::vector<std::string> features;
    if (j.contains("features")) {
        features = j.at("features").get<std::vector<std::string>>();
        if (static_cast<int>(features.size()) != n)
            throw IoError("hierarchy: 'features' length does not match n");
        std::map<std::string, int> seen;
        for (const auto& f : features)
            if (++seen[f] > 1) throw IoError("hierarchy: duplicated feature label '" + f + "'");
    } else {
        features = default_labels(n);
    }

    if (j.contains("levels") == j.contains("assignments"))
        throw IoError("hierarchy: exactly one of 'levels' or 'assignments' is required");

    if (j.contains("levels")) {
        auto sizes = j.at("levels").get<std::vector<std::vector<int>>>();
        HierarchicalPartition part(n, std::move(sizes));
        RankAllocation ranks = ranks_from_json(j.at("ranks"), part.levels());
        return Hierarchy{std::move(part), std::move(ranks), std::move(features)};
    }

    auto assignments = j.at("assignments").get<std::vector<std::vector<std::string>>>();
    HierarchicalPartition part = build_partition(n, assignments);
    RankAllocation ranks = ranks_from_json(j.at("ranks"), part.levels());
    return Hierarchy{std::move(part), std::move(ranks), std::move(features)};
}

Hierarchy read_hierarchy(const std::string& path) {
    return hierarchy_from_json(load_json(path));
}

json model_to_json(const ModelFile& file) {
    json j;
    j["schema_version"] = file.schema_version;
    j["n"] = file.partition.n();
    j["levels"] = file.partition.group_sizes();
    j["ranks"] = file.ranks.ranks();
    j["perm"] = file.partition.perm();
    j["fbar"] = matrix_to_json(file.compressed.fbar);
    j["d"] = std::vector<double>(file.compressed.d.data(),
                                 file.compressed.d.data() + file.compressed.d.size());
    if (file.b && file.b->size() > 0) j["b"] = matrix_to_json(*file.b);
    if (!file.features.empty()) j["features"] = file.features;
    j["metadata"] = file.metadata;
    return j;
}

ModelFile model_from_json(const json& j) {
    if (!j.contains("schema_version")) throw IoError("model: missing 'schema_version'");
    const int version = j.at("schema_version").get<int>();
    if (version != 1)
        throw IoError("model: unsupported schema_version " + std::to_string(version));
    const int n = j.at("n").get<int>();
    auto sizes = j.at("levels").get<std::vector<std::vector<int>>>();
    std::vector<int> perm;
    if (j.contains("perm")) perm = j.at("perm").get<std::vector<int>>();
    HierarchicalPartition part(n, std::move(sizes), std::move(perm));
    RankAllocation ranks = ranks_from_json(j.at("ranks"), part.levels());

    CompressedForm c;
    c.fbar = matrix_from_json(j.at("fbar"), "model 'fbar'");
    if (c.fbar.rows() == 0 && n > 0 && ranks.mlr_rank() == 1) c.fbar.resize(n, 0);
    auto d = j.at("d").get<std::vector<double>>();
    c.d = Eigen::Map<const Vector>(d.data(), static_cast<int>(d.size()));

    ModelFile file{1, std::move(part), std::move(ranks), std::move(c), std::nullopt, {}, {}};
    if (j.contains("b")) file.b = matrix_from_json(j.at("b"), "model 'b'");
    if (j.contains("features")) file.features = j.at("features").get<std::vector<std::string>>();
    if (j.contains("metadata")) file.metadata = j.at("metadata");
    return file;
}

void write_model(const std::string& path, const ModelFile& file) {
    save_json(path, model_to_json(file));
}

ModelFile read_model(const std::string& path) {
    return model_from_json(load_json(path));
}

PsdMlr model_from_file(const ModelFile& file) {
    return PsdMlr::unpack_compressed(file.partition, file.ranks, file.compressed);
}

ModelFile file_from_model(const PsdMlr& m, std::vector<std::string> features, json metadata) {
    return ModelFile{1, m.partition(), m.ranks(), m.pack_compressed(), std::nullopt,
                     std::move(features), std::move(metadata)};
}

LoadedDataset read_dataset(const std::string& data_path, const std::string& hierarchy_path) {
    Hierarchy hier = read_hierarchy(hierarchy_path);
    std::vector<std::string> header;
    Matrix raw = read_matrix_csv(data_path, &header);
    if (raw.rows() < 1) throw IoError("N must be >= 1 (no data rows in '" + data_path + "')");

    std::map<std::string, int> hier_index;  // label -> raw feature index
    for (int i = 0; i < static_cast<int>(hier.features.size()); ++i)
        hier_index[hier.features[i]] = i;

    if (static_cast<int>(header.size()) != hier.partition.n())
        throw IoError("dataset has " + std::to_string(header.size()) + " columns, hierarchy has " +
                      std::to_string(hier.partition.n()) + " features");

    std::map<std::string, int> seen;
    Matrix y(raw.rows(), hier.partition.n());
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& label = header[c];
        if (++seen[label] > 1)
            throw IoError("duplicated feature label '" + label + "' in dataset column " +
                          std::to_string(c));
        auto it = hier_index.find(label);
        if (it == hier_index.end())
            throw IoError("feature label '" + label + "' (dataset column " + std::to_string(c) +
                          ") is unknown in the hierarchy");
        y.col(hier.partition.perm()[it->second]) = raw.col(c);
    }
    return LoadedDataset{Dataset{std::move(y), std::nullopt}, std::move(hier)};
}

void write_matrix_csv(const std::string& path, const Matrix& m,
                      const std::vector<std::string>& header) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < header.size(); ++i)
        os << (i ? "," : "") << header[i];
    os << '\n';
    char buf[40];
    for (int i = 0; i < m.rows(); ++i) {
        for (int c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, c));
            os << (c ? "," : "") << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

Matrix read_matrix_csv(const std::string& path, std::vector<std::string>* header) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw IoError("'" + path + "' is empty");
    auto head = split_csv_line(line);
    if (header) *header = head;
    const int cols = static_cast<int>(head.size());

    std::vector<double> values;
    int rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != cols)
            throw IoError("data row " + std::to_string(rows) + " has " +
                          std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(cols));
        for (int c = 0; c < cols; ++c) values.push_back(parse_cell(cells[c], rows, c));
        ++rows;
    }
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) m(i, c) = values[static_cast<std::size_t>(i) * cols + c];
    return m;
}

SynthConfig read_synth_config(const std::string& path) {
    json j = load_json(path);
    if (!j.contains("levels")) throw IoError("synth config: missing 'levels'");
    auto sizes = j.at("levels").get<std::vector<std::vector<int>>>();
    int n = 0;
    for (int v : sizes.front()) n += v;
    HierarchicalPartition part(n, std::move(sizes));
    RankAllocation ranks = ranks_from_json(j.at("ranks"), part.levels());
    SynthConfig cfg{std::move(part), std::move(ranks)};
    if (j.contains("snr")) cfg.snr = j.at("snr").get<double>();
    if (j.contains("n_samples")) cfg.n_samples = j.at("n_samples").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

json inverse_to_json(const InverseMlr& inv) {
    const HierarchicalPartition& part = inv.partition();
    const RankAllocation& ranks = inv.ranks();
    Matrix hbar = Matrix::Zero(part.n(), ranks.mlr_rank() - 1);
    for (int l = 0; l + 1 < part.levels(); ++l) {
        const int w = ranks.level_rank(l);
        if (w == 0) continue;
        for (int k = 0; k < part.num_groups(l); ++k)
            hbar.block(part.group_offset(l, k), ranks.compressed_offset(l),
                       part.group_size(l, k), w) = inv.hfactor(l, k);
    }
    json j;
    j["schema_version"] = 1;
    j["n"] = part.n();
    j["levels"] = part.group_sizes();
    j["ranks"] = ranks.ranks();
    j["perm"] = part.perm();
    j["fbar"] = matrix_to_json(hbar);
    j["d"] = std::vector<double>(inv.dinv().data(), inv.dinv().data() + inv.dinv().size());
    j["factor_sign"] = -1;
    j["logdet_sigma"] = inv.logdet();
    return j;
}

json compare_report_to_json(const CompareReport& report) {
    json j;
    j["baseline"] = "frobenius_sweep";  // ell_frob column: single-sweep initializer, no EM
    j["trials"] = report.trials.size();
    j["mean_diff"] = report.mean_diff;
    j["std_diff"] = report.std_diff;
    j["fraction_positive"] = report.fraction_positive;
    return j;
}

}  // namespace mlfm
