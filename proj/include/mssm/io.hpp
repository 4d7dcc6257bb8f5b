#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mssm/types.hpp"

namespace mssm {

/// RFC-4180 CSV writer: quoted fields where needed, CRLF line endings,
/// floats at 17 significant digits.
void write_csv(const std::filesystem::path& path, const Matrix& data,
               const std::vector<std::string>& header = {});

/// Strict RFC-4180 reader. A non-numeric first record is treated as a
/// header; ragged or malformed rows raise std::runtime_error.
Matrix read_csv(const std::filesystem::path& path,
                std::vector<std::string>* header_out = nullptr);

/// Row-oriented writer for mixed text/numeric tables.
void write_csv_rows(const std::filesystem::path& path,
                    const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);

/// 17-significant-digit float formatting shared by all CSV output.
std::string csv_double(double v);

struct ParamsFile {
  ModelSpec spec;
  ThetaParams theta;
  std::uint64_t seed = 0;
  std::optional<Vector> dwell;  // dwell times recorded by `fit`
  std::optional<int> T;         // series length behind the estimate
};

/// params.json schema: {spec, theta, constraints, meta{seed, version, ...}},
/// matrices as row-major nested arrays.
void write_params(const std::filesystem::path& path, const ParamsFile& params);
ParamsFile read_params(const std::filesystem::path& path);

std::string kind_to_string(ModelKind kind);
ModelKind kind_from_string(const std::string& s);

}  // namespace mssm
