#include "mssm/io.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace mssm {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\r\n") != std::string::npos;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    out += ch;
    if (ch == '"') out += '"';
  }
  out += '"';
  return out;
}

/// One RFC-4180 record; handles quoted fields and CRLF. Returns false at EOF.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false, any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      if (!field.empty())
        throw std::runtime_error("CSV: quote inside unquoted field");
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      fields.push_back(std::move(field));
      return true;
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      field += c;
    }
  }
  if (in_quotes) throw std::runtime_error("CSV: unterminated quoted field");
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

json matrix_to_json(const Matrix& X) {  // row-major nested arrays
  json rows = json::array();
  for (int i = 0; i < X.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < X.cols(); ++c) row.push_back(X(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) return Matrix(0, 0);
  const int nr = static_cast<int>(rows.size());
  const int nc = static_cast<int>(rows[0].size());
  Matrix X(nr, nc);
  for (int i = 0; i < nr; ++i) {
    if (static_cast<int>(rows[i].size()) != nc)
      throw std::runtime_error("params.json: ragged matrix");
    for (int c = 0; c < nc; ++c) X(i, c) = rows[i][c].get<double>();
  }
  return X;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const json& arr) {
  Vector v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v(static_cast<int>(i)) = arr[i].get<double>();
  return v;
}

}  // namespace

std::string kind_to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Dyn: return "dyn";
    case ModelKind::Var: return "var";
    case ModelKind::Obs: return "obs";
  }
  return "dyn";
}

ModelKind kind_from_string(const std::string& s) {
  if (s == "dyn") return ModelKind::Dyn;
  if (s == "var") return ModelKind::Var;
  if (s == "obs") return ModelKind::Obs;
  throw std::runtime_error("unknown model kind: " + s);
}

void write_csv(const std::filesystem::path& path, const Matrix& data,
               const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  if (!header.empty()) {
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) out << ',';
      out << (needs_quoting(header[i]) ? quote(header[i]) : header[i]);
    }
    out << "\r\n";
  }
  for (int i = 0; i < data.rows(); ++i) {
    for (int c = 0; c < data.cols(); ++c) {
      if (c) out << ',';
      out << format_double(data(i, c));
    }
    out << "\r\n";
  }
}

std::string csv_double(double v) { return format_double(v); }

void write_csv_rows(const std::filesystem::path& path,
                    const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  auto write_row = [&out](const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out << ',';
      out << (needs_quoting(fields[i]) ? quote(fields[i]) : fields[i]);
    }
    out << "\r\n";
  };
  if (!header.empty()) write_row(header);
  for (const auto& row : rows) write_row(row);
}

Matrix read_csv(const std::filesystem::path& path,
                std::vector<std::string>* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::vector<std::string> fields;
  size_t width = 0;
  bool first = true;
  if (header_out) header_out->clear();

  while (read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (size_t i = 0; i < fields.size() && numeric; ++i)
      numeric = parse_double(fields[i], row[i]);
    if (first) {
      first = false;
      width = fields.size();
      if (!numeric) {
        if (header_out) *header_out = fields;
        continue;
      }
    }
    if (!numeric)
      throw std::runtime_error("CSV: non-numeric data row in " + path.string());
    if (fields.size() != width)
      throw std::runtime_error("CSV: ragged row in " + path.string());
    rows.push_back(std::move(row));
  }
  Matrix X(rows.size(), width);
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t c = 0; c < width; ++c)
      X(static_cast<int>(i), static_cast<int>(c)) = rows[i][c];
  return X;
}

void write_params(const std::filesystem::path& path, const ParamsFile& p) {
  json j;
  j["spec"] = {{"kind", kind_to_string(p.spec.kind)}, {"M", p.spec.M},
               {"p", p.spec.p},                       {"r", p.spec.r},
               {"N", p.spec.N}};

  json theta;
  json A = json::array();
  for (int jr = 0; jr < p.spec.M; ++jr) {
    json lags = json::array();
    for (int l = 0; l < p.spec.p; ++l) lags.push_back(matrix_to_json(p.theta.A[jr][l]));
    A.push_back(std::move(lags));
  }
  theta["A"] = std::move(A);
  json C = json::array(), Q = json::array(), R = json::array(), mu = json::array(),
       Sigma = json::array();
  for (int jr = 0; jr < p.spec.M; ++jr) {
    C.push_back(matrix_to_json(p.theta.C[jr]));
    Q.push_back(matrix_to_json(p.theta.Q[jr]));
    R.push_back(matrix_to_json(p.theta.R[jr]));
    mu.push_back(vector_to_json(p.theta.mu[jr]));
    Sigma.push_back(matrix_to_json(p.theta.Sigma[jr]));
  }
  theta["C"] = std::move(C);
  theta["Q"] = std::move(Q);
  theta["R"] = std::move(R);
  theta["mu"] = std::move(mu);
  theta["Sigma"] = std::move(Sigma);
  theta["pi"] = vector_to_json(p.theta.pi);
  theta["Z"] = matrix_to_json(p.theta.Z);
  j["theta"] = std::move(theta);

  const ConstraintSet& c = p.spec.constraints;
  json cons;
  cons["diag_Q"] = c.diag_Q;
  cons["diag_R"] = c.diag_R;
  cons["diag_Sigma"] = c.diag_Sigma;
  cons["stable_A"] = c.stable_A;
  cons["stability_margin"] = c.stability_margin;
  json eq = json::array();
  for (ParamField f : c.equal_across_regimes) {
    const char* names[] = {"A", "C", "Q", "Sigma", "mu"};
    eq.push_back(names[static_cast<int>(f)]);
  }
  cons["equal_across_regimes"] = std::move(eq);
  if (c.fixed_A) {
    cons["fixed_A"] = {{"mask", matrix_to_json(c.fixed_A->mask.cast<double>())},
                       {"values", matrix_to_json(c.fixed_A->values)}};
  }
  if (c.fixed_C) {
    cons["fixed_C"] = {{"mask", matrix_to_json(c.fixed_C->mask.cast<double>())},
                       {"values", matrix_to_json(c.fixed_C->values)}};
  }
  if (c.scale_C) cons["scale_C"] = vector_to_json(*c.scale_C);
  j["constraints"] = std::move(cons);

  json meta;
  meta["seed"] = p.seed;
  meta["version"] = 1;
  if (p.dwell) meta["dwell"] = vector_to_json(*p.dwell);
  if (p.T) meta["T"] = *p.T;
  j["meta"] = std::move(meta);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

ParamsFile read_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;

  ParamsFile p;
  p.spec.kind = kind_from_string(j.at("spec").at("kind").get<std::string>());
  p.spec.M = j.at("spec").at("M").get<int>();
  p.spec.p = j.at("spec").at("p").get<int>();
  p.spec.r = j.at("spec").at("r").get<int>();
  p.spec.N = j.at("spec").at("N").get<int>();

  const json& theta = j.at("theta");
  p.theta = make_theta_shell(p.spec);
  for (int jr = 0; jr < p.spec.M; ++jr) {
    for (int l = 0; l < p.spec.p; ++l)
      p.theta.A[jr][l] = matrix_from_json(theta.at("A").at(jr).at(l));
    p.theta.C[jr] = matrix_from_json(theta.at("C").at(jr));
    p.theta.Q[jr] = matrix_from_json(theta.at("Q").at(jr));
    p.theta.R[jr] = matrix_from_json(theta.at("R").at(jr));
    p.theta.mu[jr] = vector_from_json(theta.at("mu").at(jr));
    p.theta.Sigma[jr] = matrix_from_json(theta.at("Sigma").at(jr));
  }
  p.theta.pi = vector_from_json(theta.at("pi"));
  p.theta.Z = matrix_from_json(theta.at("Z"));

  if (j.contains("constraints")) {
    const json& cons = j["constraints"];
    ConstraintSet& c = p.spec.constraints;
    c.diag_Q = cons.value("diag_Q", false);
    c.diag_R = cons.value("diag_R", false);
    c.diag_Sigma = cons.value("diag_Sigma", false);
    c.stable_A = cons.value("stable_A", false);
    c.stability_margin = cons.value("stability_margin", 0.02);
    if (cons.contains("equal_across_regimes")) {
      for (const auto& name : cons["equal_across_regimes"]) {
        std::string s = name.get<std::string>();
        if (s == "A") c.equal_across_regimes.insert(ParamField::A);
        else if (s == "C") c.equal_across_regimes.insert(ParamField::C);
        else if (s == "Q") c.equal_across_regimes.insert(ParamField::Q);
        else if (s == "Sigma") c.equal_across_regimes.insert(ParamField::Sigma);
        else if (s == "mu") c.equal_across_regimes.insert(ParamField::Mu);
      }
    }
    auto read_mask = [&](const char* key) -> std::optional<FixedMask> {
      if (!cons.contains(key)) return std::nullopt;
      FixedMask f;
      f.mask = matrix_from_json(cons[key].at("mask")).cast<int>();
      f.values = matrix_from_json(cons[key].at("values"));
      return f;
    };
    c.fixed_A = read_mask("fixed_A");
    c.fixed_C = read_mask("fixed_C");
    if (cons.contains("scale_C")) c.scale_C = vector_from_json(cons["scale_C"]);
  }

  if (j.contains("meta")) {
    p.seed = j["meta"].value("seed", 0ULL);
    if (j["meta"].contains("dwell")) p.dwell = vector_from_json(j["meta"]["dwell"]);
    if (j["meta"].contains("T")) p.T = j["meta"]["T"].get<int>();
  }
  return p;
}

}  // namespace mssm
